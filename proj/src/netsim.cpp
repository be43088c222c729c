#include "rdmacc/netsim.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace rdmacc {

void LatencyModel::validate() const {
  // All costs are unsigned; nothing further to check today, but keep the
  // hook so configuration errors surface at load time rather than mid-run.
}

VerbRequest VerbRequest::read(std::uint64_t off, std::uint32_t len) {
  VerbRequest r;
  r.kind = VerbKind::kRead;
  r.offset = off;
  r.len = len;
  return r;
}

VerbRequest VerbRequest::write(std::uint64_t off, Bytes payload) {
  VerbRequest r;
  r.kind = VerbKind::kWrite;
  r.offset = off;
  r.len = static_cast<std::uint32_t>(payload.size());
  r.payload = std::move(payload);
  return r;
}

VerbRequest VerbRequest::cas(std::uint64_t off, std::uint64_t expected, std::uint64_t desired) {
  VerbRequest r;
  r.kind = VerbKind::kCas;
  r.offset = off;
  r.len = 8;
  r.expected = expected;
  r.desired = desired;
  return r;
}

VerbRequest VerbRequest::faa(std::uint64_t off, std::uint64_t delta) {
  VerbRequest r;
  r.kind = VerbKind::kFaa;
  r.offset = off;
  r.len = 8;
  r.delta = delta;
  return r;
}

void RpcReplier::reply(Bytes payload) const {
  if (sim_ == nullptr) throw ProtocolError("reply on empty replier");
  sim_->schedule(sim_->now() + (sim_->config().latency.rpc_rt + 1) / 2, TaskId{},
                 [t = ticket_, p = std::move(payload)]() mutable { t.fulfill(std::move(p)); });
}

Simulator::Simulator(SimConfig cfg) : cfg_(cfg) {
  if (cfg_.nodes == 0) throw ConfigError("cluster must have at least one node");
  cfg_.latency.validate();
  mem_.resize(cfg_.nodes);
}

Simulator::~Simulator() = default;

Region Simulator::register_region(NodeId node, std::uint64_t len) {
  if (node >= cfg_.nodes) throw ConfigError("register_region: unknown node");
  if (len == 0) throw ConfigError("register_region: empty region");
  auto& m = mem_[node];
  std::uint64_t base = (m.allocated + 7) & ~std::uint64_t{7};
  if (base + len > cfg_.node_capacity)
    throw ConfigError("register_region: node capacity exceeded");
  m.allocated = base + len;
  m.arena.resize(m.allocated, 0);
  return Region{node, base, len};
}

std::uint64_t Simulator::registered_bytes(NodeId node) const { return mem_[node].allocated; }

void Simulator::check_bounds(NodeId node, std::uint64_t off, std::uint64_t len) const {
  if (node >= cfg_.nodes || off + len > mem_[node].allocated)
    throw ConfigError("memory access outside registered regions");
}

Bytes Simulator::load_bytes(NodeId node, std::uint64_t off, std::uint64_t len) const {
  check_bounds(node, off, len);
  const auto& a = mem_[node].arena;
  return Bytes(a.begin() + static_cast<std::ptrdiff_t>(off),
               a.begin() + static_cast<std::ptrdiff_t>(off + len));
}

std::uint64_t Simulator::load_u64(NodeId node, std::uint64_t off) const {
  check_bounds(node, off, 8);
  std::uint64_t v;
  std::memcpy(&v, mem_[node].arena.data() + off, 8);
  return v;
}

void Simulator::store_bytes(NodeId node, std::uint64_t off, std::span<const std::uint8_t> data) {
  check_bounds(node, off, data.size());
  auto* dst = mem_[node].arena.data() + off;
  if (std::memcmp(dst, data.data(), data.size()) == 0) return;
  std::memcpy(dst, data.data(), data.size());
  notify_watchers(node, off, data.size());
}

void Simulator::store_u64(NodeId node, std::uint64_t off, std::uint64_t value) {
  std::uint8_t buf[8];
  std::memcpy(buf, &value, 8);
  store_bytes(node, off, std::span<const std::uint8_t>(buf, 8));
}

std::uint64_t Simulator::cas_u64(NodeId node, std::uint64_t off, std::uint64_t expected,
                                 std::uint64_t desired) {
  check_bounds(node, off, 8);
  if (off % 8 != 0) throw ConfigError("CAS target must be 8-byte aligned");
  std::uint64_t old = load_u64(node, off);
  if (old == expected) store_u64(node, off, desired);
  return old;
}

std::uint64_t Simulator::faa_u64(NodeId node, std::uint64_t off, std::uint64_t delta) {
  check_bounds(node, off, 8);
  if (off % 8 != 0) throw ConfigError("FAA target must be 8-byte aligned");
  std::uint64_t old = load_u64(node, off);
  store_u64(node, off, old + delta);
  return old;
}

void Simulator::notify_watchers(NodeId node, std::uint64_t off, std::uint64_t len) {
  auto& ws = mem_[node].watchers;
  std::vector<Watcher> fired;
  for (std::size_t i = 0; i < ws.size();) {
    const bool hit = ws[i].off < off + len && off < ws[i].off + ws[i].len;
    if (hit) {
      fired.push_back(std::move(ws[i]));
      ws.erase(ws.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  for (auto& w : fired) schedule(now_, w.waiter, std::move(w.cb));
}

void Simulator::watch_memory(NodeId node, std::uint64_t off, std::uint64_t len, TaskId waiter,
                             std::function<void()> cb) {
  check_bounds(node, off, len);
  mem_[node].watchers.push_back(Watcher{off, len, waiter, std::move(cb)});
}

BatchTicket Simulator::post_batch(TaskId src, DoorbellBatch batch) {
  if (batch.requests.empty()) throw ConfigError("post_batch: empty batch");
  if (batch.dst >= cfg_.nodes) throw ConfigError("post_batch: unknown destination");
  batch.requests.back().signaled = true;
  ++round_trips_;
  ++batches_;

  const auto& lat = cfg_.latency;
  SimTime extra = lat.per_verb_overhead * (batch.requests.size() - 1);
  SimTime t_apply = now_ + lat.one_sided_rt / 2;
  SimTime back_leg = lat.one_sided_rt - lat.one_sided_rt / 2 + extra;

  BatchTicket ticket;
  schedule(t_apply, src, [this, src, back_leg, b = std::move(batch), ticket]() mutable {
    BatchResult res;
    apply_batch(b.dst, b, res);
    schedule(now_ + back_leg, src,
             [ticket, r = std::move(res)]() mutable { ticket.fulfill(std::move(r)); });
  });
  return ticket;
}

void Simulator::apply_batch(NodeId dst, const DoorbellBatch& batch, BatchResult& out) {
  auto& m = mem_[dst];
  std::uint64_t lo = UINT64_MAX, hi = 0;
  for (std::size_t i = 0; i < batch.requests.size(); ++i) {
    const auto& req = batch.requests[i];
    out.results.emplace_back();
    auto& res = out.results.back();
    const bool atomic = req.kind == VerbKind::kCas || req.kind == VerbKind::kFaa;
    if (req.len == 0 || req.offset + req.len > m.allocated || (atomic && (req.offset % 8 != 0 || req.len != 8))) {
      out.fault = true;
      out.fault_index = i;
      break;  // the QP enters an error state: later requests do not execute
    }
    auto* cell = m.arena.data() + req.offset;
    switch (req.kind) {
      case VerbKind::kRead:
        res.data.assign(cell, cell + req.len);
        break;
      case VerbKind::kWrite:
        std::memcpy(cell, req.payload.data(), req.len);
        lo = std::min(lo, req.offset);
        hi = std::max(hi, req.offset + req.len);
        break;
      case VerbKind::kCas: {
        std::uint64_t old;
        std::memcpy(&old, cell, 8);
        res.old_value = old;
        if (old == req.expected) {
          std::memcpy(cell, &req.desired, 8);
          lo = std::min(lo, req.offset);
          hi = std::max(hi, req.offset + 8);
        }
        break;
      }
      case VerbKind::kFaa: {
        std::uint64_t old;
        std::memcpy(&old, cell, 8);
        res.old_value = old;
        std::uint64_t next = old + req.delta;
        std::memcpy(cell, &next, 8);
        lo = std::min(lo, req.offset);
        hi = std::max(hi, req.offset + 8);
        break;
      }
    }
  }
  if (lo < hi) notify_watchers(dst, lo, hi - lo);
}

RpcTicket Simulator::rpc_call(TaskId src, NodeId dst, HandlerId handler, Bytes payload) {
  if (dst >= cfg_.nodes) throw ConfigError("rpc_call: unknown destination");
  auto it = handlers_.find(handler);
  if (it == handlers_.end())
    throw ProtocolError("rpc_call: no handler registered for id " + std::to_string(handler));
  ++round_trips_;
  ++rpcs_;

  const auto& lat = cfg_.latency;
  SimTime t_handle = now_ + lat.rpc_rt / 2;
  SimTime back_leg = lat.rpc_rt - lat.rpc_rt / 2;

  RpcTicket ticket;
  RpcHandler& fn = it->second;
  schedule(t_handle, src, [this, &fn, dst, src, back_leg, ticket, p = std::move(payload)]() mutable {
    RpcContext ctx{*this, dst, src, std::span<const std::uint8_t>(p.data(), p.size()),
                   RpcReplier(this, ticket)};
    std::optional<Bytes> reply = fn(ctx);
    if (reply.has_value()) {
      schedule(now_ + back_leg, src,
               [ticket, r = std::move(*reply)]() mutable { ticket.fulfill(std::move(r)); });
    }
  });
  return ticket;
}

void Simulator::register_handler(HandlerId id, RpcHandler fn) {
  handlers_[id] = std::move(fn);
}

void Simulator::schedule(SimTime t, TaskId src, std::function<void()> fn) {
  queue_.push(Event{t, src, seq_++, std::move(fn)});
}

void Simulator::note_wait(TaskId who, std::string what) {
  if (auto* t = find_task(who)) t->last_wait = std::move(what);
}

Simulator::RootTask* Simulator::find_task(TaskId id) {
  for (auto& t : tasks_)
    if (t->id == id) return t.get();
  return nullptr;
}

void Simulator::spawn(TaskId id, Task<void> task) {
  if (running_) throw ConfigError("spawn after the simulation started");
  if (id.node >= cfg_.nodes || id.thread >= cfg_.threads || id.coro >= cfg_.coros)
    throw ConfigError("spawn: task id outside the cluster shape");
  auto root = std::make_unique<RootTask>();
  root->id = id;
  root->task = std::move(task);
  RootTask* raw = root.get();
  tasks_.push_back(std::move(root));
  schedule(now_, id, [raw]() { raw->task.start(); });
}

SimReport Simulator::run_until_quiescent() {
  running_ = true;
  while (!queue_.empty()) {
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    now_ = ev.time;
    ++events_run_;
    if (auto* t = find_task(ev.src)) ++t->resumes;
    if (cfg_.trace)
      trace_.push_back("t=" + std::to_string(now_) + " src=" + to_string(ev.src));
    ev.fn();
  }
  running_ = false;

  std::string blocked;
  for (auto& t : tasks_) {
    t->task.rethrow_if_failed();
    if (!t->task.done())
      blocked += "  " + to_string(t->id) + " waiting on: " + t->last_wait + "\n";
  }
  if (!blocked.empty())
    throw DeadlockError("no runnable task but waits are pending:\n" + blocked);

  SimReport rep;
  rep.end_time = now_;
  rep.events = events_run_;
  rep.round_trips = round_trips_;
  rep.batches = batches_;
  rep.rpcs = rpcs_;
  for (auto& t : tasks_)
    rep.tasks.push_back(TaskStat{t->id, t->task.done(), t->resumes, t->last_wait});
  return rep;
}

std::string SimReport::to_string() const {
  std::ostringstream os;
  os << "end_time=" << end_time << " events=" << events << " round_trips=" << round_trips
     << " batches=" << batches << " rpcs=" << rpcs << "\n";
  for (const auto& t : tasks)
    os << rdmacc::to_string(t.id) << " done=" << t.done << " events=" << t.resumes << "\n";
  return os.str();
}

}  // namespace rdmacc
