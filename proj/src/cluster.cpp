#include "rdmacc/cluster.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

SimConfig sim_config(const ClusterConfig& cfg) {
  SimConfig sc;
  sc.nodes = cfg.nodes;
  sc.threads = cfg.threads;
  sc.coros = cfg.coros;
  sc.latency = cfg.latency;
  sc.node_capacity = cfg.node_capacity;
  sc.trace = cfg.trace;
  return sc;
}

void install_common_handlers(Cluster& cl) {
  cl.sim.register_handler(kHEcho, [](RpcContext& ctx) -> std::optional<Bytes> {
    return Bytes(ctx.payload.begin(), ctx.payload.end());
  });
  cl.sim.register_handler(kHLogAppend, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    std::uint64_t off = r.u64();
    Bytes body = r.bytes(r.remaining());
    cl.sim.store_bytes(ctx.node, off, body);
    return Bytes{};
  });
  cl.sim.register_handler(kHLogReclaim, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ++cl.nodes[ctx.node].reclaim_notices;  // entries are reclaimed lazily; rings wrap
    return Bytes{};
  });
  cl.sim.register_handler(kHUnlock, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    std::uint64_t off = r.u64();
    std::uint64_t ts = r.u64();
    cl.sim.cas_u64(ctx.node, off, ts, 0);  // release only if still ours
    return Bytes{};
  });
}

}  // namespace

Cluster::Cluster(ClusterConfig c, std::vector<TableSpec> tables,
                 const std::function<Bytes(TableId, Key)>& initial_record)
    : cfg(c), sim(sim_config(c)), store(sim, c.version_slots) {
  if (cfg.replicas == 0 || cfg.replicas > cfg.nodes)
    throw ConfigError("replicas must be in [1, nodes]");
  for (const auto& t : tables) store.add_table(t);
  store.finalize(initial_record);
  nodes.resize(cfg.nodes);
  for (NodeId n = 0; n < cfg.nodes; ++n)
    nodes[n].log_base =
        sim.register_region(n, std::uint64_t(lane_count()) * cfg.log_ring_bytes).base;
  install_common_handlers(*this);
}

std::vector<NodeId> Cluster::backups_of(NodeId primary) const {
  std::vector<NodeId> out;
  for (std::uint32_t r = 1; r < cfg.replicas; ++r)
    out.push_back(static_cast<NodeId>((primary + r) % cfg.nodes));
  return out;
}

TupleRef Cluster::tuple_ref(TableId t, Key k, const Located& loc) const {
  return TupleRef{loc.node, loc.offset, t, k, &store.layout(t)};
}

TupleRef Cluster::local_tuple_ref(TableId t, Key k) const {
  return TupleRef{store.owner(t, k), store.tuple_offset(t, k), t, k, &store.layout(t)};
}

void Cluster::warm_caches(std::vector<Coordinator*> coordinators,
                          const std::vector<TxnSpec>& txns) {
  auto warm = [&](Coordinator& co, FullKey k) {
    if (store.owner(k.table, k.key) != co.node)
      co.cache.map.emplace(k, store.tuple_offset(k.table, k.key));
  };
  for (const auto& spec : txns) {
    for (auto* co : coordinators) {
      if (co->id == spec.arrival) {
        for (auto k : spec.rs) warm(*co, k);
        for (auto k : spec.ws) warm(*co, k);
      }
    }
  }
}

Coordinator::Coordinator(Cluster& cluster, TaskId task)
    : cl(cluster),
      id(task),
      node(task.node),
      clock(task.node, task.thread, task.coro) {}

Task<BatchResult> Coordinator::batch(TxnContext* ctx, DoorbellBatch b) {
  if (ctx) ++ctx->round_trips;
  BatchResult r = co_await cl.sim.await_ticket(id, cl.sim.post_batch(id, std::move(b)), "batch");
  co_return r;
}

Task<Bytes> Coordinator::rpc(TxnContext* ctx, NodeId dst, HandlerId h, Bytes payload) {
  if (ctx) ++ctx->round_trips;
  Bytes r = co_await cl.sim.await_ticket(id, cl.sim.rpc_call(id, dst, h, std::move(payload)),
                                         "rpc");
  co_return r;
}

Task<void> Coordinator::local_op(TxnContext* ctx) {
  SimTime t0 = cl.sim.now();
  co_await cl.sim.delay(id, cl.cfg.latency.local_op);
  if (ctx) ctx->local_time += cl.sim.now() - t0;
}

Task<void> Coordinator::compute(TxnContext* ctx, SimTime t) {
  if (t == 0) co_return;
  SimTime t0 = cl.sim.now();
  co_await cl.sim.delay(id, t);
  if (ctx) ctx->local_time += cl.sim.now() - t0;
}

Task<Located> Coordinator::locate(TxnContext* ctx, TableId t, Key k) {
  std::uint64_t trips = 0;
  Located loc = co_await cl.store.resolve_offset(id, node, cache, t, k, &trips);
  if (ctx) ctx->round_trips += trips;
  co_return loc;
}

StageSpan::StageSpan(Coordinator& co, TxnContext& ctx, Stage stage)
    : co_(co), ctx_(ctx), stage_(stage), t0_(co.cl.sim.now()) {}

StageSpan::~StageSpan() {
  ctx_.stage_time[static_cast<std::size_t>(stage_)] += co_.cl.sim.now() - t0_;
}

Task<TupleImage> fetch_tuple(Coordinator& co, TxnContext* ctx, const TupleRef& t) {
  if (t.node == co.node) {
    co_await co.local_op(ctx);
    co_return co.cl.store.read_tuple_local(t.table, t.key);
  }
  DoorbellBatch b;
  b.dst = t.node;
  b.requests.push_back(VerbRequest::read(t.offset, static_cast<std::uint32_t>(t.layout->size)));
  BatchResult res = co_await co.batch(ctx, std::move(b));
  if (res.fault) throw ProtocolError("fault completion while fetching a tuple");
  co_return parse_tuple(res.results[0].data, *t.layout);
}

Task<CasReadResult> lock_and_fetch(Coordinator& co, TxnContext* ctx, const TupleRef& t,
                                   std::uint64_t ts) {
  CasReadResult out;
  if (t.node == co.node) {
    co_await co.local_op(ctx);
    out.cas_old = co.cl.sim.cas_u64(t.node, t.offset, 0, ts);
    out.image = co.cl.store.read_tuple_local(t.table, t.key);
    co_return out;
  }
  DoorbellBatch b;
  b.dst = t.node;
  b.requests.push_back(VerbRequest::cas(t.offset, 0, ts));
  b.requests.push_back(VerbRequest::read(t.offset, static_cast<std::uint32_t>(t.layout->size)));
  BatchResult res = co_await co.batch(ctx, std::move(b));
  if (res.fault) throw ProtocolError("fault completion while locking a tuple");
  out.cas_old = res.results[0].old_value;
  // On CAS failure the returned data is simply ignored by callers.
  out.image = parse_tuple(res.results[1].data, *t.layout);
  co_return out;
}

Task<std::uint64_t> cas_cell(Coordinator& co, TxnContext* ctx, const TupleRef& t,
                             std::uint64_t rel_off, std::uint64_t expected,
                             std::uint64_t desired) {
  if (t.node == co.node) {
    co_await co.local_op(ctx);
    co_return co.cl.sim.cas_u64(t.node, t.offset + rel_off, expected, desired);
  }
  DoorbellBatch b;
  b.dst = t.node;
  b.requests.push_back(VerbRequest::cas(t.offset + rel_off, expected, desired));
  BatchResult res = co_await co.batch(ctx, std::move(b));
  if (res.fault) throw ProtocolError("fault completion in CAS");
  co_return res.results[0].old_value;
}

Task<void> write_tuple_span(Coordinator& co, TxnContext* ctx, const TupleRef& t,
                            std::uint64_t rel_off, Bytes bytes, bool unlock) {
  if (t.node == co.node) {
    co_await co.local_op(ctx);
    co.cl.sim.store_bytes(t.node, t.offset + rel_off, bytes);
    if (unlock) co.cl.sim.store_u64(t.node, t.offset, 0);
    co_return;
  }
  DoorbellBatch b;
  b.dst = t.node;
  b.requests.push_back(VerbRequest::write(t.offset + rel_off, std::move(bytes)));
  if (unlock) {
    Bytes zero;
    put_u64(zero, 0);
    b.requests.push_back(VerbRequest::write(t.offset, std::move(zero)));
  }
  co_await co.batch(ctx, std::move(b));
}

Task<void> unlock_one_sided(Coordinator& co, TxnContext* ctx, const TupleRef& t) {
  if (t.node == co.node) {
    co_await co.local_op(ctx);
    co.cl.sim.store_u64(t.node, t.offset, 0);
    co_return;
  }
  Bytes zero;
  put_u64(zero, 0);
  DoorbellBatch b;
  b.dst = t.node;
  b.requests.push_back(VerbRequest::write(t.offset, std::move(zero)));
  co_await co.batch(ctx, std::move(b));
}

Task<void> unlock_rpc(Coordinator& co, TxnContext* ctx, const TupleRef& t, std::uint64_t ts) {
  if (t.node == co.node) {
    co_await co.local_op(ctx);
    co.cl.sim.cas_u64(t.node, t.offset, ts, 0);
    co_return;
  }
  Bytes req;
  put_u64(req, t.offset);
  put_u64(req, ts);
  co_await co.rpc(ctx, t.node, kHUnlock, std::move(req));
}

Task<void> log_to_backups(Coordinator& co, TxnContext& ctx, bool one_sided) {
  if (ctx.ws.empty() || co.cl.cfg.replicas <= 1) co_return;
  StageSpan span(co, ctx, Stage::kLog);

  LogRecord rec;
  rec.ctts = ctx.ctts.packed();
  for (const auto& w : ctx.ws) rec.writes.emplace_back(FullKey{w.table, w.key}, w.new_record);
  Bytes body;
  Bytes enc = encode_log_record(rec);
  put_u64(body, enc.size());
  put_bytes(body, enc);

  std::uint32_t lane = co.cl.lane_index(co.id);
  std::vector<Ticket<BatchResult>> batch_acks;
  std::vector<Ticket<Bytes>> rpc_acks;
  for (NodeId backup : co.cl.backups_of(co.node)) {
    std::uint64_t& cursor = co.log_cursor[backup];
    if (cursor + body.size() > co.cl.cfg.log_ring_bytes) cursor = 0;
    std::uint64_t off = co.cl.log_lane_base(backup, lane) + cursor;
    cursor += (body.size() + 7) & ~std::uint64_t{7};
    ++ctx.round_trips;
    if (one_sided) {
      DoorbellBatch b;
      b.dst = backup;
      b.requests.push_back(VerbRequest::write(off, body));
      batch_acks.push_back(co.cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u64(req, off);
      put_bytes(req, body);
      rpc_acks.push_back(co.cl.sim.rpc_call(co.id, backup, kHLogAppend, std::move(req)));
    }
  }
  // Write-back is forbidden until every replica acknowledged.
  for (auto& t : batch_acks) co_await co.cl.sim.await_ticket(co.id, t, "log-ack");
  for (auto& t : rpc_acks) co_await co.cl.sim.await_ticket(co.id, t, "log-ack");
}

Task<void> maybe_notify_reclaim(Coordinator& co) {
  if (co.cl.cfg.replicas <= 1) co_return;
  if (++co.commits_since_reclaim < co.cl.cfg.reclaim_every) co_return;
  co.commits_since_reclaim = 0;
  std::vector<Ticket<Bytes>> acks;
  for (NodeId backup : co.cl.backups_of(co.node))
    acks.push_back(co.cl.sim.rpc_call(co.id, backup, kHLogReclaim, Bytes{}));
  for (auto& t : acks) co_await co.cl.sim.await_ticket(co.id, t, "reclaim-ack");
}

std::map<FullKey, Bytes> gather_inputs(const Store& store, const TxnContext& ctx) {
  std::map<FullKey, Bytes> in;
  for (const auto& e : ctx.rs)
    in[FullKey{e.table, e.key}] = trim_record(store, e.table, e.record);
  for (const auto& e : ctx.ws)
    in[FullKey{e.table, e.key}] = trim_record(store, e.table, e.record);
  return in;
}

Bytes trim_record(const Store& store, TableId t, const Bytes& padded) {
  std::uint32_t len = store.layout(t).record_len;
  if (padded.size() <= len) return padded;
  return Bytes(padded.begin(), padded.begin() + len);
}

CommitRecord make_commit_record(const TxnContext& ctx, std::uint64_t commit_key) {
  CommitRecord rec;
  rec.txn_id = ctx.txn_id;
  rec.commit_key = commit_key;
  for (const auto& e : ctx.rs) rec.reads.push_back({FullKey{e.table, e.key}, e.wts});
  for (const auto& e : ctx.ws) {
    rec.reads.push_back({FullKey{e.table, e.key}, e.wts});
    rec.writes.push_back({FullKey{e.table, e.key}, e.wts, 0});  // new_wts set by the caller
  }
  return rec;
}

}  // namespace rdmacc
