#pragma once

#include <coroutine>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "rdmacc/task.hpp"
#include "rdmacc/types.hpp"

namespace rdmacc {

// Simulated-time cost model. Units are abstract (1 unit ~ 1 microsecond in
// the default workloads). One-sided verbs are cheaper per trip than RPC,
// which also does remote work; absolute values are configuration, not truth.
struct LatencyModel {
  SimTime one_sided_rt = 2;     // doorbell batch round trip
  SimTime rpc_rt = 4;           // request + handler + reply
  SimTime local_op = 1;         // local tuple access
  SimTime per_verb_overhead = 0;  // extra cost per additional request in a batch

  void validate() const;
};

struct SimConfig {
  std::uint32_t nodes = 1;
  std::uint32_t threads = 1;
  std::uint32_t coros = 1;
  LatencyModel latency;
  std::uint64_t node_capacity = 256ull << 20;  // registered-memory cap per node
  bool trace = false;
};

// A remotely addressable slice of a node's registered memory.
struct Region {
  NodeId owner = 0;
  std::uint64_t base = 0;
  std::uint64_t len = 0;
};

enum class VerbKind : std::uint8_t { kRead, kWrite, kCas, kFaa };

// One one-sided operation descriptor. CAS/FAA operate on a single 8-byte
// aligned cell; READ/WRITE may span any registered range.
struct VerbRequest {
  VerbKind kind = VerbKind::kRead;
  std::uint64_t offset = 0;
  std::uint32_t len = 0;
  Bytes payload;                 // WRITE
  std::uint64_t expected = 0;    // CAS
  std::uint64_t desired = 0;     // CAS
  std::uint64_t delta = 0;       // FAA
  bool signaled = false;

  static VerbRequest read(std::uint64_t off, std::uint32_t len);
  static VerbRequest write(std::uint64_t off, Bytes payload);
  static VerbRequest cas(std::uint64_t off, std::uint64_t expected, std::uint64_t desired);
  static VerbRequest faa(std::uint64_t off, std::uint64_t delta);
};

// Requests posted to one queue pair with a single doorbell; they execute at
// the destination in issue order and cost exactly one network round trip.
struct DoorbellBatch {
  NodeId dst = 0;
  std::vector<VerbRequest> requests;
};

struct VerbResult {
  Bytes data;                  // READ
  std::uint64_t old_value = 0;  // CAS / FAA
};

struct BatchResult {
  std::vector<VerbResult> results;  // aligned with the batch's request list
  bool fault = false;               // out-of-bounds target (RNIC error)
  std::size_t fault_index = 0;
};

using HandlerId = std::uint16_t;

class Simulator;

namespace detail {

template <typename T>
struct TicketState {
  std::optional<T> result;
  std::coroutine_handle<> waiter;
};

}  // namespace detail

// One-shot completion handle; co_await yields the result once delivered.
template <typename T>
class Ticket {
 public:
  Ticket() : state_(std::make_shared<detail::TicketState<T>>()) {}

  bool ready() const { return state_->result.has_value(); }

  bool await_ready() const noexcept { return state_->result.has_value(); }
  void await_suspend(std::coroutine_handle<> h) noexcept { state_->waiter = h; }
  T await_resume() { return std::move(*state_->result); }

  void fulfill(T value) const {
    state_->result.emplace(std::move(value));
    if (state_->waiter) {
      auto w = std::exchange(state_->waiter, nullptr);
      w.resume();
    }
  }

 private:
  std::shared_ptr<detail::TicketState<T>> state_;
};

using BatchTicket = Ticket<BatchResult>;
using RpcTicket = Ticket<Bytes>;

// Deferred-reply handle for RPC handlers that cannot answer inline (e.g. a
// lock request parked on a wait list). reply() may be called from any later
// event on the destination node.
class RpcReplier {
 public:
  RpcReplier() = default;
  RpcReplier(Simulator* sim, RpcTicket ticket) : sim_(sim), ticket_(ticket) {}
  void reply(Bytes payload) const;

 private:
  Simulator* sim_ = nullptr;
  RpcTicket ticket_;
};

struct RpcContext {
  Simulator& sim;
  NodeId node;                 // node the handler runs on
  TaskId caller;               // coordinator lane that posted the request
  std::span<const std::uint8_t> payload;
  RpcReplier replier;          // for deferred replies; return std::nullopt after stashing
};

using RpcHandler = std::function<std::optional<Bytes>(RpcContext&)>;

struct TaskStat {
  TaskId id;
  bool done = false;
  std::uint64_t resumes = 0;
  std::string last_wait;
};

struct SimReport {
  SimTime end_time = 0;
  std::uint64_t events = 0;
  std::uint64_t round_trips = 0;
  std::uint64_t batches = 0;
  std::uint64_t rpcs = 0;
  std::vector<TaskStat> tasks;

  std::string to_string() const;
};

// Deterministic discrete-event simulator of a symmetric cluster: registered
// memory, one-sided verbs with doorbell batching, two-sided RPC dispatched on
// a per-node event loop, and cooperative tasks that yield only at await
// points. Single host thread; same (config, seed) input produces an identical
// event sequence.
class Simulator {
 public:
  explicit Simulator(SimConfig cfg);
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  const SimConfig& config() const { return cfg_; }
  SimTime now() const { return now_; }
  std::uint64_t round_trips() const { return round_trips_; }
  std::uint64_t batches_posted() const { return batches_; }
  std::uint64_t rpcs_posted() const { return rpcs_; }

  // --- registered memory -------------------------------------------------
  Region register_region(NodeId node, std::uint64_t len);

  std::uint64_t registered_bytes(NodeId node) const;
  Bytes load_bytes(NodeId node, std::uint64_t off, std::uint64_t len) const;
  std::uint64_t load_u64(NodeId node, std::uint64_t off) const;

  // Local (CPU-side) mutations of registered memory; they wake memory
  // watchers exactly like remotely applied verbs do.
  void store_bytes(NodeId node, std::uint64_t off, std::span<const std::uint8_t> data);
  void store_u64(NodeId node, std::uint64_t off, std::uint64_t value);
  std::uint64_t cas_u64(NodeId node, std::uint64_t off, std::uint64_t expected,
                        std::uint64_t desired);
  std::uint64_t faa_u64(NodeId node, std::uint64_t off, std::uint64_t delta);

  // --- network ------------------------------------------------------------
  BatchTicket post_batch(TaskId src, DoorbellBatch batch);
  RpcTicket rpc_call(TaskId src, NodeId dst, HandlerId handler, Bytes payload);
  void register_handler(HandlerId id, RpcHandler fn);

  // Watch a byte range; the callback fires (once) after the next mutation
  // touching it. Handlers and verb applications never interleave with the
  // callback: it runs as its own event.
  void watch_memory(NodeId node, std::uint64_t off, std::uint64_t len, TaskId waiter,
                    std::function<void()> cb);

  // --- awaitables ----------------------------------------------------------
  // Suspend the current task until `delay` units pass.
  auto delay(TaskId who, SimTime d) {
    struct Awaiter {
      Simulator& sim;
      TaskId who;
      SimTime d;
      bool await_ready() const noexcept { return false; }
      void await_suspend(std::coroutine_handle<> h) {
        sim.note_wait(who, "delay");
        sim.schedule(sim.now_ + d, who, [h]() mutable { h.resume(); });
      }
      void await_resume() const noexcept {}
    };
    return Awaiter{*this, who, d};
  }

  // Suspend until any write lands in [off, off+len) of `node`'s memory.
  auto mem_changed(NodeId node, std::uint64_t off, std::uint64_t len, TaskId who) {
    struct Awaiter {
      Simulator& sim;
      NodeId node;
      std::uint64_t off, len;
      TaskId who;
      bool await_ready() const noexcept { return false; }
      void await_suspend(std::coroutine_handle<> h) {
        sim.note_wait(who, "mem-watch n" + std::to_string(node) + "+" + std::to_string(off));
        sim.watch_memory(node, off, len, who, [h]() mutable { h.resume(); });
      }
      void await_resume() const noexcept {}
    };
    return Awaiter{*this, node, off, len, who};
  }

  // Awaiting a ticket from inside a task: wraps note_wait bookkeeping.
  template <typename T>
  auto await_ticket(TaskId who, Ticket<T> t, const char* what) {
    struct Awaiter {
      Simulator& sim;
      TaskId who;
      Ticket<T> ticket;
      const char* what;
      bool await_ready() const noexcept { return ticket.await_ready(); }
      void await_suspend(std::coroutine_handle<> h) {
        sim.note_wait(who, what);
        ticket.await_suspend(h);
      }
      T await_resume() { return ticket.await_resume(); }
    };
    return Awaiter{*this, who, t, what};
  }

  // --- tasks ----------------------------------------------------------------
  void spawn(TaskId id, Task<void> task);
  SimReport run_until_quiescent();

  // Event-trace hook (enabled via SimConfig::trace).
  const std::vector<std::string>& trace() const { return trace_; }

  void schedule(SimTime t, TaskId src, std::function<void()> fn);
  void note_wait(TaskId who, std::string what);

 private:
  struct Event {
    SimTime time;
    TaskId src;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  struct EventOrder {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.src != b.src) return a.src > b.src;
      return a.seq > b.seq;
    }
  };
  struct Watcher {
    std::uint64_t off;
    std::uint64_t len;
    TaskId waiter;
    std::function<void()> cb;
  };
  struct NodeMem {
    Bytes arena;
    std::uint64_t allocated = 0;
    std::vector<Watcher> watchers;
  };
  struct RootTask {
    TaskId id;
    Task<void> task;
    std::uint64_t resumes = 0;
    std::string last_wait;
  };

  void apply_batch(NodeId dst, const DoorbellBatch& batch, BatchResult& out);
  void notify_watchers(NodeId node, std::uint64_t off, std::uint64_t len);
  void check_bounds(NodeId node, std::uint64_t off, std::uint64_t len) const;
  RootTask* find_task(TaskId id);

  SimConfig cfg_;
  SimTime now_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t events_run_ = 0;
  std::uint64_t round_trips_ = 0;
  std::uint64_t batches_ = 0;
  std::uint64_t rpcs_ = 0;
  bool running_ = false;
  std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
  std::vector<NodeMem> mem_;
  std::map<HandlerId, RpcHandler> handlers_;
  std::vector<std::unique_ptr<RootTask>> tasks_;
  std::vector<std::string> trace_;
};

}  // namespace rdmacc
