#pragma once

#include <functional>
#include <map>

#include "rdmacc/netsim.hpp"
#include "rdmacc/store.hpp"
#include "rdmacc/txn.hpp"
#include "rdmacc/types.hpp"

namespace rdmacc {

// Transaction input: read/write sets are known before execution; a key in
// both sets is treated as written (the write set wins).
struct TxnSpec {
  std::uint64_t id = 0;
  std::vector<FullKey> rs;
  std::vector<FullKey> ws;
  std::uint32_t logic = 0;   // interpreted by the workload's logic function
  std::uint64_t param = 0;   // logic argument (amounts, deltas)
  TaskId arrival;            // lane the transaction is submitted to
};

// Pure transaction body: maps fetched values (all rs/ws keys) to the new
// write-set values. Shared between live execution and serial replay.
using LogicFn = std::function<std::map<FullKey, Bytes>(const TxnSpec&,
                                                       const std::map<FullKey, Bytes>&)>;

// Wire ids of all registered RPC handlers.
enum Handler : HandlerId {
  kHEcho = 1,
  kHLogAppend,
  kHLogReclaim,
  kHUnlock,
  kH2plLock,
  kH2plCommit,
  kHOccRead,
  kHOccLock,
  kHOccValidate,
  kHOccCommit,
  kHMvccRead,
  kHMvccWrite,
  kHMvccCommit,
  kHSunRead,
  kHSunWrite,
  kHSunRenew,
  kHSunCommit,
  kHCalvinBatch,
  kHCalvinForward,
};

struct ClusterConfig {
  std::uint32_t nodes = 4;
  std::uint32_t threads = 2;
  std::uint32_t coros = 4;
  std::uint32_t replicas = 3;       // 1 primary + (replicas-1) log backups
  std::uint32_t version_slots = 4;  // S
  LatencyModel latency;
  SimTime exec_time = 0;            // simulated compute between fetch and commit
  std::uint64_t log_ring_bytes = 1ull << 16;
  std::uint64_t reclaim_every = 256;  // commits between log-reclaim notices
  std::uint32_t renew_retry_max = 8;  // SUNDIAL lease-renewal CAS retries
  std::uint64_t node_capacity = 256ull << 20;
  bool trace = false;
};

struct WaitEvent {
  std::uint64_t waiter_ts = 0;
  std::uint64_t holder_ts = 0;
};

class Cluster;

// Per-lane transaction driver state: its logical clock, its offset cache and
// its position in the cluster.
struct Coordinator {
  Coordinator(Cluster& cl, TaskId id);

  Cluster& cl;
  TaskId id;
  NodeId node;
  TsClock clock;
  OffsetCache cache;
  std::map<NodeId, std::uint64_t> log_cursor;
  std::uint64_t commits_since_reclaim = 0;

  Task<BatchResult> batch(TxnContext* ctx, DoorbellBatch b);
  Task<Bytes> rpc(TxnContext* ctx, NodeId dst, HandlerId h, Bytes payload);
  Task<void> local_op(TxnContext* ctx);          // one local tuple access
  Task<void> compute(TxnContext* ctx, SimTime t);  // execution-phase delay
  Task<Located> locate(TxnContext* ctx, TableId t, Key k);
};

// Accumulates a stage's wall (simulated) time across its await points.
class StageSpan {
 public:
  StageSpan(Coordinator& co, TxnContext& ctx, Stage stage);
  ~StageSpan();
  StageSpan(const StageSpan&) = delete;
  StageSpan& operator=(const StageSpan&) = delete;

 private:
  Coordinator& co_;
  TxnContext& ctx_;
  Stage stage_;
  SimTime t0_;
};

// A protocol's view of one remote (or local) tuple.
struct TupleRef {
  NodeId node = 0;
  std::uint64_t offset = 0;
  TableId table = 0;
  Key key = 0;
  const TupleLayout* layout = nullptr;
};

// Simulator + store + per-node server-side state shared by every protocol:
// lock wait lists, coordinator-log rings, commit history and wait-event
// ledgers used by the oracle and the acceptance suite.
class Cluster {
 public:
  Cluster(ClusterConfig cfg, std::vector<TableSpec> tables,
          const std::function<Bytes(TableId, Key)>& initial_record);

  ClusterConfig cfg;
  Simulator sim;
  Store store;

  struct Waiter {
    Timestamp ts;
    RpcReplier replier;
    TupleRef tuple;
  };
  struct NodeState {
    std::map<std::uint64_t, std::vector<Waiter>> wait_lists;  // keyed by lock offset
    std::map<std::uint64_t, bool> watch_armed;
    std::uint64_t reclaim_notices = 0;
    std::uint64_t log_base = 0;
  };
  std::vector<NodeState> nodes;

  // Run-wide ledgers (single-threaded simulation; plain containers).
  std::vector<CommitRecord> history;
  std::vector<WaitEvent> wait_events;
  std::uint64_t committed = 0;

  std::uint32_t lane_count() const { return cfg.nodes * cfg.threads * cfg.coros; }
  std::uint32_t lane_index(TaskId id) const {
    return (std::uint32_t(id.node) * cfg.threads + id.thread) * cfg.coros + id.coro;
  }
  // Ring of `log_ring_bytes` on `backup` owned by writer lane `lane`.
  std::uint64_t log_lane_base(NodeId backup, std::uint32_t lane) const {
    return nodes[backup].log_base + std::uint64_t(lane) * cfg.log_ring_bytes;
  }
  std::vector<NodeId> backups_of(NodeId primary) const;

  TupleRef tuple_ref(TableId t, Key k, const Located& loc) const;
  TupleRef local_tuple_ref(TableId t, Key k) const;

  // Pre-resolves every remote offset so steady-state transactions never pay
  // directory lookups (matching a warmed-up system).
  void warm_caches(std::vector<Coordinator*> coordinators, const std::vector<TxnSpec>& txns);
};

// --- shared micro-operations -------------------------------------------------
// Each helper takes the local path (no network, one local_op charge) when the
// tuple lives on the coordinator's node.

// Whole-tuple fetch without locking.
Task<TupleImage> fetch_tuple(Coordinator& co, TxnContext* ctx, const TupleRef& t);
// Doorbell batch [CAS lock 0->ts, READ tuple]; the image is valid only when
// cas_old == 0 (in-order execution guarantees it reflects the locked state).
struct CasReadResult {
  std::uint64_t cas_old = 0;
  TupleImage image;
};
Task<CasReadResult> lock_and_fetch(Coordinator& co, TxnContext* ctx, const TupleRef& t,
                                   std::uint64_t ts);
// CAS on an arbitrary 8-byte cell of the tuple (rts renewals etc.).
Task<std::uint64_t> cas_cell(Coordinator& co, TxnContext* ctx, const TupleRef& t,
                             std::uint64_t rel_off, std::uint64_t expected,
                             std::uint64_t desired);
// WRITE `bytes` at tuple-relative offset, optionally batched with an unlock
// WRITE of the lock word (the second, signaled write of the commit pair).
Task<void> write_tuple_span(Coordinator& co, TxnContext* ctx, const TupleRef& t,
                            std::uint64_t rel_off, Bytes bytes, bool unlock);
// One-sided release of a lock we hold.
Task<void> unlock_one_sided(Coordinator& co, TxnContext* ctx, const TupleRef& t);
// RPC release (ts-checked on the participant).
Task<void> unlock_rpc(Coordinator& co, TxnContext* ctx, const TupleRef& t, std::uint64_t ts);

// Coordinator log: replicate the write set to every backup, then (every
// cfg.reclaim_every commits) notify backups to reclaim acknowledged entries.
Task<void> log_to_backups(Coordinator& co, TxnContext& ctx, bool one_sided);
Task<void> maybe_notify_reclaim(Coordinator& co);

// Fetched values of a transaction, keyed for the logic function.
std::map<FullKey, Bytes> gather_inputs(const Store& store, const TxnContext& ctx);
// Trim a padded slot record to the table's record length.
Bytes trim_record(const Store& store, TableId t, const Bytes& padded);
CommitRecord make_commit_record(const TxnContext& ctx, std::uint64_t commit_key);

}  // namespace rdmacc
