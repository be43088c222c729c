#include "rdmacc/proto_2pl.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

constexpr std::uint64_t kLockOk = 1;
constexpr std::uint64_t kLockFail = 0;

Bytes pad_record(const TupleLayout& layout, const Bytes& rec) {
  Bytes out(layout.padded_len, 0);
  std::copy(rec.begin(), rec.end(), out.begin());
  return out;
}

void store_entry(TxnContext& ctx, const TupleRef& t, const TupleImage& img, bool is_write) {
  // Single-version protocols keep the live version in slot 0.
  if (is_write) {
    WsEntry e;
    e.table = t.table;
    e.key = t.key;
    e.node = t.node;
    e.offset = t.offset;
    e.wts = img.slots[0].wts;
    e.rts = img.rts;
    e.record = img.slots[0].record;
    e.locked = true;
    ctx.ws.push_back(std::move(e));
  } else {
    RsEntry e;
    e.table = t.table;
    e.key = t.key;
    e.node = t.node;
    e.offset = t.offset;
    e.wts = img.slots[0].wts;
    e.rts = img.rts;
    e.record = img.slots[0].record;
    ctx.rs.push_back(std::move(e));
  }
}

Bytes encode_lock_request(const TupleRef& t, std::uint64_t ts, bool waitdie) {
  Bytes req;
  put_u32(req, t.table);
  put_u64(req, t.key);
  put_u64(req, ts);
  put_u32(req, waitdie ? 1 : 0);
  return req;
}

// Grants the lock at `off` to the oldest parked waiter once it is released;
// younger leftovers die, matching the one-sided retry's own decision rule.
void arm_wait_watcher(Cluster& cl, NodeId node, std::uint64_t off);

void pump_wait_list(Cluster& cl, NodeId node, std::uint64_t off) {
  auto& st = cl.nodes[node];
  st.watch_armed[off] = false;
  auto it = st.wait_lists.find(off);
  if (it == st.wait_lists.end() || it->second.empty()) return;
  auto& q = it->second;

  std::uint64_t lock = cl.sim.load_u64(node, off);
  if (lock == 0) {
    // Oldest waiter first.
    auto oldest = std::min_element(q.begin(), q.end(), [](const auto& a, const auto& b) {
      return a.ts < b.ts;
    });
    Cluster::Waiter granted = std::move(*oldest);
    q.erase(oldest);
    cl.sim.store_u64(node, off, granted.ts.packed());
    Bytes reply;
    put_u64(reply, kLockOk);
    put_u64(reply, granted.tuple.offset);
    put_bytes(reply, cl.sim.load_bytes(node, granted.tuple.offset, granted.tuple.layout->size));
    granted.replier.reply(std::move(reply));
    lock = granted.ts.packed();
  }
  // Anyone not older than the current holder can no longer legally wait.
  for (std::size_t i = 0; i < q.size();) {
    if (q[i].ts.packed() > lock) {
      Bytes reply;
      put_u64(reply, kLockFail);
      q[i].replier.reply(std::move(reply));
      q.erase(q.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  if (!q.empty()) arm_wait_watcher(cl, node, off);
}

void arm_wait_watcher(Cluster& cl, NodeId node, std::uint64_t off) {
  auto& st = cl.nodes[node];
  if (st.watch_armed[off]) return;
  st.watch_armed[off] = true;
  cl.sim.watch_memory(node, off, 8, TaskId{node, 0, 0},
                      [&cl, node, off]() { pump_wait_list(cl, node, off); });
}

Task<bool> fetch_one(Coordinator& co, TxnContext& ctx, TableId table, Key key, bool is_write,
                     bool waitdie) {
  Cluster& cl = co.cl;
  Located loc = co_await co.locate(&ctx, table, key);
  TupleRef t = cl.tuple_ref(table, key, loc);
  const bool one_sided =
      ctx.hybrid.one_sided(ctx.protocol, Stage::kFetch) ||
      t.node == co.node;

  if (one_sided) {
    for (;;) {
      SimTime t0 = cl.sim.now();
      CasReadResult r = co_await lock_and_fetch(co, &ctx, t, ctx.ctts.packed());
      if (r.cas_old == 0) {
        store_entry(ctx, t, r.image, is_write);
        co_return true;
      }
      if (!waitdie || Timestamp(r.cas_old) < ctx.ctts) {
        // NOWAIT aborts immediately; WAITDIE dies when the holder is older.
        ctx.status = TxnStatus::kAborted;
        ctx.abort_reason = waitdie ? AbortReason::kDie : AbortReason::kLockConflict;
        co_return false;
      }
      cl.wait_events.push_back({ctx.ctts.packed(), r.cas_old});
      // Yield once per unsuccessful trial, then re-post the CAS+READ pair.
      if (cl.sim.now() == t0) co_await cl.sim.delay(co.id, 1);
    }
  }

  Bytes reply = co_await co.rpc(&ctx, t.node, kH2plLock,
                                encode_lock_request(t, ctx.ctts.packed(), waitdie));
  ByteReader r(reply);
  if (r.u64() != kLockOk) {
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = waitdie ? AbortReason::kDie : AbortReason::kLockConflict;
    co_return false;
  }
  std::uint64_t off = r.u64();  // remote tuple address, kept for one-sided stages
  t.offset = off;
  TupleImage img = parse_tuple(r.bytes(t.layout->size), *t.layout);
  store_entry(ctx, t, img, is_write);
  co_return true;
}

}  // namespace

Task<bool> nowait_fetch(Coordinator& co, TxnContext& ctx, TableId t, Key k, bool is_write) {
  return fetch_one(co, ctx, t, k, is_write, /*waitdie=*/false);
}

Task<bool> waitdie_fetch(Coordinator& co, TxnContext& ctx, TableId t, Key k, bool is_write) {
  return fetch_one(co, ctx, t, k, is_write, /*waitdie=*/true);
}

Task<void> release_2pl(Coordinator& co, TxnContext& ctx) {
  // Abort-path releases ride the fetch stage's primitive. Locks acquired over
  // RPC leave the holder timestamp in the lock word, so a one-sided release
  // works regardless of how the lock was taken.
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kFetch);
  for (auto& e : ctx.rs) {
    TupleRef t{e.node, e.offset, e.table, e.key, &co.cl.store.layout(e.table)};
    if (one_sided)
      co_await unlock_one_sided(co, &ctx, t);
    else
      co_await unlock_rpc(co, &ctx, t, ctx.ctts.packed());
  }
  for (auto& e : ctx.ws) {
    if (!e.locked) continue;
    TupleRef t{e.node, e.offset, e.table, e.key, &co.cl.store.layout(e.table)};
    if (one_sided)
      co_await unlock_one_sided(co, &ctx, t);
    else
      co_await unlock_rpc(co, &ctx, t, ctx.ctts.packed());
    e.locked = false;
  }
}

Task<void> commit_2pl(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided =
      ctx.hybrid.one_sided(ctx.protocol, Stage::kCommit);

  std::vector<Ticket<BatchResult>> batch_acks;
  std::vector<Ticket<Bytes>> rpc_acks;
  for (auto& e : ctx.ws) {
    const TupleLayout& layout = cl.store.layout(e.table);
    TupleRef t{e.node, e.offset, e.table, e.key, &layout};
    Bytes span;
    put_u64(span, ctx.ctts.packed());
    put_bytes(span, e.new_record);
    if (t.node == co.node) {
      co_await co.local_op(&ctx);
      cl.sim.store_bytes(t.node, t.offset + layout.slot_off(0), span);
      cl.sim.store_u64(t.node, t.offset, 0);
    } else if (one_sided) {
      DoorbellBatch b;
      b.dst = t.node;
      b.requests.push_back(VerbRequest::write(t.offset + layout.slot_off(0), std::move(span)));
      Bytes zero;
      put_u64(zero, 0);
      b.requests.push_back(VerbRequest::write(t.offset, std::move(zero)));
      ++ctx.round_trips;
      batch_acks.push_back(cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u32(req, e.table);
      put_u64(req, e.key);
      put_u64(req, ctx.ctts.packed());
      put_bytes(req, e.new_record);
      ++ctx.round_trips;
      rpc_acks.push_back(cl.sim.rpc_call(co.id, t.node, kH2plCommit, std::move(req)));
    }
    e.locked = false;
  }
  for (auto& e : ctx.rs) {
    TupleRef t{e.node, e.offset, e.table, e.key, &cl.store.layout(e.table)};
    if (t.node == co.node) {
      co_await co.local_op(&ctx);
      cl.sim.store_u64(t.node, t.offset, 0);
    } else if (one_sided) {
      Bytes zero;
      put_u64(zero, 0);
      DoorbellBatch b;
      b.dst = t.node;
      b.requests.push_back(VerbRequest::write(t.offset, std::move(zero)));
      ++ctx.round_trips;
      batch_acks.push_back(cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u64(req, t.offset);
      put_u64(req, ctx.ctts.packed());
      ++ctx.round_trips;
      rpc_acks.push_back(cl.sim.rpc_call(co.id, t.node, kHUnlock, std::move(req)));
    }
  }
  for (auto& a : batch_acks) co_await cl.sim.await_ticket(co.id, a, "commit-ack");
  for (auto& a : rpc_acks) co_await cl.sim.await_ticket(co.id, a, "commit-ack");
}

Task<bool> run_2pl_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                       const LogicFn& logic) {
  Cluster& cl = co.cl;
  const bool waitdie = ctx.protocol == Protocol::kWaitDie;
  {
    StageSpan span(co, ctx, Stage::kFetch);
    for (auto k : spec.rs)
      if (!co_await fetch_one(co, ctx, k.table, k.key, false, waitdie)) break;
    if (ctx.status == TxnStatus::kActive)
      for (auto k : spec.ws)
        if (!co_await fetch_one(co, ctx, k.table, k.key, true, waitdie)) break;
  }
  if (ctx.status == TxnStatus::kAborted) {
    co_await release_2pl(co, ctx);
    co_return false;
  }

  co_await co.compute(&ctx, cl.cfg.exec_time);
  auto out = logic(spec, gather_inputs(cl.store, ctx));
  for (auto& e : ctx.ws)
    e.new_record = pad_record(cl.store.layout(e.table), out.at(FullKey{e.table, e.key}));

  co_await log_to_backups(co, ctx, ctx.hybrid.one_sided(ctx.protocol, Stage::kLog));
  {
    StageSpan span(co, ctx, Stage::kCommit);
    co_await commit_2pl(co, ctx);
  }
  ctx.status = TxnStatus::kCommitted;
  CommitRecord rec = make_commit_record(ctx, ctx.ctts.packed());
  for (auto& w : rec.writes) w.new_wts = ctx.ctts.packed();
  cl.history.push_back(std::move(rec));
  ++cl.committed;
  co_await maybe_notify_reclaim(co);
  co_return true;
}

void install_2pl_handlers(Cluster& cl) {
  cl.sim.register_handler(kH2plLock, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t ts = r.u64();
    bool waitdie = r.u32() != 0;
    TupleRef t = cl.local_tuple_ref(table, key);

    std::uint64_t old = cl.sim.cas_u64(ctx.node, t.offset, 0, ts);
    if (old == 0) {
      Bytes reply;
      put_u64(reply, kLockOk);
      put_u64(reply, t.offset);
      put_bytes(reply, cl.sim.load_bytes(ctx.node, t.offset, t.layout->size));
      return reply;
    }
    if (waitdie && ts < old) {
      // Older than the holder: park on the wait list; the event loop replies
      // when the lock is released.
      cl.wait_events.push_back({ts, old});
      cl.nodes[ctx.node].wait_lists[t.offset].push_back(
          Cluster::Waiter{Timestamp(ts), ctx.replier, t});
      arm_wait_watcher(cl, ctx.node, t.offset);
      return std::nullopt;
    }
    Bytes reply;
    put_u64(reply, kLockFail);
    return reply;
  });

  cl.sim.register_handler(kH2plCommit, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t wts = r.u64();
    const TupleLayout& layout = cl.store.layout(table);
    Bytes record = r.bytes(layout.padded_len);
    std::uint64_t off = cl.store.tuple_offset(table, key);
    Bytes span;
    put_u64(span, wts);
    put_bytes(span, record);
    cl.sim.store_bytes(ctx.node, off + layout.slot_off(0), span);
    cl.sim.store_u64(ctx.node, off, 0);
    return Bytes{};
  });
}

}  // namespace rdmacc
