#include "rdmacc/proto_mvcc.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

Bytes pad_record(const TupleLayout& layout, const Bytes& rec) {
  Bytes out(layout.padded_len, 0);
  std::copy(rec.begin(), rec.end(), out.begin());
  return out;
}

std::uint64_t adjust_source(const TupleImage& img) {
  return std::max(img.max_wts(), img.rts);
}

bool w1_holds(const TupleImage& img, std::uint64_t ctts) {
  return ctts > img.max_wts() && ctts > img.rts;
}

}  // namespace

int mvcc_pick_version(const TupleImage& img, std::uint64_t ctts) {
  int best = -1;
  for (std::size_t i = 0; i < img.slots.size(); ++i) {
    if (img.slots[i].wts >= ctts) continue;
    if (best < 0 || img.slots[i].wts > img.slots[static_cast<std::size_t>(best)].wts)
      best = static_cast<int>(i);
  }
  return best;
}

Task<bool> mvcc_read(Coordinator& co, TxnContext& ctx, TableId table, Key key) {
  Cluster& cl = co.cl;
  Located loc = co_await co.locate(&ctx, table, key);
  TupleRef t = cl.tuple_ref(table, key, loc);
  const std::uint64_t ctts = ctx.ctts.packed();

  auto abort_with = [&](AbortReason r) {
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = r;
  };

  if (!ctx.hybrid.one_sided(ctx.protocol, Stage::kRead) && t.node != co.node) {
    Bytes req;
    put_u32(req, table);
    put_u64(req, key);
    put_u64(req, ctts);
    Bytes reply = co_await co.rpc(&ctx, t.node, kHMvccRead, std::move(req));
    ByteReader r(reply);
    std::uint64_t status = r.u64();
    co.clock.observe_packed(r.u64());
    if (status != 1) {
      abort_with(status == 2 ? AbortReason::kSlotOverflow : AbortReason::kReadRule);
      co_return false;
    }
    RsEntry e;
    e.table = table;
    e.key = key;
    e.node = t.node;
    e.offset = r.u64();
    e.wts = r.u64();
    e.rts = r.u64();
    e.record = r.bytes(t.layout->padded_len);
    ctx.rs.push_back(std::move(e));
    co_return true;
  }

  // First read: check R1/R2 on it; second read establishes atomicity when the
  // wts slots match (the lock word may legitimately differ between the two).
  TupleImage first = co_await fetch_tuple(co, &ctx, t);
  co.clock.observe_packed(adjust_source(first));
  int pick = mvcc_pick_version(first, ctts);
  if (pick < 0) {
    abort_with(AbortReason::kSlotOverflow);
    co_return false;
  }
  if (first.lock != 0 && first.lock < ctts) {
    abort_with(AbortReason::kReadRule);
    co_return false;
  }
  TupleImage second = co_await fetch_tuple(co, &ctx, t);
  if (first.wts_vector() != second.wts_vector()) {
    abort_with(AbortReason::kDoubleReadMismatch);
    co_return false;
  }

  const auto& chosen = second.slots[static_cast<std::size_t>(pick)];
  const std::uint64_t version_wts = chosen.wts;

  // Advance rts to ctts. The piggybacked READ re-checks, after the CAS lands,
  // that no writer installed a version below ctts (or locked the tuple with an
  // older timestamp) between the snapshot and the advancement.
  std::uint64_t cur_rts = second.rts;
  while (ctts > cur_rts) {
    if (t.node == co.node) {
      co_await co.local_op(&ctx);
      std::uint64_t old = cl.sim.cas_u64(t.node, t.offset + 8, cur_rts, ctts);
      if (old != cur_rts) {
        cur_rts = old;
        continue;
      }
      TupleImage now = cl.store.read_tuple_local(table, key);
      if (now.lock != 0 && now.lock < ctts) {
        abort_with(AbortReason::kReadRule);
        co_return false;
      }
      if (now.max_wts() > version_wts && mvcc_pick_version(now, ctts) >= 0 &&
          now.slots[static_cast<std::size_t>(mvcc_pick_version(now, ctts))].wts != version_wts) {
        abort_with(AbortReason::kDoubleReadMismatch);
        co_return false;
      }
      break;
    }
    DoorbellBatch b;
    b.dst = t.node;
    b.requests.push_back(VerbRequest::cas(t.offset + 8, cur_rts, ctts));
    b.requests.push_back(VerbRequest::read(t.offset, static_cast<std::uint32_t>(t.layout->size)));
    BatchResult res = co_await co.batch(&ctx, std::move(b));
    std::uint64_t old = res.results[0].old_value;
    TupleImage now = parse_tuple(res.results[1].data, *t.layout);
    if (old != cur_rts) {
      cur_rts = old;  // concurrent readers, not a conflict: retry while ctts > rts
      continue;
    }
    if (now.lock != 0 && now.lock < ctts) {
      abort_with(AbortReason::kReadRule);
      co_return false;
    }
    int repick = mvcc_pick_version(now, ctts);
    if (repick >= 0 && now.slots[static_cast<std::size_t>(repick)].wts != version_wts) {
      abort_with(AbortReason::kDoubleReadMismatch);
      co_return false;
    }
    break;
  }

  RsEntry e;
  e.table = table;
  e.key = key;
  e.node = t.node;
  e.offset = t.offset;
  e.wts = version_wts;
  e.rts = std::max(cur_rts, ctts);
  e.record = chosen.record;
  ctx.rs.push_back(std::move(e));
  co_return true;
}

Task<bool> mvcc_write_fetch(Coordinator& co, TxnContext& ctx, TableId table, Key key) {
  Cluster& cl = co.cl;
  Located loc = co_await co.locate(&ctx, table, key);
  TupleRef t = cl.tuple_ref(table, key, loc);
  const std::uint64_t ctts = ctx.ctts.packed();

  auto abort_with = [&](AbortReason r) {
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = r;
  };

  if (!ctx.hybrid.one_sided(ctx.protocol, Stage::kLock) && t.node != co.node) {
    Bytes req;
    put_u32(req, table);
    put_u64(req, key);
    put_u64(req, ctts);
    Bytes reply = co_await co.rpc(&ctx, t.node, kHMvccWrite, std::move(req));
    ByteReader r(reply);
    std::uint64_t status = r.u64();
    co.clock.observe_packed(r.u64());
    if (status != 1) {
      abort_with(status == 2 ? AbortReason::kLockConflict : AbortReason::kWriteRule);
      co_return false;
    }
    WsEntry e;
    e.table = table;
    e.key = key;
    e.node = t.node;
    e.offset = r.u64();
    e.wts = r.u64();
    e.rts = r.u64();
    e.slot = static_cast<std::uint32_t>(r.u64());
    e.record = r.bytes(t.layout->padded_len);
    e.locked = true;
    ctx.ws.push_back(std::move(e));
    co_return true;
  }

  TupleImage meta = co_await fetch_tuple(co, &ctx, t);
  co.clock.observe_packed(adjust_source(meta));
  if (!w1_holds(meta, ctts)) {
    abort_with(AbortReason::kWriteRule);
    co_return false;
  }
  CasReadResult locked = co_await lock_and_fetch(co, &ctx, t, ctts);
  if (locked.cas_old != 0) {
    co.clock.observe_packed(locked.cas_old);
    abort_with(AbortReason::kLockConflict);
    co_return false;
  }
  // Cond W1 must be checked again on the post-lock image: a competitor may
  // have committed between the metadata read and the CAS.
  if (!w1_holds(locked.image, ctts)) {
    co.clock.observe_packed(adjust_source(locked.image));
    co_await unlock_one_sided(co, &ctx, t);
    abort_with(AbortReason::kWriteRule);
    co_return false;
  }
  co.clock.observe_packed(adjust_source(locked.image));

  WsEntry e;
  e.table = table;
  e.key = key;
  e.node = t.node;
  e.offset = t.offset;
  e.wts = locked.image.max_wts();
  e.rts = locked.image.rts;
  e.record = locked.image.newest_record();
  e.locked = true;
  e.slot = locked.image.min_wts_index();
  ctx.ws.push_back(std::move(e));
  co_return true;
}

Task<void> mvcc_commit(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kCommit);
  std::vector<Ticket<BatchResult>> batches;
  std::vector<Ticket<Bytes>> rpcs;
  for (auto& e : ctx.ws) {
    const TupleLayout& layout = cl.store.layout(e.table);
    if (e.node == co.node) {
      co_await co.local_op(&ctx);
      TupleImage img = cl.store.read_tuple_local(e.table, e.key);
      std::uint32_t slot = img.min_wts_index();
      Bytes span;
      put_u64(span, ctx.ctts.packed());
      put_bytes(span, e.new_record);
      cl.sim.store_bytes(e.node, e.offset + layout.slot_off(slot), span);
      cl.sim.store_u64(e.node, e.offset, 0);
    } else if (one_sided) {
      // The eviction slot was chosen under the lock; slots cannot change
      // while we hold it.
      std::uint32_t slot = e.slot;
      Bytes span;
      put_u64(span, ctx.ctts.packed());
      put_bytes(span, e.new_record);
      DoorbellBatch b;
      b.dst = e.node;
      b.requests.push_back(VerbRequest::write(e.offset + layout.slot_off(slot), std::move(span)));
      Bytes zero;
      put_u64(zero, 0);
      b.requests.push_back(VerbRequest::write(e.offset, std::move(zero)));
      ++ctx.round_trips;
      batches.push_back(cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u32(req, e.table);
      put_u64(req, e.key);
      put_u64(req, ctx.ctts.packed());
      put_bytes(req, e.new_record);
      ++ctx.round_trips;
      rpcs.push_back(cl.sim.rpc_call(co.id, e.node, kHMvccCommit, std::move(req)));
    }
    e.locked = false;
  }
  for (auto& t : batches) co_await cl.sim.await_ticket(co.id, t, "mvcc-commit");
  for (auto& t : rpcs) co_await cl.sim.await_ticket(co.id, t, "mvcc-commit");
}

Task<void> mvcc_release(Coordinator& co, TxnContext& ctx) {
  // MVCC has no dedicated release stage; aborts unlock with the Lock
  // stage's primitive.
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kLock);
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

Task<bool> run_mvcc_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                        const LogicFn& logic) {
  Cluster& cl = co.cl;
  {
    StageSpan span(co, ctx, Stage::kRead);
    for (auto k : spec.rs)
      if (!co_await mvcc_read(co, ctx, k.table, k.key)) co_return false;
  }
  {
    StageSpan span(co, ctx, Stage::kLock);
    for (auto k : spec.ws) {
      if (!co_await mvcc_write_fetch(co, ctx, k.table, k.key)) {
        co_await mvcc_release(co, ctx);
        co_return false;
      }
    }
  }
  co_await co.compute(&ctx, cl.cfg.exec_time);
  auto out = logic(spec, gather_inputs(cl.store, ctx));
  for (auto& e : ctx.ws)
    e.new_record = pad_record(cl.store.layout(e.table), out.at(FullKey{e.table, e.key}));

  co_await log_to_backups(co, ctx, ctx.hybrid.one_sided(ctx.protocol, Stage::kLog));
  {
    StageSpan span(co, ctx, Stage::kCommit);
    co_await mvcc_commit(co, ctx);
  }
  ctx.status = TxnStatus::kCommitted;
  CommitRecord rec = make_commit_record(ctx, ctx.ctts.packed());
  for (auto& w : rec.writes) w.new_wts = ctx.ctts.packed();
  cl.history.push_back(std::move(rec));
  ++cl.committed;
  co_await maybe_notify_reclaim(co);
  co_return true;
}

void install_mvcc_handlers(Cluster& cl) {
  // reply: status u64 (1 ok, 2 no version below ctts, 3 Cond R2 violated),
  // adjust u64, then on ok: offset, version wts, rts, record.
  cl.sim.register_handler(kHMvccRead, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t ctts = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    TupleImage img = cl.store.read_tuple_local(table, key);
    Bytes reply;
    int pick = mvcc_pick_version(img, ctts);
    if (pick < 0) {
      put_u64(reply, 2);
      put_u64(reply, std::max(img.max_wts(), img.rts));
      return reply;
    }
    if (img.lock != 0 && img.lock < ctts) {
      put_u64(reply, 3);
      put_u64(reply, std::max(img.max_wts(), img.rts));
      return reply;
    }
    if (ctts > img.rts) cl.sim.store_u64(ctx.node, t.offset + 8, ctts);
    put_u64(reply, 1);
    put_u64(reply, std::max(img.max_wts(), img.rts));
    put_u64(reply, t.offset);
    put_u64(reply, img.slots[static_cast<std::size_t>(pick)].wts);
    put_u64(reply, std::max(img.rts, ctts));
    put_bytes(reply, img.slots[static_cast<std::size_t>(pick)].record);
    return reply;
  });

  // reply: status u64 (1 ok, 2 lock busy, 3 Cond W1 failed), adjust u64,
  // then on ok: offset, max wts, rts, newest record.
  cl.sim.register_handler(kHMvccWrite, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t ctts = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    TupleImage img = cl.store.read_tuple_local(table, key);
    Bytes reply;
    std::uint64_t adjust = std::max(img.max_wts(), img.rts);
    if (!w1_holds(img, ctts)) {
      put_u64(reply, 3);
      put_u64(reply, adjust);
      return reply;
    }
    std::uint64_t old = cl.sim.cas_u64(ctx.node, t.offset, 0, ctts);
    if (old != 0) {
      put_u64(reply, 2);
      put_u64(reply, std::max(adjust, old));
      return reply;
    }
    put_u64(reply, 1);
    put_u64(reply, adjust);
    put_u64(reply, t.offset);
    put_u64(reply, img.max_wts());
    put_u64(reply, img.rts);
    put_u64(reply, img.min_wts_index());
    put_bytes(reply, img.newest_record());
    return reply;
  });

  cl.sim.register_handler(kHMvccCommit, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t ctts = r.u64();
    const TupleLayout& layout = cl.store.layout(table);
    Bytes record = r.bytes(layout.padded_len);
    std::uint64_t off = cl.store.tuple_offset(table, key);
    TupleImage img = cl.store.read_tuple_local(table, key);
    std::uint32_t slot = img.min_wts_index();
    Bytes span;
    put_u64(span, ctts);
    put_bytes(span, record);
    cl.sim.store_bytes(ctx.node, off + layout.slot_off(slot), span);
    cl.sim.store_u64(ctx.node, off, 0);
    return Bytes{};
  });
}

}  // namespace rdmacc
