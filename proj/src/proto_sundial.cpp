#include "rdmacc/proto_sundial.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

Bytes pad_record(const TupleLayout& layout, const Bytes& rec) {
  Bytes out(layout.padded_len, 0);
  std::copy(rec.begin(), rec.end(), out.begin());
  return out;
}

void bump_commit_tts(TxnContext& ctx, std::uint64_t v) {
  if (v > ctx.commit_tts.packed()) ctx.commit_tts = Timestamp(v);
}

}  // namespace

Task<bool> sundial_read(Coordinator& co, TxnContext& ctx, TableId table, Key key) {
  Cluster& cl = co.cl;
  Located loc = co_await co.locate(&ctx, table, key);
  TupleRef t = cl.tuple_ref(table, key, loc);

  RsEntry e;
  e.table = table;
  e.key = key;
  e.node = t.node;

  if (!ctx.hybrid.one_sided(ctx.protocol, Stage::kRead) && t.node != co.node) {
    Bytes req;
    put_u32(req, table);
    put_u64(req, key);
    Bytes reply = co_await co.rpc(&ctx, t.node, kHSunRead, std::move(req));
    ByteReader r(reply);
    e.offset = r.u64();
    e.wts = r.u64();
    e.rts = r.u64();
    e.record = r.bytes(t.layout->padded_len);
  } else {
    TupleImage first = co_await fetch_tuple(co, &ctx, t);
    TupleImage second = co_await fetch_tuple(co, &ctx, t);
    if (first.slots[0].wts != second.slots[0].wts) {
      ctx.status = TxnStatus::kAborted;
      ctx.abort_reason = AbortReason::kDoubleReadMismatch;
      co_return false;
    }
    e.offset = t.offset;
    e.wts = second.slots[0].wts;
    e.rts = second.rts;
    e.record = second.slots[0].record;
  }
  bump_commit_tts(ctx, e.wts);
  ctx.rs.push_back(std::move(e));
  co_return true;
}

Task<bool> sundial_write_fetch(Coordinator& co, TxnContext& ctx, TableId table, Key key) {
  Cluster& cl = co.cl;
  Located loc = co_await co.locate(&ctx, table, key);
  TupleRef t = cl.tuple_ref(table, key, loc);

  auto abort_with = [&](AbortReason r) {
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = r;
  };

  WsEntry e;
  e.table = table;
  e.key = key;
  e.node = t.node;

  if (!ctx.hybrid.one_sided(ctx.protocol, Stage::kLock) && t.node != co.node) {
    Bytes req;
    put_u32(req, table);
    put_u64(req, key);
    put_u64(req, ctx.ctts.packed());
    Bytes reply = co_await co.rpc(&ctx, t.node, kHSunWrite, std::move(req));
    ByteReader r(reply);
    if (r.u64() != 1) {
      abort_with(AbortReason::kLockConflict);
      co_return false;
    }
    e.offset = r.u64();
    e.wts = r.u64();
    e.rts = r.u64();
    e.record = r.bytes(t.layout->padded_len);
  } else {
    CasReadResult locked = co_await lock_and_fetch(co, &ctx, t, ctx.ctts.packed());
    if (locked.cas_old != 0) {
      abort_with(AbortReason::kLockConflict);
      co_return false;
    }
    e.offset = t.offset;
    e.wts = locked.image.slots[0].wts;
    e.rts = locked.image.rts;
    e.record = locked.image.slots[0].record;
  }
  e.locked = true;

  // Read-modify-write keys: the version written must be the version read.
  if (const RsEntry* re = ctx.find_rs(table, key); re != nullptr && re->wts != e.wts) {
    ctx.ws.push_back(std::move(e));
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = AbortReason::kValidateFail;
    co_return false;
  }
  bump_commit_tts(ctx, e.rts + 1);
  ctx.ws.push_back(std::move(e));
  co_return true;
}

Task<bool> sundial_validate(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kRenew);
  const std::uint64_t commit_tts = ctx.commit_tts.packed();

  for (auto& e : ctx.rs) {
    if (commit_tts <= e.rts) continue;  // lease already covers the commit point
    TupleRef t{e.node, e.offset, e.table, e.key, &cl.store.layout(e.table)};

    if (!one_sided && t.node != co.node) {
      Bytes req;
      put_u32(req, e.table);
      put_u64(req, e.key);
      put_u64(req, e.wts);
      put_u64(req, commit_tts);
      Bytes reply = co_await co.rpc(&ctx, t.node, kHSunRenew, std::move(req));
      if (read_u64(reply, 0) != 1) {
        ctx.status = TxnStatus::kAborted;
        ctx.abort_reason = AbortReason::kValidateFail;
        co_return false;
      }
      continue;
    }

    bool renewed = false;
    for (std::uint32_t attempt = 0; attempt < cl.cfg.renew_retry_max; ++attempt) {
      TupleImage img = co_await fetch_tuple(co, &ctx, t);
      if (img.slots[0].wts != e.wts) break;  // a later writer committed
      if (img.rts >= commit_tts) {           // another reader extended past us
        renewed = true;
        break;
      }
      if (img.lock != 0 && img.lock != ctx.ctts.packed()) break;  // writer pending
      std::uint64_t old = co_await cas_cell(co, &ctx, t, 8, img.rts, commit_tts);
      if (old == img.rts) {
        renewed = true;
        break;
      }
      // rts moved under us: re-read and re-check while still extendable.
    }
    if (!renewed) {
      ctx.status = TxnStatus::kAborted;
      ctx.abort_reason = AbortReason::kValidateFail;
      co_return false;
    }
  }
  co_return true;
}

Task<void> sundial_commit(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kCommit);
  const std::uint64_t commit_tts = ctx.commit_tts.packed();
  std::vector<Ticket<BatchResult>> batches;
  std::vector<Ticket<Bytes>> rpcs;
  for (auto& e : ctx.ws) {
    const TupleLayout& layout = cl.store.layout(e.table);
    // Contiguous span [rts | slot0.wts | slot0.record] starting at offset 8.
    Bytes span;
    put_u64(span, commit_tts);
    put_u64(span, commit_tts);
    put_bytes(span, e.new_record);
    if (e.node == co.node) {
      co_await co.local_op(&ctx);
      cl.sim.store_bytes(e.node, e.offset + 8, span);
      cl.sim.store_u64(e.node, e.offset, 0);
    } else if (one_sided) {
      DoorbellBatch b;
      b.dst = e.node;
      b.requests.push_back(VerbRequest::write(e.offset + 8, std::move(span)));
      Bytes zero;
      put_u64(zero, 0);
      b.requests.push_back(VerbRequest::write(e.offset, std::move(zero)));
      ++ctx.round_trips;
      batches.push_back(cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u32(req, e.table);
      put_u64(req, e.key);
      put_u64(req, commit_tts);
      put_bytes(req, e.new_record);
      ++ctx.round_trips;
      rpcs.push_back(cl.sim.rpc_call(co.id, e.node, kHSunCommit, std::move(req)));
    }
    e.locked = false;
  }
  for (auto& t : batches) co_await cl.sim.await_ticket(co.id, t, "sundial-commit");
  for (auto& t : rpcs) co_await cl.sim.await_ticket(co.id, t, "sundial-commit");
}

Task<void> sundial_release(Coordinator& co, TxnContext& ctx) {
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

Task<bool> run_sundial_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                           const LogicFn& logic) {
  Cluster& cl = co.cl;
  {
    StageSpan span(co, ctx, Stage::kRead);
    for (auto k : spec.rs)
      if (!co_await sundial_read(co, ctx, k.table, k.key)) co_return false;
  }
  {
    StageSpan span(co, ctx, Stage::kLock);
    for (auto k : spec.ws) {
      if (!co_await sundial_write_fetch(co, ctx, k.table, k.key)) {
        co_await sundial_release(co, ctx);
        co_return false;
      }
    }
  }
  co_await co.compute(&ctx, cl.cfg.exec_time);
  auto out = logic(spec, gather_inputs(cl.store, ctx));
  for (auto& e : ctx.ws)
    e.new_record = pad_record(cl.store.layout(e.table), out.at(FullKey{e.table, e.key}));

  {
    StageSpan span(co, ctx, Stage::kRenew);
    if (!co_await sundial_validate(co, ctx)) {
      co_await sundial_release(co, ctx);
      co_return false;
    }
  }
  co_await log_to_backups(co, ctx, ctx.hybrid.one_sided(ctx.protocol, Stage::kLog));
  {
    StageSpan span(co, ctx, Stage::kCommit);
    co_await sundial_commit(co, ctx);
  }
  ctx.status = TxnStatus::kCommitted;
  CommitRecord rec = make_commit_record(ctx, ctx.commit_tts.packed());
  for (auto& w : rec.writes) w.new_wts = ctx.commit_tts.packed();
  cl.history.push_back(std::move(rec));
  ++cl.committed;
  co_await maybe_notify_reclaim(co);
  co_return true;
}

void install_sundial_handlers(Cluster& cl) {
  cl.sim.register_handler(kHSunRead, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    TupleImage img = cl.store.read_tuple_local(table, key);
    Bytes reply;
    put_u64(reply, t.offset);
    put_u64(reply, img.slots[0].wts);
    put_u64(reply, img.rts);
    put_bytes(reply, img.slots[0].record);
    return reply;
  });

  cl.sim.register_handler(kHSunWrite, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t ts = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    Bytes reply;
    std::uint64_t old = cl.sim.cas_u64(ctx.node, t.offset, 0, ts);
    if (old != 0) {
      put_u64(reply, 0);
      return reply;
    }
    TupleImage img = cl.store.read_tuple_local(table, key);
    put_u64(reply, 1);
    put_u64(reply, t.offset);
    put_u64(reply, img.slots[0].wts);
    put_u64(reply, img.rts);
    put_bytes(reply, img.slots[0].record);
    return reply;
  });

  cl.sim.register_handler(kHSunRenew, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t wts = r.u64();
    std::uint64_t commit_tts = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    TupleImage img = cl.store.read_tuple_local(table, key);
    Bytes reply;
    if (wts != img.slots[0].wts || (commit_tts > img.rts && img.lock != 0)) {
      put_u64(reply, 0);
      return reply;
    }
    if (img.rts < commit_tts) cl.sim.store_u64(ctx.node, t.offset + 8, commit_tts);
    put_u64(reply, 1);
    return reply;
  });

  cl.sim.register_handler(kHSunCommit, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t commit_tts = r.u64();
    const TupleLayout& layout = cl.store.layout(table);
    Bytes record = r.bytes(layout.padded_len);
    std::uint64_t off = cl.store.tuple_offset(table, key);
    Bytes span;
    put_u64(span, commit_tts);
    put_u64(span, commit_tts);
    put_bytes(span, record);
    cl.sim.store_bytes(ctx.node, off + 8, span);
    cl.sim.store_u64(ctx.node, off, 0);
    return Bytes{};
  });
}

}  // namespace rdmacc
