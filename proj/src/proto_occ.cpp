#include "rdmacc/proto_occ.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

Bytes pad_record(const TupleLayout& layout, const Bytes& rec) {
  Bytes out(layout.padded_len, 0);
  std::copy(rec.begin(), rec.end(), out.begin());
  return out;
}

}  // namespace

Task<void> occ_read(Coordinator& co, TxnContext& ctx, TableId table, Key key, bool is_write) {
  Cluster& cl = co.cl;
  Located loc = co_await co.locate(&ctx, table, key);
  TupleRef t = cl.tuple_ref(table, key, loc);
  TupleImage img;
  if (ctx.hybrid.one_sided(ctx.protocol, Stage::kRead) || t.node == co.node) {
    img = co_await fetch_tuple(co, &ctx, t);
  } else {
    Bytes req;
    put_u32(req, table);
    put_u64(req, key);
    Bytes reply = co_await co.rpc(&ctx, t.node, kHOccRead, std::move(req));
    ByteReader r(reply);
    t.offset = r.u64();
    img = parse_tuple(r.bytes(t.layout->size), *t.layout);
  }
  // A locked tuple is still readable; validation catches conflicts later.
  if (is_write) {
    WsEntry e;
    e.table = table;
    e.key = key;
    e.node = t.node;
    e.offset = t.offset;
    e.wts = img.slots[0].wts;
    e.rts = img.rts;
    e.record = img.slots[0].record;
    ctx.ws.push_back(std::move(e));
  } else {
    RsEntry e;
    e.table = table;
    e.key = key;
    e.node = t.node;
    e.offset = t.offset;
    e.wts = img.slots[0].wts;
    e.rts = img.rts;
    e.record = img.slots[0].record;
    ctx.rs.push_back(std::move(e));
  }
}

Task<bool> occ_lock_ws(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kLock);
  bool ok = true;
  AbortReason reason = AbortReason::kNone;

  std::vector<std::pair<WsEntry*, Ticket<BatchResult>>> batches;
  std::vector<std::pair<WsEntry*, Ticket<Bytes>>> rpcs;
  for (auto& e : ctx.ws) {
    TupleRef t{e.node, e.offset, e.table, e.key, &cl.store.layout(e.table)};
    if (t.node == co.node) {
      co_await co.local_op(&ctx);
      std::uint64_t old = cl.sim.cas_u64(t.node, t.offset, 0, ctx.ctts.packed());
      if (old != 0) {
        ok = false;
        reason = AbortReason::kLockConflict;
      } else {
        e.locked = true;
        if (cl.store.read_tuple_local(e.table, e.key).slots[0].wts != e.wts) {
          ok = false;
          reason = AbortReason::kValidateFail;
        }
      }
    } else if (one_sided) {
      DoorbellBatch b;
      b.dst = t.node;
      b.requests.push_back(VerbRequest::cas(t.offset, 0, ctx.ctts.packed()));
      b.requests.push_back(
          VerbRequest::read(t.offset, static_cast<std::uint32_t>(t.layout->size)));
      ++ctx.round_trips;
      batches.emplace_back(&e, cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u32(req, e.table);
      put_u64(req, e.key);
      put_u64(req, ctx.ctts.packed());
      put_u64(req, e.wts);
      ++ctx.round_trips;
      rpcs.emplace_back(&e, cl.sim.rpc_call(co.id, t.node, kHOccLock, std::move(req)));
    }
  }
  for (auto& [e, ticket] : batches) {
    BatchResult r = co_await cl.sim.await_ticket(co.id, ticket, "occ-lock");
    if (r.results[0].old_value != 0) {
      ok = false;
      if (reason == AbortReason::kNone) reason = AbortReason::kLockConflict;
      continue;
    }
    e->locked = true;
    TupleImage img = parse_tuple(r.results[1].data, cl.store.layout(e->table));
    if (img.slots[0].wts != e->wts) {
      ok = false;
      if (reason == AbortReason::kNone) reason = AbortReason::kValidateFail;
    }
  }
  for (auto& [e, ticket] : rpcs) {
    Bytes reply = co_await cl.sim.await_ticket(co.id, ticket, "occ-lock");
    ByteReader r(reply);
    std::uint64_t status = r.u64();
    if (status == 1) {
      e->locked = true;
    } else {
      ok = false;
      if (reason == AbortReason::kNone)
        reason = status == 2 ? AbortReason::kValidateFail : AbortReason::kLockConflict;
    }
  }
  if (!ok) {
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = reason;
  }
  co_return ok;
}

Task<bool> occ_validate_rs(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kValidate);
  bool ok = true;

  std::vector<std::pair<RsEntry*, Ticket<BatchResult>>> batches;
  std::vector<Ticket<Bytes>> rpcs;
  for (auto& e : ctx.rs) {
    TupleRef t{e.node, e.offset, e.table, e.key, &cl.store.layout(e.table)};
    if (t.node == co.node) {
      co_await co.local_op(&ctx);
      TupleImage img = cl.store.read_tuple_local(e.table, e.key);
      if (img.slots[0].wts != e.wts || img.lock != 0) ok = false;
    } else if (one_sided) {
      DoorbellBatch b;
      b.dst = t.node;
      b.requests.push_back(
          VerbRequest::read(t.offset, static_cast<std::uint32_t>(t.layout->size)));
      ++ctx.round_trips;
      batches.emplace_back(&e, cl.sim.post_batch(co.id, std::move(b)));
    } else {
      Bytes req;
      put_u32(req, e.table);
      put_u64(req, e.key);
      put_u64(req, e.wts);
      ++ctx.round_trips;
      rpcs.push_back(cl.sim.rpc_call(co.id, e.node, kHOccValidate, std::move(req)));
    }
  }
  for (auto& [e, ticket] : batches) {
    BatchResult r = co_await cl.sim.await_ticket(co.id, ticket, "occ-validate");
    TupleImage img = parse_tuple(r.results[0].data, cl.store.layout(e->table));
    if (img.slots[0].wts != e->wts || img.lock != 0) ok = false;
  }
  for (auto& ticket : rpcs) {
    Bytes reply = co_await cl.sim.await_ticket(co.id, ticket, "occ-validate");
    if (read_u64(reply, 0) != 1) ok = false;
  }
  if (!ok) {
    ctx.status = TxnStatus::kAborted;
    ctx.abort_reason = AbortReason::kValidateFail;
  }
  co_return ok;
}

Task<void> occ_commit(Coordinator& co, TxnContext& ctx) {
  Cluster& cl = co.cl;
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kCommit);
  std::vector<Ticket<BatchResult>> batches;
  std::vector<Ticket<Bytes>> rpcs;
  for (auto& e : ctx.ws) {
    const TupleLayout& layout = cl.store.layout(e.table);
    Bytes span;
    put_u64(span, ctx.ctts.packed());
    put_bytes(span, e.new_record);
    if (e.node == co.node) {
      co_await co.local_op(&ctx);
      cl.sim.store_bytes(e.node, e.offset + layout.slot_off(0), span);
      cl.sim.store_u64(e.node, e.offset, 0);
    } else if (one_sided) {
      DoorbellBatch b;
      b.dst = e.node;
      b.requests.push_back(VerbRequest::write(e.offset + layout.slot_off(0), std::move(span)));
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
      rpcs.push_back(cl.sim.rpc_call(co.id, e.node, kHOccCommit, std::move(req)));
    }
    e.locked = false;
  }
  for (auto& t : batches) co_await cl.sim.await_ticket(co.id, t, "occ-commit");
  for (auto& t : rpcs) co_await cl.sim.await_ticket(co.id, t, "occ-commit");
}

Task<void> occ_release(Coordinator& co, TxnContext& ctx) {
  const bool one_sided = ctx.hybrid.one_sided(ctx.protocol, Stage::kRelease);
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

Task<bool> run_occ_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                       const LogicFn& logic) {
  Cluster& cl = co.cl;
  {
    StageSpan span(co, ctx, Stage::kRead);
    for (auto k : spec.rs) co_await occ_read(co, ctx, k.table, k.key, false);
    for (auto k : spec.ws) co_await occ_read(co, ctx, k.table, k.key, true);
  }
  co_await co.compute(&ctx, cl.cfg.exec_time);
  auto out = logic(spec, gather_inputs(cl.store, ctx));
  for (auto& e : ctx.ws)
    e.new_record = pad_record(cl.store.layout(e.table), out.at(FullKey{e.table, e.key}));

  {
    StageSpan span(co, ctx, Stage::kLock);
    if (!co_await occ_lock_ws(co, ctx)) {
      StageSpan rel(co, ctx, Stage::kRelease);
      co_await occ_release(co, ctx);
      co_return false;
    }
  }
  {
    StageSpan span(co, ctx, Stage::kValidate);
    if (!co_await occ_validate_rs(co, ctx)) {
      StageSpan rel(co, ctx, Stage::kRelease);
      co_await occ_release(co, ctx);
      co_return false;
    }
  }
  co_await log_to_backups(co, ctx, ctx.hybrid.one_sided(ctx.protocol, Stage::kLog));
  {
    StageSpan span(co, ctx, Stage::kCommit);
    co_await occ_commit(co, ctx);
  }
  ctx.status = TxnStatus::kCommitted;
  CommitRecord rec = make_commit_record(ctx, ctx.ctts.packed());
  for (auto& w : rec.writes) w.new_wts = ctx.ctts.packed();
  cl.history.push_back(std::move(rec));
  ++cl.committed;
  co_await maybe_notify_reclaim(co);
  co_return true;
}

void install_occ_handlers(Cluster& cl) {
  cl.sim.register_handler(kHOccRead, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    Bytes reply;
    put_u64(reply, t.offset);
    put_bytes(reply, cl.sim.load_bytes(ctx.node, t.offset, t.layout->size));
    return reply;
  });

  // status: 1 ok, 0 lock busy, 2 wts drifted (lock released again before reply).
  cl.sim.register_handler(kHOccLock, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t ts = r.u64();
    std::uint64_t expected_wts = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    Bytes reply;
    std::uint64_t old = cl.sim.cas_u64(ctx.node, t.offset, 0, ts);
    if (old != 0) {
      put_u64(reply, 0);
      return reply;
    }
    std::uint64_t wts = cl.sim.load_u64(ctx.node, t.offset + t.layout->slot_off(0));
    if (wts != expected_wts) {
      cl.sim.store_u64(ctx.node, t.offset, 0);
      put_u64(reply, 2);
      return reply;
    }
    put_u64(reply, 1);
    return reply;
  });

  cl.sim.register_handler(kHOccValidate, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    TableId table = r.u32();
    Key key = r.u64();
    std::uint64_t expected_wts = r.u64();
    TupleRef t = cl.local_tuple_ref(table, key);
    std::uint64_t lock = cl.sim.load_u64(ctx.node, t.offset);
    std::uint64_t wts = cl.sim.load_u64(ctx.node, t.offset + t.layout->slot_off(0));
    Bytes reply;
    put_u64(reply, (lock == 0 && wts == expected_wts) ? 1 : 0);
    return reply;
  });

  cl.sim.register_handler(kHOccCommit, [&cl](RpcContext& ctx) -> std::optional<Bytes> {
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
