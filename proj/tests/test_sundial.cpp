#include "doctest.h"

#include "helpers.hpp"

using namespace rdmacc;
using namespace rdmacc::testing;

namespace {

LogicFn add_logic() {
  return [](const TxnSpec& spec, const std::map<FullKey, Bytes>& in) {
    std::map<FullKey, Bytes> out;
    for (auto k : spec.ws) {
      Bytes v = in.at(k);
      write_u64(v, 0, read_u64(v, 0) + 1);
      out[k] = v;
    }
    return out;
  };
}

void set_lease(Cluster& cl, TableId t, Key k, std::uint64_t wts, std::uint64_t rts) {
  set_slot(cl, t, k, 0, wts, 500);
  cl.sim.store_u64(cl.store.owner(t, k), cl.store.tuple_offset(t, k) + 8, rts);
}

}  // namespace

TEST_CASE("read raises commit_tts to the tuple's wts (max rule)") {
  for (const char* hybrid : {"11111", "00000"}) {
    auto bed = make_bed();
    set_lease(bed.cluster(), 0, 1, 10, 12);
    Coordinator co(bed.cluster(), TaskId{0, 0, 0});
    TxnContext ctx = new_ctx(co, Protocol::kSundial, hybrid);
    ctx.commit_tts = Timestamp(3);
    auto body = [&]() -> Task<void> { CHECK(co_await sundial_read(co, ctx, 0, 1)); };
    bed.sim().spawn(co.id, body());
    bed.sim().run_until_quiescent();
    CHECK(ctx.commit_tts.packed() == 10);
    CHECK(ctx.rs[0].wts == 10);
    CHECK(ctx.rs[0].rts == 12);
    CHECK(record_value(ctx.rs[0].record) == 500);

    // max is monotone: a larger commit_tts stays put
    TxnContext ctx2 = new_ctx(co, Protocol::kSundial, hybrid);
    ctx2.commit_tts = Timestamp(12);
    auto body2 = [&]() -> Task<void> { CHECK(co_await sundial_read(co, ctx2, 0, 1)); };
    bed.sim().spawn(TaskId{0, 0, 1}, body2());
    bed.sim().run_until_quiescent();
    CHECK(ctx2.commit_tts.packed() == 12);

    // fresh tuple (wts 0) leaves commit_tts unchanged
    TxnContext ctx3 = new_ctx(co, Protocol::kSundial, hybrid);
    auto body3 = [&]() -> Task<void> { CHECK(co_await sundial_read(co, ctx3, 0, 3)); };
    bed.sim().spawn(TaskId{0, 0, 2}, body3());
    bed.sim().run_until_quiescent();
    CHECK(ctx3.commit_tts.packed() == 0);
  }
}

TEST_CASE("write fetch: commit_tts rises past the lease and conflicts abort") {
  for (const char* hybrid : {"11111", "00000"}) {
    auto bed = make_bed();
    set_lease(bed.cluster(), 0, 1, 3, 7);
    Coordinator co(bed.cluster(), TaskId{0, 0, 0});
    TxnContext ctx = new_ctx(co, Protocol::kSundial, hybrid);
    auto body = [&]() -> Task<void> { CHECK(co_await sundial_write_fetch(co, ctx, 0, 1)); };
    bed.sim().spawn(co.id, body());
    bed.sim().run_until_quiescent();
    CHECK(ctx.commit_tts.packed() == 8);  // rts + 1
    CHECK(ctx.ws[0].locked);
    CHECK(bed.store().read_tuple_local(0, 1).lock == ctx.ctts.packed());

    // write-write conflict: the lock is held
    Coordinator co2(bed.cluster(), TaskId{0, 0, 1});
    TxnContext ctx2 = new_ctx(co2, Protocol::kSundial, hybrid);
    bool ok2 = true;
    auto body2 = [&]() -> Task<void> { ok2 = co_await sundial_write_fetch(co2, ctx2, 0, 1); };
    bed.sim().spawn(co2.id, body2());
    bed.sim().run_until_quiescent();
    CHECK_FALSE(ok2);
    CHECK(ctx2.abort_reason == AbortReason::kLockConflict);
  }
}

TEST_CASE("read-modify-write key aborts when its wts drifted since the read") {
  auto bed = make_bed();
  set_lease(bed.cluster(), 0, 1, 9, 9);
  Coordinator co(bed.cluster(), TaskId{0, 0, 0});
  TxnContext ctx = new_ctx(co, Protocol::kSundial, "11111");
  // the read observed wts=5; the tuple moved on to wts=9
  RsEntry stale;
  stale.table = 0;
  stale.key = 1;
  stale.node = 1;
  stale.offset = bed.store().tuple_offset(0, 1);
  stale.wts = 5;
  ctx.rs.push_back(stale);
  bool ok = true;
  auto body = [&]() -> Task<void> { ok = co_await sundial_write_fetch(co, ctx, 0, 1); };
  bed.sim().spawn(co.id, body());
  bed.sim().run_until_quiescent();
  CHECK_FALSE(ok);
  CHECK(ctx.abort_reason == AbortReason::kValidateFail);
}

TEST_CASE("validation: covered leases cost nothing, renewal extends rts") {
  auto bed = make_bed();
  set_lease(bed.cluster(), 0, 1, 10, 12);
  Coordinator co(bed.cluster(), TaskId{0, 0, 0});

  // commit_tts 9 <= rts 12: zero network operations
  TxnContext ctx = new_ctx(co, Protocol::kSundial, "11111");
  auto body = [&]() -> Task<void> {
    CHECK(co_await sundial_read(co, ctx, 0, 1));  // commit_tts -> 10
    std::uint64_t trips = ctx.round_trips;
    ctx.commit_tts = Timestamp(9);
    CHECK(co_await sundial_validate(co, ctx));
    CHECK(ctx.round_trips == trips);  // lease already covers

    // commit_tts 15 > rts 12: renew via re-read + CAS
    ctx.commit_tts = Timestamp(15);
    CHECK(co_await sundial_validate(co, ctx));
  };
  bed.sim().spawn(co.id, body());
  bed.sim().run_until_quiescent();
  CHECK(bed.store().read_tuple_local(0, 1).rts == 15);
}

TEST_CASE("renewal fails when the version changed or a writer holds the lock") {
  auto bed = make_bed();
  set_lease(bed.cluster(), 0, 1, 10, 12);
  Coordinator co(bed.cluster(), TaskId{0, 0, 0});
  TxnContext ctx = new_ctx(co, Protocol::kSundial, "11111");
  auto body = [&]() -> Task<void> {
    CHECK(co_await sundial_read(co, ctx, 0, 1));
    // a later writer committed: wts moved from 10 to 14
    set_slot(bed.cluster(), 0, 1, 0, 14, 999);
    ctx.commit_tts = Timestamp(15);
    CHECK_FALSE(co_await sundial_validate(co, ctx));
  };
  bed.sim().spawn(co.id, body());
  bed.sim().run_until_quiescent();
  CHECK(ctx.abort_reason == AbortReason::kValidateFail);

  // locked tuple blocks an extension (but not a covered lease)
  auto bed2 = make_bed();
  set_lease(bed2.cluster(), 0, 1, 10, 12);
  Coordinator co2(bed2.cluster(), TaskId{0, 0, 0});
  TxnContext c2 = new_ctx(co2, Protocol::kSundial, "11111");
  auto body2 = [&]() -> Task<void> {
    CHECK(co_await sundial_read(co2, c2, 0, 1));
    bed2.sim().store_u64(1, bed2.store().tuple_offset(0, 1), 777);  // writer's lock
    c2.commit_tts = Timestamp(15);
    CHECK_FALSE(co_await sundial_validate(co2, c2));  // needs extension: fails
    c2.status = TxnStatus::kActive;
    c2.commit_tts = Timestamp(11);
    CHECK(co_await sundial_validate(co2, c2));  // covered: lock is irrelevant
  };
  bed2.sim().spawn(co2.id, body2());
  bed2.sim().run_until_quiescent();
}

TEST_CASE("renewal CAS loses to a concurrent rts move and retries, never stale") {
  auto bed = make_bed(1, 4, /*one_sided_rt=*/4);
  set_lease(bed.cluster(), 0, 1, 10, 12);
  Coordinator co(bed.cluster(), TaskId{0, 0, 0});
  co.cache.map.emplace(FullKey{0, 1}, bed.store().tuple_offset(0, 1));
  TxnContext ctx = new_ctx(co, Protocol::kSundial, "11111");
  bool valid = false;
  auto body = [&]() -> Task<void> {
    CHECK(co_await sundial_read(co, ctx, 0, 1));
    ctx.commit_tts = Timestamp(15);
    valid = co_await sundial_validate(co, ctx);
  };
  // The renewal's re-read applies at t=10 (after two read trips of 4); its CAS
  // applies at t=14. Another reader extends rts to 13 at t=12, between them.
  auto other = [&]() -> Task<void> {
    co_await bed.sim().delay(TaskId{1, 0, 0}, 12);
    bed.sim().store_u64(1, bed.store().tuple_offset(0, 1) + 8, 13);
  };
  bed.sim().spawn(co.id, body());
  bed.sim().spawn(TaskId{1, 0, 0}, other());
  bed.sim().run_until_quiescent();
  CHECK(valid);  // retried and extended from 13
  CHECK(bed.store().read_tuple_local(0, 1).rts == 15);
}

TEST_CASE("a writer committing mid-renewal forces an abort, not a stale lease") {
  auto bed = make_bed(1, 4, /*one_sided_rt=*/4);
  set_lease(bed.cluster(), 0, 1, 10, 12);
  Coordinator co(bed.cluster(), TaskId{0, 0, 0});
  co.cache.map.emplace(FullKey{0, 1}, bed.store().tuple_offset(0, 1));
  TxnContext ctx = new_ctx(co, Protocol::kSundial, "11111");
  bool valid = true;
  auto body = [&]() -> Task<void> {
    CHECK(co_await sundial_read(co, ctx, 0, 1));
    ctx.commit_tts = Timestamp(15);
    valid = co_await sundial_validate(co, ctx);
  };
  // A writer's commit (wts=rts=14) lands at t=12: between the renewal's
  // re-read (t=10) and its CAS (t=14). The CAS must fail; the retry sees the
  // changed wts and aborts.
  auto writer = [&]() -> Task<void> {
    co_await bed.sim().delay(TaskId{1, 0, 0}, 12);
    set_lease(bed.cluster(), 0, 1, 14, 14);
  };
  bed.sim().spawn(co.id, body());
  bed.sim().spawn(TaskId{1, 0, 0}, writer());
  bed.sim().run_until_quiescent();
  CHECK_FALSE(valid);
  CHECK(bed.store().read_tuple_local(0, 1).rts == 14);  // never extended to 15
}

TEST_CASE("commit sets the lease to [commit_tts, commit_tts] and chains readers") {
  for (const char* hybrid : {"11111", "00000"}) {
    auto bed = make_bed(/*replicas=*/2);
    Coordinator w(bed.cluster(), TaskId{0, 0, 0});
    TxnSpec wspec;
    wspec.id = 1;
    wspec.ws = {FullKey{0, 1}};
    wspec.arrival = w.id;
    bed.cluster().warm_caches({&w}, {wspec});
    set_lease(bed.cluster(), 0, 1, 3, 19);  // forces commit_tts = 20
    TxnContext wctx = new_ctx(w, Protocol::kSundial, hybrid);
    wctx.txn_id = 1;
    bool ok = false;
    auto writer = [&]() -> Task<void> { ok = co_await run_sundial_txn(w, wctx, wspec, add_logic()); };
    bed.sim().spawn(w.id, writer());
    bed.sim().run_until_quiescent();
    CHECK(ok);
    CHECK(wctx.commit_tts.packed() == 20);
    TupleImage img = bed.store().read_tuple_local(0, 1);
    CHECK(img.slots[0].wts == 20);
    CHECK(img.rts == 20);
    CHECK(img.lock == 0);

    // a subsequent reader is ordered after the new lease
    Coordinator r(bed.cluster(), TaskId{0, 0, 1});
    TxnContext rctx = new_ctx(r, Protocol::kSundial, hybrid);
    auto reader = [&]() -> Task<void> { CHECK(co_await sundial_read(r, rctx, 0, 1)); };
    bed.sim().spawn(r.id, reader());
    bed.sim().run_until_quiescent();
    CHECK(rctx.commit_tts.packed() >= 20);
  }
}

TEST_CASE("wts <= rts holds on every tuple after a batch of transactions") {
  auto bed = make_bed(/*replicas=*/2);
  std::vector<Coordinator> cos;
  for (CoroId c = 0; c < 4; ++c) cos.emplace_back(bed.cluster(), TaskId{0, 0, c});
  for (int i = 0; i < 4; ++i) {
    auto body = [&bed, &cos, i]() -> Task<void> {
      for (int n = 0; n < 6; ++n) {
        TxnSpec spec;
        spec.id = static_cast<std::uint64_t>(i * 100 + n);
        spec.rs = {FullKey{0, static_cast<Key>((i + n) % 8)}};
        spec.ws = {FullKey{0, static_cast<Key>(8 + (i * 2 + n) % 8)}};
        TxnContext ctx = new_ctx(cos[static_cast<std::size_t>(i)], Protocol::kSundial, "11111");
        ctx.txn_id = spec.id;
        co_await run_sundial_txn(cos[static_cast<std::size_t>(i)], ctx, spec, add_logic());
      }
    };
    bed.sim().spawn(cos[static_cast<std::size_t>(i)].id, body());
  }
  bed.sim().run_until_quiescent();
  for (Key k = 0; k < 16; ++k) {
    TupleImage img = bed.store().read_tuple_local(0, k);
    CHECK(img.slots[0].wts <= img.rts);
    CHECK(img.lock == 0);
  }
}
