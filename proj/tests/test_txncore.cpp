#include "doctest.h"

#include <random>

#include "rdmacc/bytes.hpp"
#include "rdmacc/cluster.hpp"
#include "rdmacc/txn.hpp"

using namespace rdmacc;

TEST_CASE("timestamp packing matches the declared bit layout and is injective") {
  // recomputed from the layout: clock<<24 | machine<<16 | thread<<8 | coro
  CHECK(Timestamp::make(1, 2, 3, 4).packed() ==
        ((1ull << 24) | (2ull << 16) | (3ull << 8) | 4ull));
  CHECK(Timestamp::make(0, 0, 0, 0).packed() == 0);  // reserved; generators start at 1

  Timestamp t = Timestamp::make(77, 1, 2, 3);
  CHECK(t.clock() == 77);
  CHECK(t.machine() == 1);
  CHECK(t.thread() == 2);
  CHECK(t.coro() == 3);

  // clock dominates regardless of ids
  CHECK(Timestamp::make(5, 255, 255, 255) < Timestamp::make(6, 0, 0, 0));

  CHECK_THROWS_AS(Timestamp::make(Timestamp::kMaxClock + 1, 0, 0, 0), ConfigError);
  CHECK_THROWS_AS(Timestamp::make(1, 256, 0, 0), ConfigError);
}

TEST_CASE("per-coroutine clocks generate unique, monotone timestamps") {
  TsClock a(0, 0, 0), b(1, 0, 0);
  Timestamp a1 = a.begin_txn();
  CHECK(a1.clock() == 1);  // zero is reserved
  Timestamp a2 = a.begin_txn();
  CHECK(a1 < a2);
  Timestamp b1 = b.begin_txn();
  CHECK(b1 != a1);  // same clock value, different machine id
}

TEST_CASE("clock adjustment is a running max") {
  TsClock c(0, 0, 0);
  for (int i = 0; i < 5; ++i) c.begin_txn();
  CHECK(c.clock() == 5);
  c.observe(Timestamp::make(9, 3, 3, 3));
  CHECK(c.clock() == 9);
  c.observe(Timestamp::make(5, 0, 0, 0));
  CHECK(c.clock() == 9);  // never decreases

  // fold-max oracle over a random observation sequence
  std::mt19937_64 rng(7);
  TsClock d(0, 0, 1);
  std::uint64_t expect = 0;
  for (int i = 0; i < 200; ++i) {
    std::uint64_t obs = rng() % 1000;
    expect = std::max(expect, obs);
    d.observe(Timestamp::make(obs, 0, 0, 0));
    CHECK(d.clock() == expect);
  }
}

TEST_CASE("hybrid codes: width, parsing, enumeration") {
  CHECK(protocol_stages(Protocol::kNoWait).size() == 3);
  CHECK(protocol_stages(Protocol::kWaitDie).size() == 3);
  CHECK(protocol_stages(Protocol::kOcc).size() == 6);
  CHECK(protocol_stages(Protocol::kMvcc).size() == 4);
  CHECK(protocol_stages(Protocol::kSundial).size() == 5);
  CHECK(protocol_stages(Protocol::kCalvin).size() == 2);

  CHECK(enumerate_hybrids(Protocol::kNoWait).size() == 8);
  CHECK(enumerate_hybrids(Protocol::kOcc).size() == 64);
  CHECK(enumerate_hybrids(Protocol::kMvcc).size() == 16);

  // code 0 is pure RPC; code 2^k-1 is pure one-sided
  auto codes = enumerate_hybrids(Protocol::kMvcc);
  CHECK(codes.front() == HybridCode::all_rpc(Protocol::kMvcc));
  CHECK(codes.back() == HybridCode::all_one_sided(Protocol::kMvcc));

  HybridCode h = HybridCode::parse("101", Protocol::kNoWait);
  CHECK(h.str() == "101");
  CHECK(h.one_sided(Protocol::kNoWait, Stage::kFetch));
  CHECK_FALSE(h.one_sided(Protocol::kNoWait, Stage::kLog));
  CHECK(h.one_sided(Protocol::kNoWait, Stage::kCommit));

  CHECK_THROWS_WITH_AS(HybridCode::parse("10", Protocol::kOcc), doctest::Contains("6"),
                       ConfigError);
  CHECK_THROWS_AS(HybridCode::parse("10x", Protocol::kNoWait), ConfigError);
}

TEST_CASE("log records encode and decode") {
  LogRecord rec;
  rec.ctts = Timestamp::make(3, 1, 0, 2).packed();
  rec.writes.emplace_back(FullKey{0, 17}, Bytes{1, 2, 3, 4});
  rec.writes.emplace_back(FullKey{2, 5}, Bytes(8, 9));
  LogRecord back = decode_log_record(encode_log_record(rec));
  CHECK(back.ctts == rec.ctts);
  REQUIRE(back.writes.size() == 2);
  CHECK(back.writes[0].first == FullKey{0, 17});
  CHECK(back.writes[0].second == Bytes{1, 2, 3, 4});
  CHECK(back.writes[1].first == FullKey{2, 5});
}

namespace {

Cluster make_cluster(std::uint32_t nodes, std::uint32_t replicas) {
  ClusterConfig cfg;
  cfg.nodes = nodes;
  cfg.threads = 1;
  cfg.coros = 1;
  cfg.replicas = replicas;
  return Cluster(cfg, {TableSpec{0, "t", 8, 16}}, [](TableId, Key) { return Bytes(8, 0); });
}

TxnContext make_ctx(Coordinator& co, Protocol p) {
  TxnContext ctx;
  ctx.ctts = co.clock.begin_txn();
  ctx.hybrid = HybridCode::all_one_sided(p);
  return ctx;
}

}  // namespace

TEST_CASE("3-way replication writes the encoded record to both backups") {
  Cluster cl = make_cluster(4, 3);
  Coordinator co(cl, TaskId{0, 0, 0});

  TxnContext ctx = make_ctx(co, Protocol::kNoWait);
  WsEntry w;
  w.table = 0;
  w.key = 4;  // owned by node 0
  w.new_record = Bytes(8, 7);
  ctx.ws.push_back(w);

  auto body = [&]() -> Task<void> { co_await log_to_backups(co, ctx, /*one_sided=*/true); };
  cl.sim.spawn(co.id, body());
  cl.sim.run_until_quiescent();

  CHECK(ctx.round_trips == 2);  // one WRITE batch per backup
  for (NodeId backup : cl.backups_of(0)) {
    std::uint64_t base = cl.log_lane_base(backup, cl.lane_index(co.id));
    std::uint64_t len = cl.sim.load_u64(backup, base);
    LogRecord rec = decode_log_record(cl.sim.load_bytes(backup, base + 8, len));
    CHECK(rec.ctts == ctx.ctts.packed());
    REQUIRE(rec.writes.size() == 1);
    CHECK(rec.writes[0].second == Bytes(8, 7));
  }
}

TEST_CASE("replication factor 1 logs nothing") {
  Cluster cl = make_cluster(4, 1);
  Coordinator co(cl, TaskId{0, 0, 0});
  TxnContext ctx = make_ctx(co, Protocol::kNoWait);
  WsEntry w;
  w.table = 0;
  w.key = 4;
  w.new_record = Bytes(8, 7);
  ctx.ws.push_back(w);
  auto body = [&]() -> Task<void> { co_await log_to_backups(co, ctx, true); };
  cl.sim.spawn(co.id, body());
  cl.sim.run_until_quiescent();
  CHECK(ctx.round_trips == 0);
  CHECK(cl.sim.round_trips() == 0);
}

TEST_CASE("rpc-mode logging reaches backups and reclaim notices are counted") {
  Cluster cl = make_cluster(2, 2);
  cl.cfg.reclaim_every = 2;
  Coordinator co(cl, TaskId{0, 0, 0});
  TxnContext ctx = make_ctx(co, Protocol::kNoWait);
  WsEntry w;
  w.table = 0;
  w.key = 2;
  w.new_record = Bytes(8, 1);
  ctx.ws.push_back(w);
  auto body = [&]() -> Task<void> {
    co_await log_to_backups(co, ctx, /*one_sided=*/false);
    co_await maybe_notify_reclaim(co);
    co_await maybe_notify_reclaim(co);
  };
  cl.sim.spawn(co.id, body());
  cl.sim.run_until_quiescent();

  std::uint64_t base = cl.log_lane_base(1, cl.lane_index(co.id));
  std::uint64_t len = cl.sim.load_u64(1, base);
  LogRecord rec = decode_log_record(cl.sim.load_bytes(1, base + 8, len));
  CHECK(rec.writes.size() == 1);
  CHECK(cl.nodes[1].reclaim_notices == 1);  // second call crossed the threshold
}
