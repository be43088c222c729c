#include "doctest.h"

#include <random>

#include "rdmacc/bytes.hpp"
#include "rdmacc/store.hpp"

using namespace rdmacc;

namespace {

SimConfig cfg4() {
  SimConfig c;
  c.nodes = 4;
  c.threads = 1;
  c.coros = 1;
  return c;
}

Bytes zero_record(TableId, Key) { return Bytes(8, 0); }

}  // namespace

TEST_CASE("tuple layout is 8-byte aligned and parse/encode round-trips") {
  TupleLayout l = TupleLayout::make(10, 4);  // deliberately unaligned record
  CHECK(l.padded_len == 16);
  CHECK(l.size == 16 + 4 * (8 + 16));
  CHECK(l.slot_off(0) % 8 == 0);
  CHECK(l.slot_record_off(3) % 8 == 0);

  // zeroed bytes parse to a fully zero tuple
  Bytes zeroed(l.size, 0);
  TupleImage img = parse_tuple(zeroed, l);
  CHECK(img.lock == 0);
  CHECK(img.rts == 0);
  for (const auto& s : img.slots) {
    CHECK(s.wts == 0);
    CHECK(s.record == Bytes(16, 0));
  }

  // encode(parse(b)) == b on random byte strings
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 10000; ++trial) {
    Bytes b(l.size);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    CHECK(encode_tuple(parse_tuple(b, l), l) == b);
  }

  CHECK_THROWS_AS(parse_tuple(Bytes(l.size - 1, 0), l), ProtocolError);
}

TEST_CASE("record bytes survive parse and newest slot selection is by max wts") {
  TupleLayout l = TupleLayout::make(8, 4);
  TupleImage img;
  img.slots.resize(4);
  for (std::uint32_t i = 0; i < 4; ++i) {
    img.slots[i].record.assign(8, static_cast<std::uint8_t>(i + 1));
    img.slots[i].wts = (i == 2) ? 90 : i;
  }
  Bytes enc = encode_tuple(img, l);
  TupleImage back = parse_tuple(enc, l);
  CHECK(back.newest_index() == 2);
  CHECK(back.newest_wts() == 90);
  CHECK(back.newest_record() == Bytes(8, 3));
  CHECK(back.min_wts_index() == 0);
  // all-zero wts ties resolve to slot 0
  for (auto& s : img.slots) s.wts = 0;
  CHECK(img.newest_index() == 0);
}

TEST_CASE("partitioning: every key has exactly one owner and local keys resolve free") {
  Simulator sim(cfg4());
  Store store(sim, 4);
  store.add_table({0, "t", 8, 64});
  store.finalize(zero_record);

  for (Key k = 0; k < 64; ++k) {
    CHECK(store.owner(0, k) == k % 4);
    CHECK(store.tuple_offset(0, k) ==
          store.tuple_offset(0, k % 4) + (k / 4) * store.layout(0).size);
  }

  OffsetCache cache;
  std::uint64_t trips = 0;
  Located loc;
  auto probe = [&](TaskId me, Key k) -> Task<void> {
    loc = co_await store.resolve_offset(me, /*my_node=*/1, cache, 0, k, &trips);
  };
  // local key: node 1 owns keys k%4==1; no network even when cold
  sim.spawn(TaskId{1, 0, 0}, probe(TaskId{1, 0, 0}, 5));
  sim.run_until_quiescent();
  CHECK(trips == 0);
  CHECK(loc.node == 1);
  CHECK(loc.offset == store.tuple_offset(0, 5));
}

TEST_CASE("cold remote lookup costs one trip, warm lookup zero, unknown key errors") {
  Simulator sim(cfg4());
  Store store(sim, 4);
  store.add_table({0, "t", 8, 64});
  store.finalize(zero_record);

  OffsetCache cache;
  std::uint64_t trips = 0;
  std::vector<Located> got;
  auto probe = [&](TaskId me) -> Task<void> {
    got.push_back(co_await store.resolve_offset(me, 1, cache, 0, 6, &trips));  // remote, cold
    got.push_back(co_await store.resolve_offset(me, 1, cache, 0, 6, &trips));  // warm
  };
  sim.spawn(TaskId{1, 0, 0}, probe(TaskId{1, 0, 0}));
  sim.run_until_quiescent();
  CHECK(trips == 1);
  CHECK(sim.round_trips() == 1);
  REQUIRE(got.size() == 2);
  CHECK(got[0].node == 2);
  CHECK(got[0].offset == store.tuple_offset(0, 6));
  CHECK(got[1].offset == got[0].offset);

  CHECK_THROWS_AS(store.owner(0, 64), LookupError);
  CHECK_THROWS_AS(store.owner(7, 0), LookupError);
}

TEST_CASE("initial records land in slot 0 and snapshots trim padding") {
  Simulator sim(cfg4());
  Store store(sim, 4);
  store.add_table({0, "t", 5, 8});  // padded to 8
  store.finalize([](TableId, Key k) { return Bytes(5, static_cast<std::uint8_t>(k + 1)); });

  TupleImage img = store.read_tuple_local(0, 3);
  CHECK(img.lock == 0);
  CHECK(img.slots[0].wts == 0);
  CHECK(Bytes(img.slots[0].record.begin(), img.slots[0].record.begin() + 5) == Bytes(5, 4));

  auto snap = store.snapshot();
  CHECK(snap.size() == 8);
  CHECK(snap.at(FullKey{0, 3}) == Bytes(5, 4));
  CHECK(snap.at(FullKey{0, 3}).size() == 5);
}
