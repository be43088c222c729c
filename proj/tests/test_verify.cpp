#include "doctest.h"

#include "rdmacc/bytes.hpp"
#include "rdmacc/verify.hpp"

using namespace rdmacc;

namespace {

CommitRecord rec(std::uint64_t id, std::vector<CommitRecord::Read> reads,
                 std::vector<CommitRecord::Write> writes) {
  CommitRecord r;
  r.txn_id = id;
  r.commit_key = id;
  r.reads = std::move(reads);
  r.writes = std::move(writes);
  return r;
}

const FullKey kX{0, 0};
const FullKey kY{0, 1};

}  // namespace

TEST_CASE("empty and disjoint histories are serializable") {
  CHECK(check_conflict_serializable({}).ok);

  std::vector<CommitRecord> h;
  h.push_back(rec(1, {{kX, 0}}, {{kX, 0, 10}}));
  h.push_back(rec(2, {{kY, 0}}, {{kY, 0, 11}}));
  auto res = check_conflict_serializable(h);
  CHECK(res.ok);
  CHECK(res.order == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("read-from and version order produce the expected serial order") {
  std::vector<CommitRecord> h;
  // txn 5 wrote x@10; txn 3 read x@10 and wrote y@20 — 5 must precede 3
  h.push_back(rec(5, {{kX, 0}}, {{kX, 0, 10}}));
  h.push_back(rec(3, {{kX, 10}}, {{kY, 0, 20}}));
  auto res = check_conflict_serializable(h);
  REQUIRE(res.ok);
  CHECK(res.order == std::vector<std::uint64_t>{5, 3});
}

TEST_CASE("write skew is detected with a two-transaction cycle witness") {
  // T1 reads y(initial), writes x; T2 reads x(initial), writes y.
  std::vector<CommitRecord> h;
  h.push_back(rec(1, {{kY, 0}}, {{kX, 0, 10}}));
  h.push_back(rec(2, {{kX, 0}}, {{kY, 0, 11}}));
  auto res = check_conflict_serializable(h);
  CHECK_FALSE(res.ok);
  REQUIRE(res.cycle.has_value());
  CHECK(res.cycle->txn_ids.size() == 2);

  // and a three-transaction ring
  const FullKey kZ{0, 2};
  std::vector<CommitRecord> ring;
  ring.push_back(rec(1, {{kY, 0}}, {{kX, 0, 10}}));
  ring.push_back(rec(2, {{kZ, 0}}, {{kY, 0, 11}}));
  ring.push_back(rec(3, {{kX, 0}}, {{kZ, 0, 12}}));
  auto res3 = check_conflict_serializable(ring);
  CHECK_FALSE(res3.ok);
  REQUIRE(res3.cycle.has_value());
  CHECK(res3.cycle->txn_ids.size() == 3);
}

TEST_CASE("lost updates and phantom reads are flagged as violations") {
  std::vector<CommitRecord> lost;
  lost.push_back(rec(1, {}, {{kX, 0, 10}}));
  lost.push_back(rec(2, {}, {{kX, 0, 11}}));  // same prev version overwritten twice
  auto res = check_conflict_serializable(lost);
  CHECK_FALSE(res.ok);
  CHECK(res.violation.find("lost update") != std::string::npos);

  std::vector<CommitRecord> phantom;
  phantom.push_back(rec(1, {{kX, 77}}, {}));  // nobody wrote version 77
  auto res2 = check_conflict_serializable(phantom);
  CHECK_FALSE(res2.ok);
  CHECK_FALSE(res2.violation.empty());
}

TEST_CASE("serial replay applies logic in order over the initial image") {
  std::vector<TxnSpec> specs(2);
  specs[0].id = 7;
  specs[0].ws = {kX};
  specs[1].id = 8;
  specs[1].rs = {kX};
  specs[1].ws = {kY};
  LogicFn logic = [](const TxnSpec& spec, const std::map<FullKey, Bytes>& in) {
    std::map<FullKey, Bytes> out;
    if (spec.id == 7) {
      Bytes v = in.at(kX);
      write_u64(v, 0, 5);
      out[kX] = v;
    } else {
      Bytes v = in.at(kY);
      write_u64(v, 0, read_u64(in.at(kX), 0) + 1);
      out[kY] = v;
    }
    return out;
  };
  std::map<FullKey, Bytes> initial{{kX, Bytes(8, 0)}, {kY, Bytes(8, 0)}};
  CHECK(replay_serial({}, specs, logic, initial) == initial);

  auto out = replay_serial({7, 8}, specs, logic, initial);
  CHECK(read_u64(out.at(kX), 0) == 5);
  CHECK(read_u64(out.at(kY), 0) == 6);

  auto out2 = replay_serial({8, 7}, specs, logic, initial);
  CHECK(read_u64(out2.at(kY), 0) == 1);  // read x before the write
}

TEST_CASE("history dump format is one comma-separated line per commit") {
  CommitRecord r = rec(17, {{kX, 3}, {kY, 0}}, {{kY, 0, 9}});
  r.commit_key = 42;
  CHECK(history_line(r) == "17,42,0:0@3;0:1@0,0:1");
  CHECK(dump_history({r}) == "17,42,0:0@3;0:1@0,0:1\n");
}
