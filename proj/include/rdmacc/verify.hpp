#pragma once

#include <map>
#include <optional>

#include "rdmacc/cluster.hpp"

namespace rdmacc {

// A committed history plus the version tags observed at read time; input to
// the serializability oracle. Protocol-agnostic: only CommitRecords and store
// images go in.
struct History {
  std::vector<CommitRecord> records;
};

struct CycleWitness {
  std::vector<std::uint64_t> txn_ids;  // a shortest cycle through its first node
};

struct CheckResult {
  bool ok = false;
  std::vector<std::uint64_t> order;  // topological (serial) order of txn ids
  std::optional<CycleWitness> cycle;
  std::string violation;  // non-cycle defects (forked/broken version chains)

  explicit operator bool() const { return ok; }
};

// Builds the direct serialization graph from read-from, version-order and
// anti-dependency edges and returns a serial order or a cycle witness.
CheckResult check_conflict_serializable(const std::vector<CommitRecord>& history);

// Executes committed transactions serially in `order` over `initial` and
// returns the resulting image. Used to assert the simulated store equals a
// serial replay in the oracle's (or a protocol-specific) order.
std::map<FullKey, Bytes> replay_serial(const std::vector<std::uint64_t>& order,
                                       const std::vector<TxnSpec>& specs, const LogicFn& logic,
                                       const std::map<FullKey, Bytes>& initial);

// One line per commit: txn_id,commit_key,reads(key@wts;...),writes(key;...)
std::string history_line(const CommitRecord& rec);
std::string dump_history(const std::vector<CommitRecord>& history);

}  // namespace rdmacc
