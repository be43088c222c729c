#pragma once

#include "rdmacc/cluster.hpp"

namespace rdmacc {

struct ClusterShape {
  std::uint32_t nodes = 4;
  std::uint32_t threads = 2;
  std::uint32_t coros = 4;
};

struct SmallBankConfig {
  std::uint64_t customers = 10000;
  double hotspot_fraction = 0.0;  // 0: uniform accounts
  double hotspot_prob = 0.0;
};

struct YcsbConfig {
  std::uint32_t record_len = 64;
  std::uint32_t ops_per_txn = 10;
  double write_ratio = 0.2;
  SimTime exec_time = 5;
  double hot_fraction = 0.001;
  double hot_prob = 0.1;
  std::uint64_t keys_per_thread = 8000;  // table size scales with cluster threads
};

struct TpccConfig {
  std::uint32_t warehouses = 0;  // 0: one per (node, thread)
  std::uint32_t districts_per_wh = 10;
  std::uint64_t items = 2000;
  double remote_item_prob = 0.1;
};

// Everything a run needs from a workload: schema, initial image, transaction
// logic and a deterministic transaction stream. Generators are pure functions
// of (config, shape, seed, n).
struct WorkloadBundle {
  std::vector<TableSpec> tables;
  std::function<Bytes(TableId, Key)> initial;
  LogicFn logic;
  std::vector<TxnSpec> txns;
  SimTime exec_time = 0;
};

WorkloadBundle gen_smallbank(const SmallBankConfig& cfg, const ClusterShape& shape,
                             std::uint64_t seed, std::uint64_t n);
WorkloadBundle gen_ycsb(const YcsbConfig& cfg, const ClusterShape& shape, std::uint64_t seed,
                        std::uint64_t n);
WorkloadBundle gen_tpcc_neworder(const TpccConfig& cfg, const ClusterShape& shape,
                                 std::uint64_t seed, std::uint64_t n);

// SmallBank transaction types (logic tags).
enum SmallBankOp : std::uint32_t {
  kSbBalance = 0,
  kSbDepositChecking,
  kSbTransferSavings,
  kSbAmalgamate,
  kSbWriteCheck,
  kSbSendPayment,
};

}  // namespace rdmacc
