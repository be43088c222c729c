#pragma once

#include <memory>

#include "rdmacc/bytes.hpp"
#include "rdmacc/cluster.hpp"
#include "rdmacc/proto_2pl.hpp"
#include "rdmacc/proto_mvcc.hpp"
#include "rdmacc/proto_occ.hpp"
#include "rdmacc/proto_sundial.hpp"

namespace rdmacc::testing {

struct TestBed {
  std::unique_ptr<Cluster> cl;

  Cluster& cluster() { return *cl; }
  Simulator& sim() { return cl->sim; }
  Store& store() { return cl->store; }
};

// Two nodes, one table "t" of 16 eight-byte records initialized to 100+k.
inline TestBed make_bed(std::uint32_t replicas = 1, std::uint32_t slots = 4,
                        SimTime one_sided_rt = 2, SimTime rpc_rt = 4) {
  ClusterConfig cfg;
  cfg.nodes = 2;
  cfg.threads = 1;
  cfg.coros = 4;
  cfg.replicas = replicas;
  cfg.version_slots = slots;
  cfg.latency.one_sided_rt = one_sided_rt;
  cfg.latency.rpc_rt = rpc_rt;
  TestBed bed;
  bed.cl = std::make_unique<Cluster>(cfg, std::vector<TableSpec>{TableSpec{0, "t", 8, 16}},
                                     [](TableId, Key k) {
                                       Bytes b;
                                       put_u64(b, 100 + k);
                                       return b;
                                     });
  install_2pl_handlers(*bed.cl);
  install_occ_handlers(*bed.cl);
  install_mvcc_handlers(*bed.cl);
  install_sundial_handlers(*bed.cl);
  return bed;
}

inline TxnContext new_ctx(Coordinator& co, Protocol p, const std::string& hybrid) {
  TxnContext ctx;
  ctx.protocol = p;
  ctx.ctts = co.clock.begin_txn();
  ctx.hybrid = HybridCode::parse(hybrid, p);
  return ctx;
}

// Overwrite one version slot in place (test scaffolding for slot layouts).
inline void set_slot(Cluster& cl, TableId t, Key k, std::uint32_t slot, std::uint64_t wts,
                     std::uint64_t value) {
  const TupleLayout& layout = cl.store.layout(t);
  NodeId n = cl.store.owner(t, k);
  std::uint64_t off = cl.store.tuple_offset(t, k);
  cl.sim.store_u64(n, off + layout.slot_off(slot), wts);
  Bytes rec(layout.padded_len, 0);
  write_u64(rec, 0, value);
  cl.sim.store_bytes(n, off + layout.slot_record_off(slot), rec);
}

inline std::uint64_t record_value(const Bytes& rec) { return read_u64(rec, 0); }

}  // namespace rdmacc::testing
