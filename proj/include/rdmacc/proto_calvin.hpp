#pragma once

#include "rdmacc/cluster.hpp"

namespace rdmacc {

// Deterministic epoch execution. Per epoch, every node sequences its locally
// received batch, broadcasts it into the peers' request buffers (CRB), waits
// for all headers, sorts the union by (timestamp, txn id) into one consensus
// schedule and executes it serially: participants lock local records, forward
// their values to the active participants through per-txn forward-buffer
// (CFB) cells, actives run the logic and write their local partition. An
// epoch barrier (done cells) keeps nodes in lockstep.

struct CalvinConfig {
  std::uint32_t batch_size = 100;  // transactions per sequencer per epoch
  std::uint32_t max_txn_keys = 34;
};

struct CalvinRuntime {
  CalvinConfig cfg;
  std::uint32_t epochs = 0;
  std::uint64_t slot_bytes = 0;
  std::uint64_t fwd_bytes = 0;   // payload area of one CFB cell
  std::uint64_t cell_bytes = 0;  // payload + trailing length cell
  std::uint64_t crb_stride = 0;  // header + batch_size slots
  std::uint64_t cfb_stride = 0;  // total_slots cells
  std::uint64_t total_slots = 0;
  std::vector<std::uint64_t> crb_base;     // per node
  std::vector<std::uint64_t> cfb_base;     // per node
  std::vector<std::uint64_t> done_base;    // per node
  std::vector<std::uint64_t> backup_base;  // per node (async input replication)

  std::uint64_t crb_off(NodeId on, NodeId sender) const {
    return crb_base[on] + sender * crb_stride;
  }
  std::uint64_t cfb_payload_off(NodeId on, NodeId sender, std::uint64_t slot) const {
    return cfb_base[on] + sender * cfb_stride + slot * cell_bytes;
  }
  std::uint64_t cfb_len_off(NodeId on, NodeId sender, std::uint64_t slot) const {
    return cfb_payload_off(on, sender, slot) + fwd_bytes;
  }
  std::uint64_t done_off(NodeId on, NodeId from) const { return done_base[on] + from * 8; }
};

// Per-node epoch-machinery costs that have no single transaction to bill.
struct CalvinNodeStats {
  std::uint64_t sequencing_trips = 0;
  SimTime sequencing_time = 0;  // broadcast + header wait + sort
  std::uint64_t barrier_trips = 0;
  SimTime barrier_time = 0;
  std::uint64_t executed = 0;
  std::uint64_t skipped = 0;
};

// Registers CRB/CFB/done (and backup CRB) regions on every node.
CalvinRuntime setup_calvin(Cluster& cl, CalvinConfig cfg, std::uint32_t epochs);

void install_calvin_handlers(Cluster& cl, CalvinRuntime& rt);

// Drives one node through every epoch. `my_epochs[e]` is this node's input
// batch for epoch e (may be empty); committed transactions are appended to
// cl.history by their lowest-id active participant, and that node also
// reports the per-transaction context through `txn_sink`.
Task<void> run_calvin_node(Coordinator& co, CalvinRuntime& rt,
                           std::vector<std::vector<TxnSpec>> my_epochs, LogicFn logic,
                           HybridCode hybrid, CalvinNodeStats* stats,
                           std::vector<TxnContext>* txn_sink);

}  // namespace rdmacc
