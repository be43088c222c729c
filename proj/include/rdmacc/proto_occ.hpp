#pragma once

#include "rdmacc/cluster.hpp"

namespace rdmacc {

// Optimistic concurrency control: speculative unlocked reads, commit-time
// write-set locking with wts re-check, read-set validation, fused
// install+unlock commit. Locks are held only between occ_lock_ws and
// occ_commit / occ_release.

// Speculative fetch of one key into rs/ws; takes no lock and never aborts.
Task<void> occ_read(Coordinator& co, TxnContext& ctx, TableId t, Key k, bool is_write);

// CAS-lock every ws tuple and require its wts to match the fetched one.
// On any failure releases the already-acquired ws locks and aborts.
Task<bool> occ_lock_ws(Coordinator& co, TxnContext& ctx);

// Check every rs tuple: wts unchanged and not locked by another transaction.
Task<bool> occ_validate_rs(Coordinator& co, TxnContext& ctx);

// Install record + wts=ctts + unlock, one doorbell batch (or one RPC) per key.
Task<void> occ_commit(Coordinator& co, TxnContext& ctx);

// Abort-path unlock of acquired ws locks (the Release stage's primitive).
Task<void> occ_release(Coordinator& co, TxnContext& ctx);

Task<bool> run_occ_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                       const LogicFn& logic);

void install_occ_handlers(Cluster& cl);

}  // namespace rdmacc
