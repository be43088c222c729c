#pragma once

#include "rdmacc/cluster.hpp"

namespace rdmacc {

// Multi-version concurrency control over S static version slots per tuple.
// Reads pick the newest committed version below ctts (Cond R1) if no older
// uncommitted writer holds the lock (Cond R2), established atomically by two
// consecutive reads whose wts slots must match; writes require ctts above
// the tuple's max wts and rts (Cond W1) and a free lock (Cond W2), re-checked
// after the CAS lands. Commits overwrite the oldest slot.

// Fetch one rs key. On success appends an RsEntry whose wts is the chosen
// version and advances the tuple's rts to ctts via CAS retries.
Task<bool> mvcc_read(Coordinator& co, TxnContext& ctx, TableId t, Key k);

// Fetch-and-lock one ws key (Cond W1/W2 with post-lock re-check).
Task<bool> mvcc_write_fetch(Coordinator& co, TxnContext& ctx, TableId t, Key k);

// Replace the minimum-wts slot with (ctts, new record) and unlock: one
// doorbell batch of two WRITEs (or one RPC) per key.
Task<void> mvcc_commit(Coordinator& co, TxnContext& ctx);

// Abort-path unlock of acquired ws locks.
Task<void> mvcc_release(Coordinator& co, TxnContext& ctx);

Task<bool> run_mvcc_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                        const LogicFn& logic);

void install_mvcc_handlers(Cluster& cl);

// Brute-force Cond R1: index of the slot with the largest wts below ctts,
// or -1 when no committed version qualifies (slot overflow).
int mvcc_pick_version(const TupleImage& img, std::uint64_t ctts);

}  // namespace rdmacc
