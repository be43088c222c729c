#pragma once

#include "rdmacc/cluster.hpp"

namespace rdmacc {

// NOWAIT and WAITDIE two-phase locking. Fetch is the fused lock+read: the
// one-sided path posts one [CAS lock, READ tuple] doorbell batch and ignores
// the returned data when the CAS fails; reads take (exclusive) locks too.

// Lock+fetch one key into ctx.rs / ctx.ws. Returns false and marks ctx
// aborted on conflict; previously acquired locks stay for release_2pl.
Task<bool> nowait_fetch(Coordinator& co, TxnContext& ctx, TableId t, Key k, bool is_write);

// As nowait_fetch, but a conflict with a younger holder waits (RPC: wait
// list on the participant; one-sided: re-posted CAS+READ with a yield per
// unsuccessful trial) and a conflict with an older holder dies.
Task<bool> waitdie_fetch(Coordinator& co, TxnContext& ctx, TableId t, Key k, bool is_write);

// Release every lock the transaction still holds (abort path).
Task<void> release_2pl(Coordinator& co, TxnContext& ctx);

// Install new records, stamp slot-0 wts with ctts and unlock the write set;
// release read locks. One-sided: [WRITE record+wts, WRITE lock<-0] per key.
Task<void> commit_2pl(Coordinator& co, TxnContext& ctx);

// Full transaction: fetch all keys, compute, log, commit. Returns committed.
Task<bool> run_2pl_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                       const LogicFn& logic);

void install_2pl_handlers(Cluster& cl);

}  // namespace rdmacc
