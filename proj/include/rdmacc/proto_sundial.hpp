#pragma once

#include "rdmacc/cluster.hpp"

namespace rdmacc {

// SUNDIAL logical leases: each tuple carries [wts, rts]; a transaction tracks
// the commit timestamp (commit_tts) required to fall inside every lease it
// touched, renews read leases at validation time with a single CAS on rts,
// and commits by setting wts = rts = commit_tts on its write set.

// Atomic (double-read) fetch of one rs key; commit_tts rises to the
// tuple's wts.
Task<bool> sundial_read(Coordinator& co, TxnContext& ctx, TableId t, Key k);

// Lock+fetch one ws key; commit_tts rises to rts+1. If the key was also
// read, its wts must be unchanged.
Task<bool> sundial_write_fetch(Coordinator& co, TxnContext& ctx, TableId t, Key k);

// Commit-time validation: every rs lease must cover commit_tts, renewing
// rts via re-read + CAS when it does not.
Task<bool> sundial_validate(Coordinator& co, TxnContext& ctx);

// Install record and wts = rts = commit_tts, then unlock.
Task<void> sundial_commit(Coordinator& co, TxnContext& ctx);

Task<void> sundial_release(Coordinator& co, TxnContext& ctx);

Task<bool> run_sundial_txn(Coordinator& co, TxnContext& ctx, const TxnSpec& spec,
                           const LogicFn& logic);

void install_sundial_handlers(Cluster& cl);

}  // namespace rdmacc
