#include "rdmacc/proto_calvin.hpp"

#include <algorithm>
#include <set>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

struct CalvinRequest {
  TxnSpec spec;
  std::uint64_t ts = 0;
};

std::uint64_t max_padded_record(const Store& store) {
  std::uint64_t best = 8;
  for (const auto& t : store.tables()) best = std::max<std::uint64_t>(best, store.layout(t.id).padded_len);
  return best;
}

void encode_request(Bytes& out, const CalvinRequest& r, std::uint64_t slot_bytes) {
  std::size_t start = out.size();
  put_u64(out, r.spec.id);
  put_u64(out, r.ts);
  put_u32(out, r.spec.logic);
  put_u32(out, static_cast<std::uint32_t>(r.spec.rs.size()));
  put_u32(out, static_cast<std::uint32_t>(r.spec.ws.size()));
  put_u64(out, r.spec.param);
  for (const auto& k : r.spec.rs) {
    put_u32(out, k.table);
    put_u64(out, k.key);
  }
  for (const auto& k : r.spec.ws) {
    put_u32(out, k.table);
    put_u64(out, k.key);
  }
  out.resize(start + slot_bytes, 0);
}

CalvinRequest decode_request(std::span<const std::uint8_t> slot) {
  ByteReader r(slot);
  CalvinRequest out;
  out.spec.id = r.u64();
  out.ts = r.u64();
  out.spec.logic = r.u32();
  std::uint32_t n_rs = r.u32();
  std::uint32_t n_ws = r.u32();
  out.spec.param = r.u64();
  for (std::uint32_t i = 0; i < n_rs; ++i) {
    FullKey k{r.u32(), r.u64()};
    out.spec.rs.push_back(k);
  }
  for (std::uint32_t i = 0; i < n_ws; ++i) {
    FullKey k{r.u32(), r.u64()};
    out.spec.ws.push_back(k);
  }
  return out;
}

std::vector<NodeId> owners_of(const Store& store, const TxnSpec& spec) {
  std::set<NodeId> set;
  for (const auto& k : spec.rs) set.insert(store.owner(k.table, k.key));
  for (const auto& k : spec.ws) set.insert(store.owner(k.table, k.key));
  return {set.begin(), set.end()};
}

std::vector<NodeId> active_of(const Store& store, const CalvinRequest& r, NodeId sequencer) {
  std::set<NodeId> set;
  for (const auto& k : r.spec.ws) set.insert(store.owner(k.table, k.key));
  if (set.empty()) set.insert(sequencer);  // read-only: the sequencer gathers
  return {set.begin(), set.end()};
}

}  // namespace

CalvinRuntime setup_calvin(Cluster& cl, CalvinConfig cfg, std::uint32_t epochs) {
  CalvinRuntime rt;
  rt.cfg = cfg;
  rt.epochs = epochs;
  const std::uint32_t nodes = cl.cfg.nodes;
  rt.slot_bytes = (36 + std::uint64_t(cfg.max_txn_keys) * 12 + 7) & ~std::uint64_t{7};
  rt.fwd_bytes =
      (std::uint64_t(cfg.max_txn_keys) * (24 + max_padded_record(cl.store)) + 7) & ~std::uint64_t{7};
  rt.cell_bytes = rt.fwd_bytes + 8;
  rt.crb_stride = 16 + std::uint64_t(cfg.batch_size) * rt.slot_bytes;
  rt.total_slots = std::uint64_t(nodes) * cfg.batch_size;
  rt.cfb_stride = rt.total_slots * rt.cell_bytes;
  for (NodeId n = 0; n < nodes; ++n)
    rt.crb_base.push_back(cl.sim.register_region(n, nodes * rt.crb_stride).base);
  for (NodeId n = 0; n < nodes; ++n)
    rt.cfb_base.push_back(cl.sim.register_region(n, nodes * rt.cfb_stride).base);
  for (NodeId n = 0; n < nodes; ++n)
    rt.done_base.push_back(cl.sim.register_region(n, nodes * 8).base);
  if (cl.cfg.replicas > 1)
    for (NodeId n = 0; n < nodes; ++n)
      rt.backup_base.push_back(cl.sim.register_region(n, nodes * rt.crb_stride).base);
  return rt;
}

void install_calvin_handlers(Cluster& cl, CalvinRuntime& rt) {
  // Batch delivery: the handler stores the slots then the header, mirroring
  // the one-sided write order.
  cl.sim.register_handler(kHCalvinBatch, [&cl, &rt](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    NodeId sender = static_cast<NodeId>(r.u32());
    std::uint64_t epoch_tag = r.u64();
    std::uint64_t count = r.u64();
    Bytes slots = r.bytes(r.remaining());
    std::uint64_t base = rt.crb_off(ctx.node, sender);
    if (!slots.empty()) cl.sim.store_bytes(ctx.node, base + 16, slots);
    Bytes header;
    put_u64(header, epoch_tag);
    put_u64(header, count);
    cl.sim.store_bytes(ctx.node, base, header);
    return Bytes{};
  });

  cl.sim.register_handler(kHCalvinForward, [&cl, &rt](RpcContext& ctx) -> std::optional<Bytes> {
    ByteReader r(ctx.payload);
    NodeId sender = static_cast<NodeId>(r.u32());
    std::uint64_t slot = r.u64();
    Bytes payload = r.bytes(r.remaining());
    cl.sim.store_bytes(ctx.node, rt.cfb_payload_off(ctx.node, sender, slot), payload);
    cl.sim.store_u64(ctx.node, rt.cfb_len_off(ctx.node, sender, slot), payload.size());
    return Bytes{};
  });
}

Task<void> run_calvin_node(Coordinator& co, CalvinRuntime& rt,
                           std::vector<std::vector<TxnSpec>> my_epochs, LogicFn logic,
                           HybridCode hybrid, CalvinNodeStats* stats,
                           std::vector<TxnContext>* txn_sink) {
  Cluster& cl = co.cl;
  const NodeId me = co.node;
  const std::uint32_t nodes = cl.cfg.nodes;
  const bool bcast_one_sided = hybrid.one_sided(Protocol::kCalvin, Stage::kBroadcast);
  const bool fwd_one_sided = hybrid.one_sided(Protocol::kCalvin, Stage::kForward);

  for (std::uint32_t epoch = 0; epoch < rt.epochs; ++epoch) {
    const std::uint64_t tag = epoch + 1;
    SimTime seq_t0 = cl.sim.now();

    // Reset my forward cells before announcing this epoch's batch; peers only
    // forward after they have seen every header, including mine.
    for (NodeId s = 0; s < nodes; ++s)
      for (std::uint64_t slot = 0; slot < rt.total_slots; ++slot)
        cl.sim.store_u64(me, rt.cfb_len_off(me, s, slot), 0);

    // Timestamp and encode the local batch.
    std::vector<CalvinRequest> mine;
    if (epoch < my_epochs.size()) {
      for (auto& spec : my_epochs[epoch]) {
        CalvinRequest r;
        r.spec = spec;
        r.ts = co.clock.begin_txn().packed();
        mine.push_back(std::move(r));
      }
    }
    if (mine.size() > rt.cfg.batch_size) throw ConfigError("calvin batch overflow");
    Bytes slots;
    for (const auto& r : mine) encode_request(slots, r, rt.slot_bytes);

    // Broadcast: payload slots first, header second (one doorbell batch per
    // receiver), plus a local copy into my own CRB.
    {
      std::uint64_t my_base = rt.crb_off(me, me);
      if (!slots.empty()) cl.sim.store_bytes(me, my_base + 16, slots);
      Bytes header;
      put_u64(header, tag);
      put_u64(header, mine.size());
      cl.sim.store_bytes(me, my_base, header);
    }
    std::vector<Ticket<BatchResult>> bcast_batches;
    std::vector<Ticket<Bytes>> bcast_rpcs;
    for (NodeId n = 0; n < nodes; ++n) {
      if (n == me) continue;
      if (stats) ++stats->sequencing_trips;
      if (bcast_one_sided) {
        DoorbellBatch b;
        b.dst = n;
        if (!slots.empty()) b.requests.push_back(VerbRequest::write(rt.crb_off(n, me) + 16, slots));
        Bytes header;
        put_u64(header, tag);
        put_u64(header, mine.size());
        b.requests.push_back(VerbRequest::write(rt.crb_off(n, me), std::move(header)));
        bcast_batches.push_back(cl.sim.post_batch(co.id, std::move(b)));
      } else {
        Bytes req;
        put_u32(req, me);
        put_u64(req, tag);
        put_u64(req, mine.size());
        put_bytes(req, slots);
        bcast_rpcs.push_back(cl.sim.rpc_call(co.id, n, kHCalvinBatch, std::move(req)));
      }
    }
    // Asynchronous input replication to backup request buffers; acknowledged
    // by the fabric, never awaited, and not replayed.
    if (cl.cfg.replicas > 1 && !slots.empty()) {
      for (NodeId backup : cl.backups_of(me)) {
        DoorbellBatch b;
        b.dst = backup;
        b.requests.push_back(VerbRequest::write(rt.backup_base[backup] + me * rt.crb_stride + 16, slots));
        Bytes header;
        put_u64(header, tag);
        put_u64(header, mine.size());
        b.requests.push_back(VerbRequest::write(rt.backup_base[backup] + me * rt.crb_stride, std::move(header)));
        if (stats) ++stats->sequencing_trips;
        (void)cl.sim.post_batch(co.id, std::move(b));
      }
    }
    for (auto& t : bcast_batches) co_await cl.sim.await_ticket(co.id, t, "calvin-bcast");
    for (auto& t : bcast_rpcs) co_await cl.sim.await_ticket(co.id, t, "calvin-bcast");

    // Wait for every sequencer's header, then build the consensus schedule.
    std::vector<CalvinRequest> schedule;
    for (NodeId s = 0; s < nodes; ++s) {
      std::uint64_t hdr = rt.crb_off(me, s);
      while (cl.sim.load_u64(me, hdr) != tag)
        co_await cl.sim.mem_changed(me, hdr, 8, co.id);
      std::uint64_t count = cl.sim.load_u64(me, hdr + 8);
      for (std::uint64_t i = 0; i < count; ++i) {
        Bytes slot = cl.sim.load_bytes(me, hdr + 16 + i * rt.slot_bytes, rt.slot_bytes);
        schedule.push_back(decode_request(slot));
      }
    }
    std::sort(schedule.begin(), schedule.end(), [](const CalvinRequest& a, const CalvinRequest& b) {
      return a.ts != b.ts ? a.ts < b.ts : a.spec.id < b.spec.id;
    });
    if (stats) stats->sequencing_time += cl.sim.now() - seq_t0;

    // Execute the schedule serially; every node walks the same order.
    for (std::size_t idx = 0; idx < schedule.size(); ++idx) {
      const CalvinRequest& req = schedule[idx];
      NodeId sequencer = static_cast<NodeId>(Timestamp(req.ts).machine());
      std::vector<NodeId> participants = owners_of(cl.store, req.spec);
      std::vector<NodeId> actives = active_of(cl.store, req, sequencer);
      const bool i_participate =
          std::find(participants.begin(), participants.end(), me) != participants.end();
      const bool i_am_active = std::find(actives.begin(), actives.end(), me) != actives.end();
      if (!i_participate && !i_am_active) {
        if (stats) ++stats->skipped;
        continue;
      }
      const bool i_emit = i_am_active && me == actives.front();

      TxnContext ctx;
      ctx.txn_id = req.spec.id;
      ctx.protocol = Protocol::kCalvin;
      ctx.ctts = Timestamp(req.ts);
      ctx.hybrid = hybrid;
      ctx.begin_time = cl.sim.now();

      // Deterministic local locking in schedule order; execution is serial
      // per node, so the CAS must always win.
      std::vector<FullKey> local_keys;
      for (const auto& k : req.spec.rs)
        if (cl.store.owner(k.table, k.key) == me) local_keys.push_back(k);
      for (const auto& k : req.spec.ws)
        if (cl.store.owner(k.table, k.key) == me) local_keys.push_back(k);
      {
        StageSpan lock_span(co, ctx, Stage::kLock);
        for (const auto& k : local_keys) {
          co_await co.local_op(&ctx);
          if (cl.sim.cas_u64(me, cl.store.tuple_offset(k.table, k.key), 0, req.ts) != 0)
            throw ProtocolError("calvin: deterministic lock found the word held");
        }
      }

      // Read local values and forward them to the active participants.
      std::map<FullKey, std::pair<std::uint64_t, Bytes>> values;  // key -> (wts, record)
      for (const auto& k : local_keys) {
        TupleImage img = cl.store.read_tuple_local(k.table, k.key);
        values[k] = {img.slots[0].wts, trim_record(cl.store, k.table, img.slots[0].record)};
      }
      if (!local_keys.empty()) {
        Bytes payload;
        for (const auto& [k, v] : values) {
          put_u32(payload, k.table);
          put_u64(payload, k.key);
          put_u64(payload, v.first);
          put_u32(payload, static_cast<std::uint32_t>(v.second.size()));
          put_bytes(payload, v.second);
        }
        StageSpan fwd_span(co, ctx, Stage::kForward);
        std::vector<Ticket<BatchResult>> fwd_batches;
        std::vector<Ticket<Bytes>> fwd_rpcs;
        for (NodeId a : actives) {
          if (a == me) continue;
          ++ctx.round_trips;
          if (fwd_one_sided) {
            DoorbellBatch b;
            b.dst = a;
            b.requests.push_back(VerbRequest::write(rt.cfb_payload_off(a, me, idx), payload));
            Bytes len;
            put_u64(len, payload.size());
            b.requests.push_back(VerbRequest::write(rt.cfb_len_off(a, me, idx), std::move(len)));
            fwd_batches.push_back(cl.sim.post_batch(co.id, std::move(b)));
          } else {
            Bytes req_bytes;
            put_u32(req_bytes, me);
            put_u64(req_bytes, idx);
            put_bytes(req_bytes, payload);
            fwd_rpcs.push_back(cl.sim.rpc_call(co.id, a, kHCalvinForward, std::move(req_bytes)));
          }
        }
        for (auto& t : fwd_batches) co_await cl.sim.await_ticket(co.id, t, "calvin-fwd");
        for (auto& t : fwd_rpcs) co_await cl.sim.await_ticket(co.id, t, "calvin-fwd");
      }

      if (i_am_active) {
        // Gather the other participants' values from my forward cells.
        {
          StageSpan fwd_span(co, ctx, Stage::kForward);
          for (NodeId p : participants) {
            if (p == me) continue;
            std::uint64_t len_off = rt.cfb_len_off(me, p, idx);
            while (cl.sim.load_u64(me, len_off) == 0)
              co_await cl.sim.mem_changed(me, len_off, 8, co.id);
            std::uint64_t len = cl.sim.load_u64(me, len_off);
            Bytes payload = cl.sim.load_bytes(me, rt.cfb_payload_off(me, p, idx), len);
            ByteReader r(payload);
            while (r.remaining() > 0) {
              FullKey k{r.u32(), r.u64()};
              std::uint64_t wts = r.u64();
              std::uint32_t n = r.u32();
              values[k] = {wts, r.bytes(n)};
            }
          }
        }
        co_await co.compute(&ctx, cl.cfg.exec_time);

        std::map<FullKey, Bytes> inputs;
        for (const auto& [k, v] : values) inputs[k] = v.second;
        std::map<FullKey, Bytes> out = logic(req.spec, inputs);

        // Apply my partition's writes and release local locks.
        {
          StageSpan commit_span(co, ctx, Stage::kCommit);
          for (const auto& k : req.spec.ws) {
            if (cl.store.owner(k.table, k.key) != me) continue;
            const TupleLayout& layout = cl.store.layout(k.table);
            co_await co.local_op(&ctx);
            Bytes span;
            put_u64(span, req.ts);
            Bytes padded(layout.padded_len, 0);
            const Bytes& rec = out.at(k);
            std::copy(rec.begin(), rec.end(), padded.begin());
            put_bytes(span, padded);
            std::uint64_t off = cl.store.tuple_offset(k.table, k.key);
            cl.sim.store_bytes(me, off + layout.slot_off(0), span);
          }
          for (const auto& k : local_keys) {
            co_await co.local_op(&ctx);
            cl.sim.cas_u64(me, cl.store.tuple_offset(k.table, k.key), req.ts, 0);
          }
        }

        if (i_emit) {
          CommitRecord rec;
          rec.txn_id = req.spec.id;
          rec.commit_key = (std::uint64_t(epoch) << 32) | idx;
          for (const auto& k : req.spec.rs) rec.reads.push_back({k, values.at(k).first});
          for (const auto& k : req.spec.ws) {
            rec.reads.push_back({k, values.at(k).first});
            rec.writes.push_back({k, values.at(k).first, req.ts});
          }
          cl.history.push_back(std::move(rec));
          ++cl.committed;
          ctx.status = TxnStatus::kCommitted;
          ctx.end_time = cl.sim.now();
          if (txn_sink) txn_sink->push_back(ctx);
        }
      } else {
        // Passive participant: forwarding done, release the read locks.
        for (const auto& k : local_keys) {
          co_await co.local_op(&ctx);
          cl.sim.cas_u64(me, cl.store.tuple_offset(k.table, k.key), req.ts, 0);
        }
      }
      if (stats) ++stats->executed;
    }

    // Epoch barrier: publish my completion and wait for everyone's.
    SimTime barrier_t0 = cl.sim.now();
    cl.sim.store_u64(me, rt.done_off(me, me), tag);
    std::vector<Ticket<BatchResult>> done_writes;
    for (NodeId n = 0; n < nodes; ++n) {
      if (n == me) continue;
      Bytes v;
      put_u64(v, tag);
      DoorbellBatch b;
      b.dst = n;
      b.requests.push_back(VerbRequest::write(rt.done_off(n, me), std::move(v)));
      if (stats) ++stats->barrier_trips;
      done_writes.push_back(cl.sim.post_batch(co.id, std::move(b)));
    }
    for (auto& t : done_writes) co_await cl.sim.await_ticket(co.id, t, "calvin-done");
    for (NodeId n = 0; n < nodes; ++n) {
      std::uint64_t off = rt.done_off(me, n);
      while (cl.sim.load_u64(me, off) < tag) co_await cl.sim.mem_changed(me, off, 8, co.id);
    }
    if (stats) stats->barrier_time += cl.sim.now() - barrier_t0;
  }
}

}  // namespace rdmacc
