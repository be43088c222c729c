#include "rdmacc/store.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

TupleLayout TupleLayout::make(std::uint32_t record_len, std::uint32_t slots) {
  if (record_len == 0 || slots == 0) throw ConfigError("tuple layout needs a record and slots");
  TupleLayout l;
  l.record_len = record_len;
  l.padded_len = (record_len + 7u) & ~7u;
  l.slots = slots;
  l.size = 16 + std::uint64_t(slots) * (8 + l.padded_len);
  return l;
}

std::uint32_t TupleImage::newest_index() const {
  std::uint32_t best = 0;
  for (std::uint32_t i = 1; i < slots.size(); ++i)
    if (slots[i].wts > slots[best].wts) best = i;
  return best;
}

std::uint64_t TupleImage::max_wts() const { return slots[newest_index()].wts; }

std::uint32_t TupleImage::min_wts_index() const {
  std::uint32_t best = 0;
  for (std::uint32_t i = 1; i < slots.size(); ++i)
    if (slots[i].wts < slots[best].wts) best = i;
  return best;
}

std::vector<std::uint64_t> TupleImage::wts_vector() const {
  std::vector<std::uint64_t> v;
  v.reserve(slots.size());
  for (const auto& s : slots) v.push_back(s.wts);
  return v;
}

TupleImage parse_tuple(std::span<const std::uint8_t> bytes, const TupleLayout& layout) {
  if (bytes.size() != layout.size) throw ProtocolError("tuple image has the wrong length");
  TupleImage img;
  img.lock = read_u64(bytes, 0);
  img.rts = read_u64(bytes, 8);
  img.slots.resize(layout.slots);
  for (std::uint32_t i = 0; i < layout.slots; ++i) {
    img.slots[i].wts = read_u64(bytes, layout.slot_off(i));
    auto off = layout.slot_record_off(i);
    img.slots[i].record.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                               bytes.begin() + static_cast<std::ptrdiff_t>(off + layout.padded_len));
  }
  return img;
}

Bytes encode_tuple(const TupleImage& img, const TupleLayout& layout) {
  if (img.slots.size() != layout.slots) throw ProtocolError("tuple image has the wrong slot count");
  Bytes out;
  out.reserve(layout.size);
  put_u64(out, img.lock);
  put_u64(out, img.rts);
  for (const auto& s : img.slots) {
    if (s.record.size() != layout.padded_len)
      throw ProtocolError("tuple version has the wrong record length");
    put_u64(out, s.wts);
    put_bytes(out, s.record);
  }
  return out;
}

Store::Store(Simulator& sim, std::uint32_t version_slots)
    : sim_(sim), nodes_(sim.config().nodes), slots_(version_slots) {
  if (slots_ == 0) throw ConfigError("store needs at least one version slot");
}

void Store::add_table(const TableSpec& spec) {
  if (finalized_) throw ConfigError("add_table after finalize");
  if (tables_.count(spec.id)) throw ConfigError("duplicate table id");
  if (spec.key_count == 0) throw ConfigError("table must have keys");
  TableRt rt;
  rt.spec = spec;
  rt.layout = TupleLayout::make(spec.record_len, slots_);
  rt.keys_per_node = (spec.key_count + nodes_ - 1) / nodes_;
  specs_.push_back(spec);
  tables_.emplace(spec.id, std::move(rt));
}

void Store::finalize(const std::function<Bytes(TableId, Key)>& initial_record) {
  if (finalized_) throw ConfigError("finalize called twice");
  finalized_ = true;
  // Tuple regions first, then one directory region per table and node; the
  // registration order is part of the deterministic memory map.
  for (auto& [tid, rt] : tables_) {
    rt.tuple_base.resize(nodes_);
    for (NodeId n = 0; n < nodes_; ++n)
      rt.tuple_base[n] = sim_.register_region(n, rt.keys_per_node * rt.layout.size).base;
  }
  for (auto& [tid, rt] : tables_) {
    rt.dir_base.resize(nodes_);
    for (NodeId n = 0; n < nodes_; ++n)
      rt.dir_base[n] = sim_.register_region(n, rt.keys_per_node * 8).base;
  }
  for (auto& [tid, rt] : tables_) {
    for (Key k = 0; k < rt.spec.key_count; ++k) {
      NodeId n = owner(tid, k);
      std::uint64_t toff = tuple_offset(tid, k);
      TupleImage img;
      img.slots.resize(rt.layout.slots);
      for (auto& s : img.slots) s.record.assign(rt.layout.padded_len, 0);
      Bytes init = initial_record(tid, k);
      if (init.size() != rt.spec.record_len)
        throw ConfigError("initial record has the wrong length");
      std::copy(init.begin(), init.end(), img.slots[0].record.begin());
      sim_.store_bytes(n, toff, encode_tuple(img, rt.layout));
      sim_.store_u64(n, dir_cell_offset(tid, k), toff);
    }
  }
}

const Store::TableRt& Store::table(TableId t) const {
  auto it = tables_.find(t);
  if (it == tables_.end()) throw LookupError("unknown table " + std::to_string(t));
  return it->second;
}

NodeId Store::owner(TableId t, Key k) const {
  const auto& rt = table(t);
  if (k >= rt.spec.key_count) throw LookupError("key out of range");
  return static_cast<NodeId>(k % nodes_);
}

bool Store::valid_key(TableId t, Key k) const {
  auto it = tables_.find(t);
  return it != tables_.end() && k < it->second.spec.key_count;
}

const TupleLayout& Store::layout(TableId t) const { return table(t).layout; }

std::uint64_t Store::tuple_offset(TableId t, Key k) const {
  const auto& rt = table(t);
  if (k >= rt.spec.key_count) throw LookupError("key out of range");
  return rt.tuple_base[k % nodes_] + (k / nodes_) * rt.layout.size;
}

std::uint64_t Store::dir_cell_offset(TableId t, Key k) const {
  const auto& rt = table(t);
  if (k >= rt.spec.key_count) throw LookupError("key out of range");
  return rt.dir_base[k % nodes_] + (k / nodes_) * 8;
}

Task<Located> Store::resolve_offset(TaskId me, NodeId my_node, OffsetCache& cache, TableId t,
                                    Key k, std::uint64_t* round_trips) const {
  NodeId home = owner(t, k);  // throws LookupError for unknown keys
  if (home == my_node) co_return Located{home, tuple_offset(t, k)};
  FullKey fk{t, k};
  if (auto it = cache.map.find(fk); it != cache.map.end())
    co_return Located{home, it->second};
  DoorbellBatch b;
  b.dst = home;
  b.requests.push_back(VerbRequest::read(dir_cell_offset(t, k), 8));
  if (round_trips) ++*round_trips;
  BatchResult res = co_await sim_.await_ticket(me, sim_.post_batch(me, std::move(b)), "dir-read");
  std::uint64_t off = read_u64(res.results[0].data, 0);
  cache.map.emplace(fk, off);
  co_return Located{home, off};
}

TupleImage Store::read_tuple_local(TableId t, Key k) const {
  const auto& rt = table(t);
  Bytes raw = sim_.load_bytes(owner(t, k), tuple_offset(t, k), rt.layout.size);
  return parse_tuple(raw, rt.layout);
}

void Store::write_tuple_local(TableId t, Key k, const TupleImage& img) {
  const auto& rt = table(t);
  sim_.store_bytes(owner(t, k), tuple_offset(t, k), encode_tuple(img, rt.layout));
}

std::map<FullKey, Bytes> Store::snapshot() const {
  std::map<FullKey, Bytes> out;
  for (const auto& [tid, rt] : tables_) {
    for (Key k = 0; k < rt.spec.key_count; ++k) {
      TupleImage img = read_tuple_local(tid, k);
      const Bytes& padded = img.newest_record();
      out.emplace(FullKey{tid, k}, Bytes(padded.begin(), padded.begin() + rt.spec.record_len));
    }
  }
  return out;
}

}  // namespace rdmacc
