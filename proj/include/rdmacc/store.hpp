#pragma once

#include <functional>
#include <map>
#include <unordered_map>

#include "rdmacc/netsim.hpp"
#include "rdmacc/types.hpp"

namespace rdmacc {

// Fixed per-table tuple layout inside registered memory. Every field is an
// 8-byte aligned cell so one-sided CAS/FAA can target it and a single READ
// can fetch the whole image:
//
//   +0                lock  (u64; 0 = free, else holder timestamp)
//   +8                rts   (u64)
//   +16 + i*(8+P)     slot i: wts (u64) followed by P record bytes
//
// with P = record_len rounded up to 8 and `slots` version slots. The current
// record of a tuple is the version in the slot with the largest wts (ties
// resolve to the lowest slot index; fresh tuples keep their initial record in
// slot 0). Single-version protocols only ever touch slot 0.
struct TupleLayout {
  std::uint32_t record_len = 0;
  std::uint32_t padded_len = 0;
  std::uint32_t slots = 0;
  std::uint64_t size = 0;

  static TupleLayout make(std::uint32_t record_len, std::uint32_t slots);

  std::uint64_t slot_off(std::uint32_t i) const { return 16 + std::uint64_t(i) * (8 + padded_len); }
  std::uint64_t slot_record_off(std::uint32_t i) const { return slot_off(i) + 8; }
};

struct TupleImage {
  struct Slot {
    std::uint64_t wts = 0;
    Bytes record;
  };

  std::uint64_t lock = 0;
  std::uint64_t rts = 0;
  std::vector<Slot> slots;

  std::uint32_t newest_index() const;
  std::uint64_t newest_wts() const { return slots[newest_index()].wts; }
  const Bytes& newest_record() const { return slots[newest_index()].record; }
  std::uint64_t max_wts() const;
  std::uint32_t min_wts_index() const;
  std::vector<std::uint64_t> wts_vector() const;
};

// encode∘parse is the identity on well-formed byte strings.
TupleImage parse_tuple(std::span<const std::uint8_t> bytes, const TupleLayout& layout);
Bytes encode_tuple(const TupleImage& img, const TupleLayout& layout);

struct TableSpec {
  TableId id = 0;
  std::string name;
  std::uint32_t record_len = 0;
  std::uint64_t key_count = 0;
};

// Per-coordinator cache of remote tuple offsets; hits cost no network.
struct OffsetCache {
  std::unordered_map<FullKey, std::uint64_t, FullKeyHash> map;
};

struct Located {
  NodeId node = 0;
  std::uint64_t offset = 0;
};

// Partitioned tuple store. Key k of any table lives on node k % cluster_size;
// tuples sit in one registered region per (node, table) and a per-node
// directory region maps keys to tuple offsets so cold lookups are a genuine
// one-sided READ.
class Store {
 public:
  Store(Simulator& sim, std::uint32_t version_slots);

  void add_table(const TableSpec& spec);
  // Registers all regions and writes initial records (wts 0, slot 0).
  void finalize(const std::function<Bytes(TableId, Key)>& initial_record);

  Simulator& sim() const { return sim_; }
  std::uint32_t nodes() const { return nodes_; }
  std::uint32_t version_slots() const { return slots_; }
  const std::vector<TableSpec>& tables() const { return specs_; }

  NodeId owner(TableId t, Key k) const;
  bool valid_key(TableId t, Key k) const;
  const TupleLayout& layout(TableId t) const;
  // Ground-truth tuple offset on the owner node.
  std::uint64_t tuple_offset(TableId t, Key k) const;
  // Offset of the 8-byte directory cell (on the owner) holding tuple_offset.
  std::uint64_t dir_cell_offset(TableId t, Key k) const;

  // First remote miss costs one one-sided READ of the directory cell;
  // warm lookups and local keys cost nothing. `round_trips`, when given,
  // is incremented per network trip taken.
  Task<Located> resolve_offset(TaskId me, NodeId my_node, OffsetCache& cache, TableId t,
                               Key k, std::uint64_t* round_trips = nullptr) const;

  TupleImage read_tuple_local(TableId t, Key k) const;
  void write_tuple_local(TableId t, Key k, const TupleImage& img);

  // Newest committed record of every key, in deterministic key order.
  std::map<FullKey, Bytes> snapshot() const;

 private:
  struct TableRt {
    TableSpec spec;
    TupleLayout layout;
    std::vector<std::uint64_t> tuple_base;  // per node
    std::vector<std::uint64_t> dir_base;    // per node
    std::uint64_t keys_per_node = 0;        // ceil(key_count / nodes)
  };

  const TableRt& table(TableId t) const;

  Simulator& sim_;
  std::uint32_t nodes_;
  std::uint32_t slots_;
  bool finalized_ = false;
  std::vector<TableSpec> specs_;
  std::map<TableId, TableRt> tables_;
};

}  // namespace rdmacc
