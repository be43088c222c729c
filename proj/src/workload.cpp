#include "rdmacc/workload.hpp"

#include <algorithm>
#include <random>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

TaskId pick_lane(std::mt19937_64& rng, const ClusterShape& shape) {
  std::uint32_t lanes = shape.nodes * shape.threads * shape.coros;
  std::uint32_t lane = static_cast<std::uint32_t>(rng() % lanes);
  TaskId id;
  id.node = static_cast<NodeId>(lane / (shape.threads * shape.coros));
  id.thread = static_cast<ThreadId>((lane / shape.coros) % shape.threads);
  id.coro = static_cast<CoroId>(lane % shape.coros);
  return id;
}

std::int64_t as_i64(const Bytes& rec) {
  return static_cast<std::int64_t>(read_u64(rec, 0));
}

void put_i64(Bytes& rec, std::int64_t v) { write_u64(rec, 0, static_cast<std::uint64_t>(v)); }

}  // namespace

WorkloadBundle gen_smallbank(const SmallBankConfig& cfg, const ClusterShape& shape,
                             std::uint64_t seed, std::uint64_t n) {
  WorkloadBundle out;
  const std::uint64_t accounts = cfg.customers * 2;  // checking = 2c, savings = 2c+1
  out.tables = {TableSpec{0, "accounts", 8, accounts}};
  out.initial = [](TableId, Key) {
    Bytes b;
    put_u64(b, 10000);
    return b;
  };
  out.logic = [](const TxnSpec& spec, const std::map<FullKey, Bytes>& in) {
    std::map<FullKey, Bytes> w;
    auto val = [&](Key k) { return as_i64(in.at(FullKey{0, k})); };
    auto set = [&](Key k, std::int64_t v) {
      Bytes b(8, 0);
      put_i64(b, v);
      w[FullKey{0, k}] = b;
    };
    const auto amt = static_cast<std::int64_t>(spec.param);
    switch (spec.logic) {
      case kSbBalance:
        break;
      case kSbDepositChecking:
        set(spec.ws[0].key, val(spec.ws[0].key) + amt);
        break;
      case kSbTransferSavings:
        set(spec.ws[0].key, val(spec.ws[0].key) + amt);
        break;
      case kSbAmalgamate: {
        Key sav1 = spec.ws[0].key, chk1 = spec.ws[1].key, chk2 = spec.ws[2].key;
        set(chk2, val(chk2) + val(sav1) + val(chk1));
        set(sav1, 0);
        set(chk1, 0);
        break;
      }
      case kSbWriteCheck: {
        Key sav = spec.rs[0].key, chk = spec.ws[0].key;
        std::int64_t total = val(sav) + val(chk);
        set(chk, val(chk) - (total < amt ? amt + 1 : amt));
        break;
      }
      case kSbSendPayment: {
        Key src = spec.ws[0].key, dst = spec.ws[1].key;
        if (val(src) >= amt) {
          set(src, val(src) - amt);
          set(dst, val(dst) + amt);
        } else {
          set(src, val(src));
          set(dst, val(dst));
        }
        break;
      }
      default:
        throw ConfigError("unknown smallbank op");
    }
    return w;
  };

  std::mt19937_64 rng(seed);
  auto pick_customer = [&]() -> std::uint64_t {
    if (cfg.hotspot_fraction > 0.0 && cfg.hotspot_prob > 0.0) {
      auto hot = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(
                                                static_cast<double>(cfg.customers) *
                                                cfg.hotspot_fraction));
      if (std::uniform_real_distribution<double>(0, 1)(rng) < cfg.hotspot_prob)
        return rng() % hot;
      return hot + rng() % (cfg.customers - hot);
    }
    return rng() % cfg.customers;
  };

  for (std::uint64_t i = 0; i < n; ++i) {
    TxnSpec t;
    t.id = i;
    t.logic = static_cast<std::uint32_t>(rng() % 6);
    t.param = 1 + rng() % 100;
    t.arrival = pick_lane(rng, shape);
    std::uint64_t c1 = pick_customer();
    std::uint64_t c2 = pick_customer();
    while (c2 == c1) c2 = pick_customer();
    Key chk1 = c1 * 2, sav1 = c1 * 2 + 1, chk2 = c2 * 2;
    switch (t.logic) {
      case kSbBalance:
        t.rs = {FullKey{0, chk1}, FullKey{0, sav1}};
        break;
      case kSbDepositChecking:
        t.ws = {FullKey{0, chk1}};
        break;
      case kSbTransferSavings:
        t.ws = {FullKey{0, sav1}};
        break;
      case kSbAmalgamate:
        t.ws = {FullKey{0, sav1}, FullKey{0, chk1}, FullKey{0, chk2}};
        break;
      case kSbWriteCheck:
        t.rs = {FullKey{0, sav1}};
        t.ws = {FullKey{0, chk1}};
        break;
      case kSbSendPayment:
        t.ws = {FullKey{0, chk1}, FullKey{0, chk2}};
        break;
    }
    out.txns.push_back(std::move(t));
  }
  return out;
}

WorkloadBundle gen_ycsb(const YcsbConfig& cfg, const ClusterShape& shape, std::uint64_t seed,
                        std::uint64_t n) {
  if (cfg.ops_per_txn == 0) throw ConfigError("ycsb needs at least one op per txn");
  WorkloadBundle out;
  const std::uint64_t keys =
      cfg.keys_per_thread * std::uint64_t(shape.nodes) * std::uint64_t(shape.threads);
  out.tables = {TableSpec{0, "usertable", cfg.record_len, keys}};
  const std::uint32_t rec_len = cfg.record_len;
  out.initial = [rec_len](TableId, Key k) {
    Bytes b(rec_len, 0);
    for (std::uint32_t i = 8; i < rec_len; ++i)
      b[i] = static_cast<std::uint8_t>((k + i) & 0xff);
    return b;
  };
  out.logic = [](const TxnSpec& spec, const std::map<FullKey, Bytes>& in) {
    std::map<FullKey, Bytes> w;
    for (std::size_t i = 0; i < spec.ws.size(); ++i) {
      const FullKey& k = spec.ws[i];
      Bytes v = in.at(k);
      write_u64(v, 0, read_u64(v, 0) + (mix64(spec.id ^ k.key) & 0xffff));
      for (std::size_t j = 8; j < v.size(); ++j)
        v[j] = static_cast<std::uint8_t>(mix64(spec.id + k.key + j) & 0xff);
      w[k] = v;
    }
    return w;
  };
  out.exec_time = cfg.exec_time;

  const std::uint64_t hot =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(static_cast<double>(keys) *
                                                            cfg.hot_fraction));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0, 1);
  for (std::uint64_t i = 0; i < n; ++i) {
    TxnSpec t;
    t.id = i;
    t.arrival = pick_lane(rng, shape);
    std::vector<Key> used;
    for (std::uint32_t op = 0; op < cfg.ops_per_txn; ++op) {
      Key k;
      do {
        k = uni(rng) < cfg.hot_prob ? rng() % hot : hot + rng() % (keys - hot);
      } while (std::find(used.begin(), used.end(), k) != used.end());
      used.push_back(k);
      if (uni(rng) < cfg.write_ratio)
        t.ws.push_back(FullKey{0, k});
      else
        t.rs.push_back(FullKey{0, k});
    }
    out.txns.push_back(std::move(t));
  }
  return out;
}

WorkloadBundle gen_tpcc_neworder(const TpccConfig& cfg, const ClusterShape& shape,
                                 std::uint64_t seed, std::uint64_t n) {
  WorkloadBundle out;
  const std::uint64_t W =
      cfg.warehouses ? cfg.warehouses : std::uint64_t(shape.nodes) * shape.threads;
  if (W % shape.nodes != 0)
    throw ConfigError("warehouse count must be a multiple of the node count");
  const std::uint64_t I = cfg.items;
  // All warehouse-affine tables key as index*W + w so that everything a home
  // warehouse owns lives on one node (the item catalog is striped per
  // warehouse, the classical replicated-catalog layout).
  out.tables = {TableSpec{0, "warehouse", 64, W},
                TableSpec{1, "district", 64, W * cfg.districts_per_wh},
                TableSpec{2, "item", 64, W * I},
                TableSpec{3, "stock", 64, W * I}};
  out.initial = [](TableId t, Key k) {
    Bytes b(64, 0);
    if (t == 3) write_u64(b, 0, 50 + k % 41);  // stock quantity
    if (t == 1) write_u64(b, 0, 1);            // next order id
    return b;
  };
  out.logic = [](const TxnSpec& spec, const std::map<FullKey, Bytes>& in) {
    std::map<FullKey, Bytes> w;
    std::uint32_t line = 0;
    for (const auto& k : spec.ws) {
      Bytes v = in.at(k);
      if (k.table == 1) {
        write_u64(v, 0, read_u64(v, 0) + 1);  // next_o_id
      } else {
        std::uint64_t q = 1 + (spec.id + line) % 10;
        std::uint64_t qty = read_u64(v, 0);
        std::uint64_t left = qty >= q ? qty - q : 0;
        write_u64(v, 0, left >= 10 ? left : left + 91);
        write_u64(v, 8, read_u64(v, 8) + q);    // ytd
        write_u64(v, 16, read_u64(v, 16) + 1);  // order count
        ++line;
      }
      w[k] = v;
    }
    return w;
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0, 1);
  for (std::uint64_t i = 0; i < n; ++i) {
    TxnSpec t;
    t.id = i;
    t.arrival = pick_lane(rng, shape);
    std::uint64_t w = rng() % W;
    std::uint64_t d = rng() % cfg.districts_per_wh;
    std::uint32_t lines = 5 + static_cast<std::uint32_t>(rng() % 11);  // 5..15
    t.rs.push_back(FullKey{0, w});
    t.ws.push_back(FullKey{1, d * W + w});
    std::vector<std::uint64_t> items;
    for (std::uint32_t l = 0; l < lines; ++l) {
      std::uint64_t item;
      do {
        item = rng() % I;
      } while (std::find(items.begin(), items.end(), item) != items.end());
      items.push_back(item);
      std::uint64_t supply = w;
      if (W > 1 && uni(rng) < cfg.remote_item_prob) {
        do {
          supply = rng() % W;
        } while (supply == w);
      }
      t.rs.push_back(FullKey{2, item * W + w});
      t.ws.push_back(FullKey{3, item * W + supply});
    }
    out.txns.push_back(std::move(t));
  }
  return out;
}

}  // namespace rdmacc
