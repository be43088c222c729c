#include "rdmacc/verify.hpp"

#include <algorithm>
#include <deque>
#include <queue>
#include <set>
#include <sstream>

namespace rdmacc {

namespace {

struct Graph {
  std::vector<std::uint64_t> ids;                         // node -> txn id
  std::map<std::uint64_t, std::size_t> index;             // txn id -> node
  std::vector<std::set<std::size_t>> out;

  std::size_t node(std::uint64_t id) { return index.at(id); }
  void edge(std::size_t a, std::size_t b) {
    if (a != b) out[a].insert(b);
  }
};

std::optional<CycleWitness> shortest_cycle(const Graph& g, std::size_t start) {
  // BFS from start's successors back to start; prev<0 marks a direct successor.
  std::vector<std::ptrdiff_t> prev(g.ids.size(), -1);
  std::vector<bool> seen(g.ids.size(), false);
  std::deque<std::size_t> q;
  for (std::size_t s : g.out[start]) {
    if (s == start) continue;  // self edges are never inserted
    if (!seen[s]) {
      seen[s] = true;
      q.push_back(s);
    }
  }
  if (g.out[start].count(start)) return CycleWitness{{g.ids[start]}};
  std::ptrdiff_t hit = -1;
  while (!q.empty() && hit < 0) {
    std::size_t v = q.front();
    q.pop_front();
    for (std::size_t w : g.out[v]) {
      if (w == start) {
        hit = static_cast<std::ptrdiff_t>(v);
        break;
      }
      if (!seen[w]) {
        seen[w] = true;
        prev[w] = static_cast<std::ptrdiff_t>(v);
        q.push_back(w);
      }
    }
  }
  if (hit < 0) {
    // direct two-node cycle start -> s -> start handled above; none found
    for (std::size_t s : g.out[start])
      if (g.out[s].count(start)) return CycleWitness{{g.ids[start], g.ids[s]}};
    return std::nullopt;
  }
  std::vector<std::size_t> path;
  for (std::size_t v = static_cast<std::size_t>(hit);;) {
    path.push_back(v);
    if (prev[v] < 0) break;
    v = static_cast<std::size_t>(prev[v]);
  }
  std::reverse(path.begin(), path.end());
  CycleWitness w;
  w.txn_ids.push_back(g.ids[start]);
  for (std::size_t v : path) w.txn_ids.push_back(g.ids[v]);
  return w;
}

}  // namespace

CheckResult check_conflict_serializable(const std::vector<CommitRecord>& history) {
  CheckResult res;
  Graph g;
  g.ids.reserve(history.size());
  for (const auto& rec : history) {
    if (g.index.count(rec.txn_id)) {
      res.violation = "duplicate commit record for txn " + std::to_string(rec.txn_id);
      return res;
    }
    g.index.emplace(rec.txn_id, g.ids.size());
    g.ids.push_back(rec.txn_id);
  }
  g.out.resize(g.ids.size());

  // Per-key version bookkeeping: writer of each installed wts and the
  // prev->next chain that fixes the version order.
  struct KeyVersions {
    std::map<std::uint64_t, std::uint64_t> writer_of;  // new_wts -> txn id
    std::map<std::uint64_t, std::uint64_t> next_of;    // prev_wts -> new_wts
  };
  std::map<FullKey, KeyVersions> keys;

  for (const auto& rec : history) {
    for (const auto& w : rec.writes) {
      auto& kv = keys[w.key];
      if (kv.writer_of.count(w.new_wts)) {
        res.violation = "two writers installed the same version on a key";
        return res;
      }
      kv.writer_of.emplace(w.new_wts, rec.txn_id);
      auto [it, fresh] = kv.next_of.emplace(w.prev_wts, w.new_wts);
      if (!fresh) {
        res.violation = "lost update: two committed writes overwrote version " +
                        std::to_string(w.prev_wts) + " of the same key";
        return res;
      }
    }
  }
  // The chain starting at the initial version 0 must visit every writer.
  for (auto& [key, kv] : keys) {
    std::uint64_t cur = 0;
    std::size_t visited = 0;
    std::set<std::uint64_t> seen{0};
    while (true) {
      auto it = kv.next_of.find(cur);
      if (it == kv.next_of.end()) break;
      cur = it->second;
      if (!seen.insert(cur).second) {
        res.violation = "version chain loops";
        return res;
      }
      ++visited;
    }
    if (visited != kv.next_of.size()) {
      res.violation = "version chain does not start at the initial state";
      return res;
    }
  }

  // Edges.
  for (const auto& rec : history) {
    std::size_t me = g.node(rec.txn_id);
    for (const auto& w : rec.writes) {
      auto& kv = keys[w.key];
      if (w.prev_wts != 0) g.edge(g.node(kv.writer_of.at(w.prev_wts)), me);  // ww
    }
    for (const auto& r : rec.reads) {
      auto kit = keys.find(r.key);
      if (r.wts != 0) {
        if (kit == keys.end() || !kit->second.writer_of.count(r.wts)) {
          res.violation = "read observed a version no committed transaction wrote";
          return res;
        }
        g.edge(g.node(kit->second.writer_of.at(r.wts)), me);  // wr: read-from
      }
      if (kit != keys.end()) {
        auto nit = kit->second.next_of.find(r.wts);
        if (nit != kit->second.next_of.end())
          g.edge(me, g.node(kit->second.writer_of.at(nit->second)));  // rw: anti-dependency
      }
    }
  }

  // Kahn's algorithm, smallest txn id first for a deterministic order.
  std::vector<std::size_t> indegree(g.ids.size(), 0);
  for (const auto& edges : g.out)
    for (std::size_t w : edges) ++indegree[w];
  std::priority_queue<std::pair<std::uint64_t, std::size_t>,
                      std::vector<std::pair<std::uint64_t, std::size_t>>, std::greater<>>
      ready;
  for (std::size_t v = 0; v < g.ids.size(); ++v)
    if (indegree[v] == 0) ready.emplace(g.ids[v], v);
  while (!ready.empty()) {
    auto [id, v] = ready.top();
    ready.pop();
    res.order.push_back(id);
    for (std::size_t w : g.out[v])
      if (--indegree[w] == 0) ready.emplace(g.ids[w], w);
  }
  if (res.order.size() != g.ids.size()) {
    std::vector<std::pair<std::uint64_t, std::size_t>> stuck;
    for (std::size_t v = 0; v < g.ids.size(); ++v)
      if (indegree[v] != 0) stuck.emplace_back(g.ids[v], v);
    std::sort(stuck.begin(), stuck.end());
    for (auto [id, v] : stuck) {
      res.cycle = shortest_cycle(g, v);
      if (res.cycle) break;
    }
    res.order.clear();
    return res;
  }
  res.ok = true;
  return res;
}

std::map<FullKey, Bytes> replay_serial(const std::vector<std::uint64_t>& order,
                                       const std::vector<TxnSpec>& specs, const LogicFn& logic,
                                       const std::map<FullKey, Bytes>& initial) {
  std::map<std::uint64_t, const TxnSpec*> by_id;
  for (const auto& s : specs) by_id.emplace(s.id, &s);
  std::map<FullKey, Bytes> state = initial;
  for (std::uint64_t id : order) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("replay order names an unknown txn");
    const TxnSpec& spec = *it->second;
    std::map<FullKey, Bytes> in;
    for (auto k : spec.rs) in[k] = state.at(k);
    for (auto k : spec.ws) in[k] = state.at(k);
    for (auto& [k, v] : logic(spec, in)) state[k] = v;
  }
  return state;
}

std::string history_line(const CommitRecord& rec) {
  std::ostringstream os;
  os << rec.txn_id << "," << rec.commit_key << ",";
  for (std::size_t i = 0; i < rec.reads.size(); ++i) {
    if (i) os << ";";
    os << rec.reads[i].key.table << ":" << rec.reads[i].key.key << "@" << rec.reads[i].wts;
  }
  os << ",";
  for (std::size_t i = 0; i < rec.writes.size(); ++i) {
    if (i) os << ";";
    os << rec.writes[i].key.table << ":" << rec.writes[i].key.key;
  }
  return os.str();
}

std::string dump_history(const std::vector<CommitRecord>& history) {
  std::string out;
  for (const auto& rec : history) {
    out += history_line(rec);
    out += "\n";
  }
  return out;
}

}  // namespace rdmacc
