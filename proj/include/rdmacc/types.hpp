#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdmacc {

using SimTime = std::uint64_t;
using NodeId = std::uint16_t;
using ThreadId = std::uint16_t;
using CoroId = std::uint16_t;
using TableId = std::uint32_t;
using Key = std::uint64_t;
using Bytes = std::vector<std::uint8_t>;

// Identifies one cooperative task lane: (machine, worker thread, coroutine slot).
struct TaskId {
  NodeId node = 0;
  ThreadId thread = 0;
  CoroId coro = 0;

  friend auto operator<=>(const TaskId&, const TaskId&) = default;
};

struct FullKey {
  TableId table = 0;
  Key key = 0;

  friend auto operator<=>(const FullKey&, const FullKey&) = default;
};

struct FullKeyHash {
  std::size_t operator()(const FullKey& k) const noexcept {
    std::uint64_t x = (std::uint64_t(k.table) << 1) ^ (k.key * 0x9e3779b97f4a7c15ull);
    x ^= x >> 31;
    return static_cast<std::size_t>(x);
  }
};

// Invalid harness/cluster configuration (bad sizes, exhausted capacity).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Misuse of the wire protocol (unknown handler, malformed message).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Key not present in the partitioned store.
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// No runnable task but cooperative tasks are still pending on waits.
struct DeadlockError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const TaskId& id) {
  return "n" + std::to_string(id.node) + ".t" + std::to_string(id.thread) + ".c" +
         std::to_string(id.coro);
}

}  // namespace rdmacc
