#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "rdmacc/store.hpp"
#include "rdmacc/types.hpp"

namespace rdmacc {

// Globally unique transaction timestamp packed into 64 bits:
// clock (high 40) | machine (8) | thread (8) | coroutine (8).
// The packed integer order is the timestamp order; 0 means "none/unlocked".
class Timestamp {
 public:
  static constexpr std::uint64_t kClockBits = 40;
  static constexpr std::uint64_t kIdBits = 8;
  static constexpr std::uint64_t kMaxClock = (1ull << kClockBits) - 1;

  constexpr Timestamp() = default;
  constexpr explicit Timestamp(std::uint64_t packed) : packed_(packed) {}

  static Timestamp make(std::uint64_t clock, std::uint32_t machine, std::uint32_t thread,
                        std::uint32_t coro);

  std::uint64_t packed() const { return packed_; }
  std::uint64_t clock() const { return packed_ >> 24; }
  std::uint32_t machine() const { return (packed_ >> 16) & 0xff; }
  std::uint32_t thread() const { return (packed_ >> 8) & 0xff; }
  std::uint32_t coro() const { return packed_ & 0xff; }
  bool is_zero() const { return packed_ == 0; }

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;

 private:
  std::uint64_t packed_ = 0;
};

// Per-coroutine logical clock. A fresh timestamp is drawn per transaction
// begin; observing a remote timestamp ratchets the clock forward so local
// timers across machines stay within a bounded gap.
class TsClock {
 public:
  TsClock() = default;
  TsClock(std::uint32_t machine, std::uint32_t thread, std::uint32_t coro)
      : machine_(machine), thread_(thread), coro_(coro) {}

  Timestamp begin_txn() {
    ++clock_;
    return Timestamp::make(clock_, machine_, thread_, coro_);
  }

  // local clock = max(local clock, observed.clock); never decreases.
  void observe(Timestamp ts) { clock_ = std::max(clock_, ts.clock()); }
  void observe_packed(std::uint64_t packed) { observe(Timestamp(packed)); }

  std::uint64_t clock() const { return clock_; }

 private:
  std::uint64_t clock_ = 0;
  std::uint32_t machine_ = 0, thread_ = 0, coro_ = 0;
};

enum class Protocol : std::uint8_t { kNoWait, kWaitDie, kOcc, kMvcc, kSundial, kCalvin };

Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

// Execution stages that can be bound to a communication primitive. Fetch is
// the fused lock+read of the 2PL protocols; Broadcast/Forward are CALVIN's
// two communication steps.
enum class Stage : std::uint8_t {
  kFetch,
  kRead,
  kLock,
  kValidate,
  kRenew,
  kLog,
  kCommit,
  kRelease,
  kBroadcast,
  kForward,
};
inline constexpr std::size_t kStageCount = 10;

std::string to_string(Stage s);
std::span<const Stage> protocol_stages(Protocol p);

// Bit string choosing the primitive per stage: 1 = one-sided, 0 = RPC.
// The most significant digit is the protocol's earliest stage.
class HybridCode {
 public:
  HybridCode() = default;
  HybridCode(std::uint32_t bits, std::uint8_t width) : bits_(bits), width_(width) {}

  static HybridCode all_rpc(Protocol p);
  static HybridCode all_one_sided(Protocol p);
  // Throws ConfigError naming the protocol's stage count on a width mismatch.
  static HybridCode parse(const std::string& digits, Protocol p);

  bool one_sided(Protocol p, Stage s) const;
  std::uint8_t width() const { return width_; }
  std::uint32_t bits() const { return bits_; }
  std::string str() const;

  friend bool operator==(const HybridCode&, const HybridCode&) = default;

 private:
  std::uint32_t bits_ = 0;
  std::uint8_t width_ = 0;
};

// All 2^stage_count primitive assignments for a protocol, 00..0 first.
std::vector<HybridCode> enumerate_hybrids(Protocol p);

enum class TxnStatus : std::uint8_t { kActive, kCommitted, kAborted };

enum class AbortReason : std::uint8_t {
  kNone,
  kLockConflict,      // lock CAS failed / busy (NOWAIT, OCC, MVCC, SUNDIAL)
  kDie,               // WAITDIE: younger transaction died
  kValidateFail,      // OCC read-set drift, SUNDIAL failed renewal
  kWriteRule,         // MVCC Cond W1 (fresh or re-check)
  kReadRule,          // MVCC Cond R2
  kSlotOverflow,      // MVCC Cond R1: no committed version below ctts
  kDoubleReadMismatch,
  kFault,             // simulated RNIC error
};

std::string to_string(AbortReason r);

struct RsEntry {
  TableId table = 0;
  Key key = 0;
  NodeId node = 0;
  std::uint64_t offset = 0;  // remote tuple address, captured on every fetch path
  std::uint64_t wts = 0;     // version the read observed
  std::uint64_t rts = 0;
  Bytes record;
};

struct WsEntry {
  TableId table = 0;
  Key key = 0;
  NodeId node = 0;
  std::uint64_t offset = 0;
  std::uint64_t wts = 0;  // version the write is based on (overwritten at commit)
  std::uint64_t rts = 0;
  Bytes record;      // fetched value
  Bytes new_record;  // value installed at commit
  bool locked = false;
  std::uint32_t slot = 0;  // MVCC eviction slot, chosen under the lock
};

struct TxnContext {
  std::uint64_t txn_id = 0;
  Protocol protocol = Protocol::kNoWait;
  Timestamp ctts;
  Timestamp commit_tts;  // SUNDIAL's required commit timestamp
  std::vector<RsEntry> rs;
  std::vector<WsEntry> ws;
  HybridCode hybrid;
  TxnStatus status = TxnStatus::kActive;
  AbortReason abort_reason = AbortReason::kNone;

  std::array<SimTime, kStageCount> stage_time{};
  SimTime local_time = 0;
  std::uint64_t round_trips = 0;
  SimTime begin_time = 0;
  SimTime end_time = 0;

  RsEntry* find_rs(TableId t, Key k);
  WsEntry* find_ws(TableId t, Key k);
  SimTime stage_total() const;
};

// What the serializability oracle consumes, one per committed transaction.
// Reads carry the wts of the version they observed; writes carry the wts
// they overwrote and the one they installed, which pins the version order.
struct CommitRecord {
  std::uint64_t txn_id = 0;
  std::uint64_t commit_key = 0;  // protocol-specific replay order key
  struct Read {
    FullKey key;
    std::uint64_t wts = 0;
  };
  struct Write {
    FullKey key;
    std::uint64_t prev_wts = 0;
    std::uint64_t new_wts = 0;
  };
  std::vector<Read> reads;
  std::vector<Write> writes;
};

// Coordinator-log payload replicated to backups before any write-back.
struct LogRecord {
  std::uint64_t ctts = 0;
  std::vector<std::pair<FullKey, Bytes>> writes;
};

Bytes encode_log_record(const LogRecord& r);
LogRecord decode_log_record(std::span<const std::uint8_t> bytes);

}  // namespace rdmacc
