#include "rdmacc/txn.hpp"

#include <algorithm>

#include "rdmacc/bytes.hpp"

namespace rdmacc {

Timestamp Timestamp::make(std::uint64_t clock, std::uint32_t machine, std::uint32_t thread,
                          std::uint32_t coro) {
  if (clock > kMaxClock || machine > 0xff || thread > 0xff || coro > 0xff)
    throw ConfigError("timestamp component out of range");
  return Timestamp((clock << 24) | (std::uint64_t(machine) << 16) |
                   (std::uint64_t(thread) << 8) | coro);
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "nowait") return Protocol::kNoWait;
  if (s == "waitdie") return Protocol::kWaitDie;
  if (s == "occ") return Protocol::kOcc;
  if (s == "mvcc") return Protocol::kMvcc;
  if (s == "sundial") return Protocol::kSundial;
  if (s == "calvin") return Protocol::kCalvin;
  throw ConfigError("unknown protocol: " + s);
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kNoWait: return "nowait";
    case Protocol::kWaitDie: return "waitdie";
    case Protocol::kOcc: return "occ";
    case Protocol::kMvcc: return "mvcc";
    case Protocol::kSundial: return "sundial";
    case Protocol::kCalvin: return "calvin";
  }
  return "?";
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kFetch: return "fetch";
    case Stage::kRead: return "read";
    case Stage::kLock: return "lock";
    case Stage::kValidate: return "validate";
    case Stage::kRenew: return "renew";
    case Stage::kLog: return "log";
    case Stage::kCommit: return "commit";
    case Stage::kRelease: return "release";
    case Stage::kBroadcast: return "broadcast";
    case Stage::kForward: return "forward";
  }
  return "?";
}

namespace {
constexpr Stage k2plStages[] = {Stage::kFetch, Stage::kLog, Stage::kCommit};
constexpr Stage kOccStages[] = {Stage::kRead,   Stage::kLock,   Stage::kValidate,
                                Stage::kLog,    Stage::kCommit, Stage::kRelease};
constexpr Stage kMvccStages[] = {Stage::kRead, Stage::kLock, Stage::kLog, Stage::kCommit};
constexpr Stage kSundialStages[] = {Stage::kRead, Stage::kLock, Stage::kRenew, Stage::kLog,
                                    Stage::kCommit};
constexpr Stage kCalvinStages[] = {Stage::kBroadcast, Stage::kForward};
}  // namespace

std::span<const Stage> protocol_stages(Protocol p) {
  switch (p) {
    case Protocol::kNoWait:
    case Protocol::kWaitDie: return k2plStages;
    case Protocol::kOcc: return kOccStages;
    case Protocol::kMvcc: return kMvccStages;
    case Protocol::kSundial: return kSundialStages;
    case Protocol::kCalvin: return kCalvinStages;
  }
  return {};
}

HybridCode HybridCode::all_rpc(Protocol p) {
  return HybridCode(0, static_cast<std::uint8_t>(protocol_stages(p).size()));
}

HybridCode HybridCode::all_one_sided(Protocol p) {
  auto w = static_cast<std::uint8_t>(protocol_stages(p).size());
  return HybridCode((1u << w) - 1u, w);
}

HybridCode HybridCode::parse(const std::string& digits, Protocol p) {
  auto stages = protocol_stages(p);
  if (digits.size() != stages.size())
    throw ConfigError("hybrid code for " + to_string(p) + " must have exactly " +
                      std::to_string(stages.size()) + " binary digits");
  std::uint32_t bits = 0;
  for (char c : digits) {
    if (c != '0' && c != '1')
      throw ConfigError("hybrid code must be a binary string, got '" + digits + "'");
    bits = (bits << 1) | (c == '1' ? 1u : 0u);
  }
  return HybridCode(bits, static_cast<std::uint8_t>(stages.size()));
}

bool HybridCode::one_sided(Protocol p, Stage s) const {
  auto stages = protocol_stages(p);
  for (std::size_t i = 0; i < stages.size(); ++i)
    if (stages[i] == s) return (bits_ >> (stages.size() - 1 - i)) & 1u;
  throw ConfigError("stage " + to_string(s) + " is not part of protocol " + to_string(p));
}

std::string HybridCode::str() const {
  std::string s(width_, '0');
  for (std::uint8_t i = 0; i < width_; ++i)
    if ((bits_ >> (width_ - 1 - i)) & 1u) s[i] = '1';
  return s;
}

std::vector<HybridCode> enumerate_hybrids(Protocol p) {
  auto w = static_cast<std::uint8_t>(protocol_stages(p).size());
  std::vector<HybridCode> out;
  out.reserve(1u << w);
  for (std::uint32_t bits = 0; bits < (1u << w); ++bits) out.emplace_back(bits, w);
  return out;
}

std::string to_string(AbortReason r) {
  switch (r) {
    case AbortReason::kNone: return "none";
    case AbortReason::kLockConflict: return "lock_conflict";
    case AbortReason::kDie: return "die";
    case AbortReason::kValidateFail: return "validate_fail";
    case AbortReason::kWriteRule: return "write_rule";
    case AbortReason::kReadRule: return "read_rule";
    case AbortReason::kSlotOverflow: return "slot_overflow";
    case AbortReason::kDoubleReadMismatch: return "double_read_mismatch";
    case AbortReason::kFault: return "fault";
  }
  return "?";
}

RsEntry* TxnContext::find_rs(TableId t, Key k) {
  for (auto& e : rs)
    if (e.table == t && e.key == k) return &e;
  return nullptr;
}

WsEntry* TxnContext::find_ws(TableId t, Key k) {
  for (auto& e : ws)
    if (e.table == t && e.key == k) return &e;
  return nullptr;
}

SimTime TxnContext::stage_total() const {
  SimTime sum = 0;
  for (SimTime t : stage_time) sum += t;
  return sum;
}

Bytes encode_log_record(const LogRecord& r) {
  Bytes out;
  put_u64(out, r.ctts);
  put_u32(out, static_cast<std::uint32_t>(r.writes.size()));
  for (const auto& [key, rec] : r.writes) {
    put_u32(out, key.table);
    put_u64(out, key.key);
    put_u32(out, static_cast<std::uint32_t>(rec.size()));
    put_bytes(out, rec);
  }
  return out;
}

LogRecord decode_log_record(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  LogRecord rec;
  rec.ctts = r.u64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    FullKey k{r.u32(), r.u64()};
    std::uint32_t len = r.u32();
    rec.writes.emplace_back(k, r.bytes(len));
  }
  return rec;
}

}  // namespace rdmacc
