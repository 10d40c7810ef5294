#pragma once

// Durable particle store: an append-only log of framed records replayed into
// an in-memory table, plus whole-state snapshots. Strands are persisted here
// too so the relational layer can be rebuilt after a restart.
//
// Not internally synchronized. The engine serializes writers and guards
// readers with its own lock.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cweave/core_model.hpp"

namespace cweave {

enum class LogOp { put, remove, tombstone_ia_stale, put_strand, remove_strand };

std::string_view to_string(LogOp op) noexcept;
std::optional<LogOp> parse_log_op(std::string_view text) noexcept;

/// One framed log entry. `payload` is the canonical JSON of a particle or
/// strand for the put ops, or a JSON string id for the others.
struct StoreLogRecord {
  std::uint64_t seq = 0;
  LogOp op = LogOp::put;
  Json payload;
};

/// Frame layout: u32 LE body length, body, u32 LE CRC32 of body.
std::string encode_frame(const StoreLogRecord& record);

struct LogReadResult {
  std::vector<StoreLogRecord> records;
  /// A torn final frame (crash mid-append) is dropped and reported here.
  bool truncated_tail = false;
};

LogReadResult read_log(const std::filesystem::path& path);

enum class Cascade { strands_only, strands_and_flag_ias };

struct DeletionReport {
  ParticleId deleted;
  std::size_t strands_removed = 0;
  std::vector<ParticleId> ias_marked_stale;
  std::vector<StrandId> removed_strands;
};

struct ScanPredicate {
  std::optional<ParticleKind> kind;
  std::optional<Signifier> signifier;
  std::optional<std::string> user_tag;

  [[nodiscard]] bool matches(const InsightParticle& p) const;
};

struct StoreOptions {
  std::optional<std::filesystem::path> log_path;
  std::optional<std::filesystem::path> snapshot_path;
  bool fsync = true;
};

inline constexpr std::string_view kSnapshotMagic = "STRGSNAP";
inline constexpr std::uint16_t kSnapshotVersion = 1;

class ParticleStore {
 public:
  /// Purely in-memory store; seq still advances per mutation.
  ParticleStore() = default;
  ParticleStore(ParticleStore&&) noexcept;
  ParticleStore& operator=(ParticleStore&&) noexcept;
  ParticleStore(const ParticleStore&) = delete;
  ParticleStore& operator=(const ParticleStore&) = delete;
  ~ParticleStore();

  /// Loads the snapshot (if present), replays log records newer than it,
  /// then keeps the log open for appends.
  static ParticleStore open(const StoreOptions& options);

  ParticleId put(const InsightParticle& p);
  [[nodiscard]] const InsightParticle& get(const ParticleId& id) const;
  [[nodiscard]] const InsightParticle* find(const ParticleId& id) const;
  [[nodiscard]] bool contains(const ParticleId& id) const { return particles_.count(id) != 0; }
  DeletionReport remove(const ParticleId& id, Cascade cascade);
  [[nodiscard]] std::vector<InsightParticle> scan(const ScanPredicate& predicate) const;

  void put_strand(const RelationalStrand& s);
  void remove_strand(const StrandId& id);
  [[nodiscard]] const RelationalStrand* find_strand(const StrandId& id) const;

  [[nodiscard]] const std::map<ParticleId, InsightParticle>& particles() const { return particles_; }
  [[nodiscard]] const std::map<StrandId, RelationalStrand>& strands() const { return strands_; }
  [[nodiscard]] std::size_t size() const { return particles_.size(); }
  [[nodiscard]] std::uint64_t seq() const { return seq_; }

  void snapshot(const std::filesystem::path& path) const;
  /// Replaces the in-memory state with the snapshot's. The log is untouched.
  void restore(const std::filesystem::path& path);
  /// Writes a snapshot and truncates the log; later records continue the seq.
  void compact(const std::filesystem::path& snapshot_path);

  /// Applies one record exactly as replay would. Used for both live writes and recovery.
  void apply(const StoreLogRecord& record);

  /// Same particles, strands, and seq.
  [[nodiscard]] bool state_equals(const ParticleStore& other) const;

 private:
  void commit(LogOp op, Json payload);
  void index_strand(const RelationalStrand& s);
  void unindex_strand(const RelationalStrand& s);
  void open_log_for_append();
  void close_log();

  std::map<ParticleId, InsightParticle> particles_;
  std::map<StrandId, RelationalStrand> strands_;
  std::unordered_map<ParticleId, std::vector<StrandId>> incident_;
  std::uint64_t seq_ = 0;

  std::optional<std::filesystem::path> log_path_;
  std::FILE* log_ = nullptr;
  bool fsync_ = true;
};

}  // namespace cweave
