#pragma once

// The engine ties the layers together: ingestion, the three-stage hybrid
// query, refinement scheduling, integrity audits, and persistence.
//
// Locking: one timed writer mutex serializes ingest, delete, link, refine and
// checkpoint; a shared mutex guards the layers. Queries hold it shared while
// reading and exclusively only to record accesses. Refinement releases it
// while it plans (oracle calls included), so queries keep running against the
// pre-cycle state until the commit.

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cweave/memory_layers.hpp"
#include "cweave/refinement.hpp"
#include "cweave/semantic_oracle.hpp"
#include "cweave/temporal_index.hpp"

namespace cweave {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> bearer_token;
};

struct OracleSettings {
  std::string kind = "mock";  // "mock" or "remote"; remote reads ORACLE_* from the environment
  std::size_t max_core_chars = 4096;
  std::size_t max_keys = 8;
};

struct EngineConfig {
  std::uint64_t seed = 42;
  std::optional<std::filesystem::path> data_dir;
  bool fsync = true;
  std::optional<std::filesystem::path> audit_log_path;
  std::size_t embedding_dimension = 64;
  AnnParams ann;
  StrandWeights strand_weights;
  RefinementConfig refinement;
  RefinementTriggers triggers;
  double similarity_weight = 0.7;
  double initial_importance = 0.5;
  std::int64_t write_lock_timeout_ms = 5000;
  /// Restricted ANN searches fall back to exact scoring at or below this many candidates.
  std::size_t exact_candidate_limit = 4096;
  OracleSettings oracle;
  ServiceConfig service;

  void validate() const;
  static EngineConfig from_json(const Json& j);
  static EngineConfig load(const std::filesystem::path& path);
  [[nodiscard]] Json to_json() const;
};

struct TimeWindow {
  TemporalField field = TemporalField::t_create;
  EpochMs lo = 0;
  EpochMs hi = 0;
};

struct GraphExpand {
  std::size_t max_depth = 1;
  std::optional<StrandType> type_filter;
  double min_strength = 0.0;
};

struct QuerySpec {
  std::optional<std::string> text;
  std::optional<TimeWindow> time_window;
  std::size_t k = 10;
  std::optional<GraphExpand> graph_expand;
  double min_importance = 0.0;
  bool use_ann = true;
  std::optional<std::string> user_tag;

  void validate() const;
  static QuerySpec from_json(const Json& j);
  [[nodiscard]] Json to_json() const;
};

struct RecallHit {
  ParticleId id;
  double relevance = 0.0;
  std::optional<std::vector<StrandId>> provenance_path;
};

struct RecallResult {
  std::vector<RecallHit> hits;
  std::uint64_t snapshot_seq = 0;
  double latency_ms = 0.0;

  [[nodiscard]] Json to_json() const;
};

struct EngineStats {
  std::size_t particle_count = 0;
  std::size_t ia_count = 0;
  std::size_t ip_count = 0;
  std::size_t strand_count = 0;
  std::size_t vector_index_size = 0;
  std::size_t temporal_index_size = 0;
  std::size_t graph_node_count = 0;
  std::size_t ips_outside_provenance = 0;
  EpochMs last_refinement = 0;
  std::uint64_t ingests_since_refinement = 0;
  std::uint64_t log_seq = 0;
  double index_rebuild_ms = 0.0;

  /// Fraction of IPs that appear in no aggregate's provenance; 0 without IPs.
  [[nodiscard]] double fragmentation() const;
  [[nodiscard]] Json to_json() const;
};

struct TriggerDecision {
  bool refine = false;
  std::string reason;  // "period", "ingest_count", "fragmentation", or empty
};

TriggerDecision should_refine(const EngineStats& stats, const RefinementTriggers& triggers, EpochMs now);

struct AuditViolation {
  std::string kind;
  std::string detail;
};

Json to_json(const std::vector<AuditViolation>& violations);

struct EventWindow {
  EpochMs start = 0;
  EpochMs end = 0;
};

std::shared_ptr<SemanticOracle> make_oracle(const EngineConfig& config, std::shared_ptr<const Embedder> embedder);

class Engine {
 public:
  /// A null oracle or embedder selects the one named by the config.
  explicit Engine(EngineConfig config, std::shared_ptr<SemanticOracle> oracle = nullptr,
                  std::shared_ptr<const Embedder> embedder = nullptr);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  ParticleId ingest(std::string_view raw, const SituationalImprint& imprint, EpochMs now,
                    std::optional<EventWindow> event = std::nullopt);
  [[nodiscard]] InsightParticle get(const ParticleId& id) const;
  DeletionReport remove(const ParticleId& id, Cascade cascade = Cascade::strands_and_flag_ias);
  RelationalStrand link(const ParticleId& src, const ParticleId& dst, StrandType type, const StrandEvidence& evidence,
                        EpochMs now);
  /// Evidence from the layers: cosine similarity, co-occurrence 0, the given
  /// confidence, and the current common-neighbor count.
  RelationalStrand link(const ParticleId& src, const ParticleId& dst, StrandType type, double confidence, EpochMs now);

  RecallResult query(const QuerySpec& spec, EpochMs now);
  RefinementReport refine(EpochMs now);
  std::optional<RefinementReport> maybe_refine(EpochMs now);

  [[nodiscard]] EngineStats stats() const;
  [[nodiscard]] std::vector<AuditViolation> audit() const;
  [[nodiscard]] std::vector<InsightParticle> scan(const ScanPredicate& predicate) const;
  [[nodiscard]] std::vector<ParticleId> provenance(const ParticleId& ia) const;
  [[nodiscard]] std::vector<RelationalStrand> strands_of(const ParticleId& id) const;

  /// Writes a snapshot and truncates the log (persistent engines only).
  void checkpoint();
  void export_graph(std::ostream& out) const;

  [[nodiscard]] const EngineConfig& config() const { return config_; }
  [[nodiscard]] const SemanticOracle& oracle() const { return *oracle_; }

  // Fault injection and white-box inspection for tests. These bypass the
  // writer lock and every consistency guarantee.
  MemoryLayers& layers_unsafe() { return *layers_; }
  const MemoryLayers& layers_unsafe() const { return *layers_; }
  std::size_t import_graph_jsonl_unsafe(std::istream& in);

 private:
  std::unique_lock<std::timed_mutex> acquire_writer();
  std::uint64_t next_seed();
  ParticleId mint_particle_id(EpochMs now);
  void append_audit_log(const RefinementReport& report, EpochMs now) const;
  void load_meta();
  void save_meta() const;

  EngineConfig config_;
  std::shared_ptr<const Embedder> embedder_;
  std::shared_ptr<SemanticOracle> oracle_;
  std::unique_ptr<MemoryLayers> layers_;

  mutable std::timed_mutex writer_;
  mutable std::shared_mutex state_;
  std::uint64_t seed_counter_ = 0;
  std::uint64_t seed_salt_ = 0;
  EpochMs last_refinement_ = 0;
  bool refined_or_started_ = false;
  std::uint64_t ingests_since_refinement_ = 0;
  double rebuild_ms_ = 0.0;
};

}  // namespace cweave
