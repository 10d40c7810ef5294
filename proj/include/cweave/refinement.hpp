#pragma once

// Cognitive refinement: clustering, aggregate synthesis, importance decay and
// recalibration, relation suggestion, and pruning.
//
// A cycle is split into three phases so a caller can hold different locks
// around each: capture() copies what the cycle needs, plan_refinement() does
// the expensive work (including oracle calls) on that copy, and commit_plan()
// applies the result to the live layers.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cweave/memory_layers.hpp"
#include "cweave/semantic_oracle.hpp"

namespace cweave {

struct ClusterConfig {
  double tau_cluster = 0.60;
  double w_sem = 0.6;
  double w_rel = 0.2;
  double w_temp = 0.2;
  double sigma_t_ms = 86'400'000.0;
  std::size_t min_cluster_size = 3;
  double q_min = 0.55;

  void validate() const;
};

struct RefinementTriggers {
  DurationMs period_ms = 3'600'000;
  std::uint64_t ingest_count_threshold = 100;
  double fragmentation_threshold = 0.5;

  void validate() const;
};

struct IAObjectiveWeights {
  /// Per-constituent weights; empty means uniform. Normalized before use.
  std::vector<double> omega;
  double lambda_comp = 0.01;

  void validate() const;
};

struct RecalibrationCoeffs {
  double alpha = 0.85;
  double beta = 0.10;
  double gamma = 0.05;
  std::uint64_t f_cap = 20;
  double delta_contra = 0.1;

  void validate() const;
};

struct DecayParams {
  double lambda_decay = 8.0e-9;
  double i_base = 0.05;

  void validate() const;
};

struct RefinementConfig {
  ClusterConfig cluster;
  IAObjectiveWeights objective;
  RecalibrationCoeffs recalibration;
  DecayParams decay;
  double prune_floor = 0.02;
  std::size_t suggest_top_k = 50;
  double ia_importance_bonus = 0.1;

  void validate() const;
};

struct IAObjectiveRecord {
  ParticleId ia;
  double objective = 0.0;
};

struct RefinementReport {
  std::size_t clusters_considered = 0;
  std::size_t clusters_accepted = 0;
  std::size_t clusters_skipped_covered = 0;
  std::vector<ParticleId> ias_created;
  std::size_t strands_added = 0;
  std::size_t importances_changed = 0;
  std::vector<ParticleId> particles_pruned;
  double wall_time_ms = 0.0;
  std::vector<IAObjectiveRecord> ia_objectives;
  std::vector<std::string> errors;
};

Json to_json(const RefinementReport& r);

// --- pure building blocks ------------------------------------------------------

using Cluster = std::vector<ParticleId>;  // sorted ascending

struct ClusterMember {
  ParticleId id;
  Vector embedding;
  EpochMs t_create = 0;
};

/// Decides whether a strand exists between two particles (either direction).
using LinkPredicate = std::function<bool(const ParticleId&, const ParticleId&)>;

double cluster_affinity(const ClusterMember& a, const ClusterMember& b, bool linked, const ClusterConfig& cfg);

/// Single-link merging of every pair with affinity ≥ tau, undersized clusters
/// dropped. Clusters come back ordered by their smallest id.
std::vector<Cluster> identify_clusters(std::span<const ClusterMember> members, const LinkPredicate& linked,
                                       const ClusterConfig& cfg);

struct QualityVerdict {
  bool accept = false;
  double score = 0.0;
};

/// Mean pairwise cosine; accept iff score ≥ q_min and size ≥ min_cluster_size.
QualityVerdict cluster_quality(std::span<const Vector> member_embeddings, const ClusterConfig& cfg);

/// −Σ ωᵢ·cos(embed(text), vᵢ) + λ_comp·(characters in text). Lower is better.
double ia_objective(const SynthesisResult& candidate, std::span<const Vector> member_embeddings,
                    const IAObjectiveWeights& w, const Embedder& embedder);

/// (i0 − i_base)·exp(−λ·dt) + i_base, dt in milliseconds.
double decay_importance(double i0, const DecayParams& p, double dt_ms);

/// clamp(α·I + β·min(f, f_cap)/f_cap + γ·mean(links) − δ·flags + extra, 0, 1).
double recalibrate_importance(const InsightParticle& p, std::span<const double> ia_link_strengths,
                              const RecalibrationCoeffs& coeffs, std::size_t contradiction_flags,
                              double extra_signal = 0.0);

/// Importance decayed from last_recalibrated to `now`; future stamps decay by zero.
double current_importance(const InsightParticle& p, const DecayParams& decay, EpochMs now);

/// Ids of IAs plus every particle appearing in some IA's provenance.
std::unordered_set<ParticleId> protected_particles(const RelationalGraph& graph,
                                                   const std::map<ParticleId, InsightParticle>& particles);

// --- layer-level operations ----------------------------------------------------

struct PreparedIA {
  InsightParticle particle;
  Vector embedding;
  std::vector<std::pair<ParticleId, StrandEvidence>> provenance;
  double objective = 0.0;
};

/// Calls the oracle and assembles (but does not store) an aggregate.
PreparedIA prepare_ia(const std::vector<const InsightParticle*>& constituents, std::span<const Vector> embeddings,
                      SemanticOracle& oracle, const Embedder& embedder, const RefinementConfig& cfg, EpochMs now,
                      std::uint64_t id_seed);

/// Stores the aggregate and its derivedFrom strands; all or nothing.
void commit_ia(MemoryLayers& layers, const PreparedIA& ia, EpochMs now);

InsightParticle synthesize_ia(MemoryLayers& layers, const Cluster& cluster, SemanticOracle& oracle,
                              const RefinementConfig& cfg, EpochMs now, std::uint64_t id_seed,
                              double* objective_out = nullptr);

/// Deletes every unprotected particle whose decayed importance is below floor.
std::vector<ParticleId> prune(MemoryLayers& layers, double importance_floor, const DecayParams& decay, EpochMs now);

// --- cycle phases --------------------------------------------------------------

struct CycleSnapshot {
  EpochMs now = 0;
  std::map<ParticleId, InsightParticle> particles;
  std::unordered_map<ParticleId, Vector> embeddings;
  std::unordered_map<ParticleId, std::vector<double>> ia_link_strengths;
  std::unordered_map<ParticleId, std::size_t> contradiction_flags;
  std::unordered_map<ParticleId, std::unordered_set<ParticleId>> links;
  std::vector<std::vector<ParticleId>> covered;  // provenance of each non-stale IA, sorted
  std::unordered_set<ParticleId> protected_ids;
};

/// Also flags contradictions, which mutates the graph's status table.
CycleSnapshot capture(MemoryLayers& layers, EpochMs now);

struct ImportanceUpdate {
  ParticleId id;
  double importance = 0.0;
};

struct SuggestedStrand {
  ParticleId src;
  ParticleId dst;
  StrandType type = StrandType::relatedTo;
  StrandEvidence evidence;
};

struct RefinementPlan {
  EpochMs now = 0;
  std::vector<ImportanceUpdate> importance_updates;
  std::vector<PreparedIA> new_ias;
  std::vector<SuggestedStrand> suggestions;
  std::vector<ParticleId> prune;
  RefinementReport report;
};

/// Callers may pass a seed function so ids do not collide with ones they mint.
using IdSeedSource = std::function<std::uint64_t()>;

RefinementPlan plan_refinement(const CycleSnapshot& snapshot, SemanticOracle& oracle, const Embedder& embedder,
                               const RefinementConfig& cfg, const IdSeedSource& next_seed);

/// Applies the plan; particles that vanished since capture are skipped.
RefinementReport commit_plan(MemoryLayers& layers, const RefinementPlan& plan);

/// capture + plan + commit with no locking, for single-threaded callers.
RefinementReport refinement_cycle(MemoryLayers& layers, SemanticOracle& oracle, const RefinementConfig& cfg,
                                  EpochMs now, const IdSeedSource& next_seed);

}  // namespace cweave
