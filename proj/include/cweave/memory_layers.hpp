#pragma once

#include <memory>
#include <optional>

#include "cweave/particle_store.hpp"
#include "cweave/relational_graph.hpp"
#include "cweave/temporal_index.hpp"
#include "cweave/vector_index.hpp"

namespace cweave {

/// The four layers of the memory graph, mutated together so that every
/// particle is present in all of them or in none. Not synchronized.
class MemoryLayers {
 public:
  MemoryLayers(std::shared_ptr<const Embedder> embedder, AnnParams ann, StrandWeights weights, std::uint64_t seed,
               ParticleStore store = {});

  /// Stores, embeds, and indexes a new particle. `vector` defaults to embedding core_data.
  void add_particle(const InsightParticle& p, std::optional<Vector> vector = std::nullopt);
  /// Re-puts an existing particle and refreshes its temporal (and, if the text
  /// changed, vector) entries.
  void update_particle(const InsightParticle& p);
  DeletionReport delete_particle(const ParticleId& id, Cascade cascade);
  const RelationalStrand& add_strand(const ParticleId& src, const ParticleId& dst, StrandType type,
                                     const StrandEvidence& evidence, EpochMs now);

  /// Drops every index and rebuilds it from the store; returns elapsed ms.
  double rebuild_indexes();

  [[nodiscard]] const Embedder& embedder() const { return *embedder_; }
  [[nodiscard]] std::shared_ptr<const Embedder> embedder_ptr() const { return embedder_; }

  ParticleStore store;
  VectorIndex vectors;
  TemporalIndex temporal;
  RelationalGraph graph;

 private:
  std::shared_ptr<const Embedder> embedder_;
  AnnParams ann_;
  StrandWeights weights_;
  std::uint64_t seed_;
};

}  // namespace cweave
