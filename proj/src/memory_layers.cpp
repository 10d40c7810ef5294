#include "cweave/memory_layers.hpp"

#include <chrono>

namespace cweave {

MemoryLayers::MemoryLayers(std::shared_ptr<const Embedder> embedder, AnnParams ann, StrandWeights weights,
                           std::uint64_t seed, ParticleStore store_in)
    : store(std::move(store_in)),
      vectors(embedder->dimension(), embedder->tag(), ann, seed),
      graph(weights, seed ^ 0x9E3779B97F4A7C15ULL ^ store.seq()),
      embedder_(std::move(embedder)),
      ann_(ann),
      weights_(weights),
      seed_(seed) {
  if (store.size() > 0 || !store.strands().empty()) rebuild_indexes();
}

void MemoryLayers::add_particle(const InsightParticle& p, std::optional<Vector> vector) {
  if (store.contains(p.id)) throw Error(ErrorCode::duplicate_id, "particle " + p.id.str() + " already stored");
  const Vector v = vector ? std::move(*vector) : embedder_->embed(p.core_data);
  if (v.size() != vectors.dimension()) throw Error(ErrorCode::dimension_mismatch, "embedding has wrong dimension");
  store.put(p);
  try {
    vectors.insert(p.id, v);
  } catch (...) {
    store.remove(p.id, Cascade::strands_only);
    throw;
  }
  temporal.insert(p.id, p.temporal);
  graph.add_node(p.id, p.kind);
}

void MemoryLayers::update_particle(const InsightParticle& p) {
  const InsightParticle old = store.get(p.id);
  if (old.kind != p.kind) throw Error(ErrorCode::conflict, "particle kind cannot change");
  std::optional<Vector> fresh;
  if (old.core_data != p.core_data) fresh = embedder_->embed(p.core_data);
  store.put(p);
  temporal.reindex(p.id, old.temporal, p.temporal);
  if (fresh) {
    vectors.remove(p.id);
    vectors.insert(p.id, *fresh);
  }
}

DeletionReport MemoryLayers::delete_particle(const ParticleId& id, Cascade cascade) {
  auto report = store.remove(id, cascade);
  if (vectors.contains(id)) vectors.remove(id);
  if (temporal.contains(id)) temporal.remove(id);
  graph.remove_node(id);
  return report;
}

const RelationalStrand& MemoryLayers::add_strand(const ParticleId& src, const ParticleId& dst, StrandType type,
                                                 const StrandEvidence& evidence, EpochMs now) {
  std::optional<RelationalStrand> previous;
  if (const auto* s = graph.find_strand(src, dst, type)) previous = *s;
  const auto& strand = graph.add_strand(src, dst, type, evidence, now);
  try {
    store.put_strand(strand);
  } catch (...) {
    if (previous)
      graph.insert_strand_unchecked(*previous);
    else
      graph.remove_strand(strand.id);
    throw;
  }
  return strand;
}

double MemoryLayers::rebuild_indexes() {
  const auto start = std::chrono::steady_clock::now();
  vectors = VectorIndex(embedder_->dimension(), embedder_->tag(), ann_, seed_);
  temporal = TemporalIndex{};
  graph = RelationalGraph(weights_, seed_ ^ 0x9E3779B97F4A7C15ULL ^ store.seq());
  for (const auto& [id, p] : store.particles()) {
    vectors.insert(id, embedder_->embed(p.core_data));
    temporal.insert(id, p.temporal);
    graph.add_node(id, p.kind);
  }
  for (const auto& [id, s] : store.strands()) graph.insert_strand_unchecked(s);
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace cweave
