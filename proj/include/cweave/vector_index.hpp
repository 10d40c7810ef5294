#pragma once

// Vectorial resonance layer: the embedding port, cosine similarity, and a
// k-NN index with an exact table plus an HNSW graph for approximate search.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cweave/core_model.hpp"

namespace cweave {

using Vector = std::vector<double>;

/// Embedding port. Implementations must return L2-normalized vectors of
/// dimension().
class Embedder {
 public:
  virtual ~Embedder() = default;
  [[nodiscard]] virtual Vector embed(std::string_view text) const = 0;
  [[nodiscard]] virtual std::size_t dimension() const = 0;
  [[nodiscard]] virtual std::string tag() const = 0;
};

/// Hashes each token (FNV-1a 64) into a splitmix64 stream, draws d
/// approximately standard-normal components per token (sum of 12 uniforms
/// minus 6), sums the token vectors, and normalizes.
Vector embed_deterministic(std::string_view text, std::size_t d);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

class DeterministicEmbedder final : public Embedder {
 public:
  explicit DeterministicEmbedder(std::size_t d = 64) : d_(d) {}
  [[nodiscard]] Vector embed(std::string_view text) const override { return embed_deterministic(text, d_); }
  [[nodiscard]] std::size_t dimension() const override { return d_; }
  [[nodiscard]] std::string tag() const override { return "mock-fnv1a-splitmix-d" + std::to_string(d_); }

 private:
  std::size_t d_;
};

/// u.v / (|u| |v|), clamped to [-1, 1].
double cosine(std::span<const double> u, std::span<const double> v);
Vector normalized(std::span<const double> v);

struct Embedding {
  ParticleId id;
  Vector vector;
  std::string embedder_tag;
};

struct KnnHit {
  ParticleId id;
  double score = 0.0;

  friend bool operator==(const KnnHit&, const KnnHit&) = default;
};

/// Score descending, then ascending id.
inline bool hit_order(const KnnHit& a, const KnnHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

struct AnnParams {
  std::size_t max_neighbors_per_node = 16;
  std::size_t ef_construction = 100;
  std::size_t ef_search = 64;

  void validate() const;
};

/// |ids(exact) ∩ ids(approx)| / |exact|.
double recall_at_k(std::span<const KnnHit> exact, std::span<const KnnHit> approx);

using IdFilter = std::function<bool(const ParticleId&)>;

class VectorIndex {
 public:
  VectorIndex(std::size_t dimension, std::string embedder_tag, AnnParams params = {}, std::uint64_t seed = 0x5EEDULL);

  /// Normalizes the vector before storing it.
  void insert(const ParticleId& id, std::span<const double> vector);
  void insert(const Embedding& e);
  void remove(const ParticleId& id);

  [[nodiscard]] bool contains(const ParticleId& id) const { return slot_of_.count(id) != 0; }
  [[nodiscard]] std::size_t size() const { return slot_of_.size(); }
  [[nodiscard]] std::size_t dimension() const { return dim_; }
  [[nodiscard]] const std::string& embedder_tag() const { return tag_; }
  [[nodiscard]] const AnnParams& params() const { return params_; }
  [[nodiscard]] std::span<const double> vector(const ParticleId& id) const;
  [[nodiscard]] std::vector<ParticleId> ids() const;

  [[nodiscard]] std::vector<KnnHit> knn_exact(std::span<const double> q, std::size_t k) const;
  /// Exact search over the given members only; unknown ids are ignored.
  [[nodiscard]] std::vector<KnnHit> knn_exact_among(std::span<const double> q, std::size_t k,
                                                    std::span<const ParticleId> candidates) const;

  [[nodiscard]] std::vector<KnnHit> knn_ann(std::span<const double> q, std::size_t k) const;
  /// ef_search is taken from `params`; the graph shape is fixed at construction.
  [[nodiscard]] std::vector<KnnHit> knn_ann(std::span<const double> q, std::size_t k, const AnnParams& params,
                                            const IdFilter& filter = {}) const;

  /// Binary sidecar: per member, 26 id bytes then d little-endian float32.
  void save_sidecar(const std::filesystem::path& path) const;
  /// Inserts every sidecar entry not already present; returns count loaded.
  std::size_t load_sidecar(const std::filesystem::path& path);

 private:
  struct Node {
    ParticleId id;
    int level = 0;
    bool deleted = false;
    std::vector<std::vector<std::uint32_t>> links;
  };
  struct Candidate {
    double dist;
    std::uint32_t slot;
  };

  [[nodiscard]] const double* data(std::uint32_t slot) const { return vectors_.data() + std::size_t{slot} * dim_; }
  [[nodiscard]] double distance(const double* a, const double* b) const;
  [[nodiscard]] std::size_t max_links(int level) const {
    return level == 0 ? 2 * params_.max_neighbors_per_node : params_.max_neighbors_per_node;
  }

  void check_query(std::span<const double> q) const;
  int random_level();
  void link_new_node(std::uint32_t slot);
  [[nodiscard]] std::uint32_t greedy_descend(const double* q, std::uint32_t entry, int from_level, int to_level) const;
  [[nodiscard]] std::vector<Candidate> search_layer(const double* q, std::uint32_t entry, std::size_t ef, int level,
                                                    const std::function<bool(std::uint32_t)>& accept) const;
  // Keeps a candidate only if it is closer to the base than to every neighbor already kept.
  [[nodiscard]] std::vector<std::uint32_t> select_neighbors(std::vector<Candidate> candidates, std::size_t m) const;
  void rebuild_graph();

  std::size_t dim_;
  std::string tag_;
  AnnParams params_;
  std::uint64_t rng_state_;
  double level_mult_;

  std::vector<Node> nodes_;
  std::vector<double> vectors_;
  std::unordered_map<ParticleId, std::uint32_t> slot_of_;
  std::size_t deleted_count_ = 0;
  std::uint32_t entry_ = 0;
  int max_level_ = -1;
};

}  // namespace cweave
