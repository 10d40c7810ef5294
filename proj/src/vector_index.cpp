#include "cweave/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <queue>

namespace cweave {

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

Vector embed_deterministic(std::string_view text, std::size_t d) {
  if (d == 0) throw Error(ErrorCode::validation, "embedding dimension must be positive");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw Error(ErrorCode::empty_input, "text has no alphanumeric tokens");
  Vector sum(d, 0.0);
  for (const auto& token : tokens) {
    std::uint64_t state = fnv1a64(token);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int u = 0; u < 12; ++u) acc += splitmix_uniform(state);
      sum[i] += acc - 6.0;
    }
  }
  return normalized(sum);
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw Error(ErrorCode::dimension_mismatch,
                "cosine of vectors with dimensions " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::zero_vector, "cosine of a zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

Vector normalized(std::span<const double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0 || !std::isfinite(norm)) throw Error(ErrorCode::zero_vector, "cannot normalize a zero vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

void AnnParams::validate() const {
  if (max_neighbors_per_node < 2 || ef_construction == 0 || ef_search == 0)
    throw Error(ErrorCode::config, "ANN parameters must be positive (max_neighbors_per_node >= 2)");
}

double recall_at_k(std::span<const KnnHit> exact, std::span<const KnnHit> approx) {
  if (exact.empty()) throw Error(ErrorCode::validation, "recall@k needs at least one exact hit");
  std::vector<ParticleId> truth;
  truth.reserve(exact.size());
  for (const auto& h : exact) truth.push_back(h.id);
  std::sort(truth.begin(), truth.end());
  std::vector<ParticleId> found;
  for (const auto& h : approx) found.push_back(h.id);
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  std::vector<ParticleId> common;
  std::set_intersection(truth.begin(), truth.end(), found.begin(), found.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(exact.size());
}

// --- index --------------------------------------------------------------------------

namespace {

// Per-thread visit marks; concurrent const searches never share state.
struct VisitMarks {
  std::vector<std::uint32_t> marks;
  std::uint32_t epoch = 0;

  void reset(std::size_t n) {
    if (marks.size() < n) marks.resize(n, 0);
    if (++epoch == 0) {
      std::fill(marks.begin(), marks.end(), 0);
      epoch = 1;
    }
  }
  bool visit(std::uint32_t slot) {
    if (marks[slot] == epoch) return false;
    marks[slot] = epoch;
    return true;
  }
};

thread_local VisitMarks tls_marks;

struct FartherFirst {
  template <class C>
  bool operator()(const C& a, const C& b) const {
    return a.dist < b.dist;
  }
};
struct NearerFirst {
  template <class C>
  bool operator()(const C& a, const C& b) const {
    return a.dist > b.dist;
  }
};

std::vector<KnnHit> top_k(std::vector<KnnHit> hits, std::size_t k) {
  const auto n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_order);
  hits.resize(n);
  return hits;
}

}  // namespace

VectorIndex::VectorIndex(std::size_t dimension, std::string embedder_tag, AnnParams params, std::uint64_t seed)
    : dim_(dimension),
      tag_(std::move(embedder_tag)),
      params_(params),
      rng_state_(seed),
      level_mult_(1.0 / std::log(static_cast<double>(params.max_neighbors_per_node))) {
  if (dim_ == 0) throw Error(ErrorCode::config, "vector dimension must be positive");
  params_.validate();
}

double VectorIndex::distance(const double* a, const double* b) const {
  double dot = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) dot += a[i] * b[i];
  return 1.0 - dot;
}

void VectorIndex::check_query(std::span<const double> q) const {
  if (q.size() != dim_)
    throw Error(ErrorCode::dimension_mismatch,
                "query dimension " + std::to_string(q.size()) + " != index dimension " + std::to_string(dim_));
  if (slot_of_.empty()) throw Error(ErrorCode::empty_index, "vector index is empty");
}

int VectorIndex::random_level() {
  const double u = 1.0 - splitmix_uniform(rng_state_);  // (0, 1]
  return static_cast<int>(-std::log(u) * level_mult_);
}

void VectorIndex::insert(const Embedding& e) {
  if (e.embedder_tag != tag_)
    throw Error(ErrorCode::embedder_mismatch, "embedding tagged '" + e.embedder_tag + "' cannot join index of '" + tag_ + "'");
  insert(e.id, e.vector);
}

void VectorIndex::insert(const ParticleId& id, std::span<const double> vector) {
  if (vector.size() != dim_)
    throw Error(ErrorCode::dimension_mismatch,
                "vector dimension " + std::to_string(vector.size()) + " != index dimension " + std::to_string(dim_));
  if (contains(id)) throw Error(ErrorCode::duplicate_id, "vector for " + id.str() + " already indexed");
  const Vector unit = normalized(vector);

  const auto slot = static_cast<std::uint32_t>(nodes_.size());
  Node node;
  node.id = id;
  node.level = random_level();
  node.links.resize(static_cast<std::size_t>(node.level) + 1);
  nodes_.push_back(std::move(node));
  vectors_.insert(vectors_.end(), unit.begin(), unit.end());
  slot_of_.emplace(id, slot);
  link_new_node(slot);
}

std::uint32_t VectorIndex::greedy_descend(const double* q, std::uint32_t entry, int from_level, int to_level) const {
  std::uint32_t cur = entry;
  double cur_dist = distance(q, data(cur));
  for (int level = from_level; level > to_level; --level) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto next : nodes_[cur].links[static_cast<std::size_t>(level)]) {
        const double d = distance(q, data(next));
        if (d < cur_dist) {
          cur_dist = d;
          cur = next;
          changed = true;
        }
      }
    }
  }
  return cur;
}

std::vector<VectorIndex::Candidate> VectorIndex::search_layer(const double* q, std::uint32_t entry, std::size_t ef,
                                                              int level,
                                                              const std::function<bool(std::uint32_t)>& accept) const {
  auto& marks = tls_marks;
  marks.reset(nodes_.size());
  std::priority_queue<Candidate, std::vector<Candidate>, NearerFirst> frontier;
  std::priority_queue<Candidate, std::vector<Candidate>, FartherFirst> results;

  const double d0 = distance(q, data(entry));
  marks.visit(entry);
  frontier.push({d0, entry});
  if (accept(entry)) results.push({d0, entry});
  double bound = results.empty() ? std::numeric_limits<double>::infinity() : d0;

  while (!frontier.empty()) {
    const auto current = frontier.top();
    if (current.dist > bound && results.size() >= ef) break;
    frontier.pop();
    for (auto next : nodes_[current.slot].links[static_cast<std::size_t>(level)]) {
      if (!marks.visit(next)) continue;
      const double d = distance(q, data(next));
      if (results.size() < ef || d < bound) {
        frontier.push({d, next});
        if (accept(next)) {
          results.push({d, next});
          if (results.size() > ef) results.pop();
          bound = results.top().dist;
        }
      }
    }
  }

  std::vector<Candidate> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::uint32_t> VectorIndex::select_neighbors(std::vector<Candidate> candidates, std::size_t m) const {
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.dist < b.dist || (a.dist == b.dist && a.slot < b.slot); });
  std::vector<std::uint32_t> selected;
  selected.reserve(m);
  for (const auto& c : candidates) {
    if (selected.size() >= m) break;
    bool diverse = true;
    for (auto s : selected) {
      if (distance(data(c.slot), data(s)) < c.dist) {
        diverse = false;
        break;
      }
    }
    if (diverse) selected.push_back(c.slot);
  }
  return selected;
}

void VectorIndex::link_new_node(std::uint32_t slot) {
  const int level = nodes_[slot].level;
  if (max_level_ < 0) {
    entry_ = slot;
    max_level_ = level;
    return;
  }
  const double* q = data(slot);
  std::uint32_t cur = greedy_descend(q, entry_, max_level_, level);
  auto live = [this](std::uint32_t s) { return !nodes_[s].deleted; };

  for (int l = std::min(level, max_level_); l >= 0; --l) {
    auto found = search_layer(q, cur, params_.ef_construction, l, live);
    if (found.empty()) continue;
    auto neighbors = select_neighbors(found, max_links(l));
    nodes_[slot].links[static_cast<std::size_t>(l)] = neighbors;

    const std::size_t cap = max_links(l);
    for (auto n : neighbors) {
      auto& back = nodes_[n].links[static_cast<std::size_t>(l)];
      if (std::find(back.begin(), back.end(), slot) != back.end()) continue;
      if (back.size() < cap) {
        back.push_back(slot);
        continue;
      }
      std::vector<Candidate> pool;
      pool.reserve(back.size() + 1);
      const double* base = data(n);
      pool.push_back({distance(base, q), slot});
      for (auto existing : back) pool.push_back({distance(base, data(existing)), existing});
      back = select_neighbors(std::move(pool), cap);
    }
    cur = found.front().slot;
  }
  if (level > max_level_) {
    max_level_ = level;
    entry_ = slot;
  }
}

void VectorIndex::remove(const ParticleId& id) {
  auto it = slot_of_.find(id);
  if (it == slot_of_.end()) throw Error(ErrorCode::not_found, "vector for " + id.str() + " not indexed");
  nodes_[it->second].deleted = true;
  slot_of_.erase(it);
  ++deleted_count_;
  // Deleted nodes keep routing searches until they dominate the graph.
  if (deleted_count_ > 64 && deleted_count_ * 2 > nodes_.size()) rebuild_graph();
}

void VectorIndex::rebuild_graph() {
  std::vector<Node> old_nodes = std::move(nodes_);
  std::vector<double> old_vectors = std::move(vectors_);
  nodes_.clear();
  vectors_.clear();
  slot_of_.clear();
  deleted_count_ = 0;
  max_level_ = -1;
  entry_ = 0;
  for (std::size_t s = 0; s < old_nodes.size(); ++s) {
    if (old_nodes[s].deleted) continue;
    const auto slot = static_cast<std::uint32_t>(nodes_.size());
    Node node;
    node.id = old_nodes[s].id;
    node.level = old_nodes[s].level;
    node.links.resize(static_cast<std::size_t>(node.level) + 1);
    nodes_.push_back(std::move(node));
    const auto* v = old_vectors.data() + s * dim_;
    vectors_.insert(vectors_.end(), v, v + dim_);
    slot_of_.emplace(nodes_.back().id, slot);
    link_new_node(slot);
  }
}

std::span<const double> VectorIndex::vector(const ParticleId& id) const {
  auto it = slot_of_.find(id);
  if (it == slot_of_.end()) throw Error(ErrorCode::not_found, "vector for " + id.str() + " not indexed");
  return {data(it->second), dim_};
}

std::vector<ParticleId> VectorIndex::ids() const {
  std::vector<ParticleId> out;
  out.reserve(slot_of_.size());
  for (const auto& [id, slot] : slot_of_) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<KnnHit> VectorIndex::knn_exact(std::span<const double> q, std::size_t k) const {
  check_query(q);
  if (k == 0) throw Error(ErrorCode::validation, "k must be positive");
  std::vector<KnnHit> hits;
  hits.reserve(slot_of_.size());
  for (std::uint32_t s = 0; s < nodes_.size(); ++s) {
    if (nodes_[s].deleted) continue;
    hits.push_back({nodes_[s].id, cosine(q, {data(s), dim_})});
  }
  return top_k(std::move(hits), k);
}

std::vector<KnnHit> VectorIndex::knn_exact_among(std::span<const double> q, std::size_t k,
                                                 std::span<const ParticleId> candidates) const {
  check_query(q);
  if (k == 0) throw Error(ErrorCode::validation, "k must be positive");
  std::vector<KnnHit> hits;
  hits.reserve(candidates.size());
  for (const auto& id : candidates) {
    auto it = slot_of_.find(id);
    if (it == slot_of_.end()) continue;
    hits.push_back({id, cosine(q, {data(it->second), dim_})});
  }
  return top_k(std::move(hits), k);
}

std::vector<KnnHit> VectorIndex::knn_ann(std::span<const double> q, std::size_t k) const {
  return knn_ann(q, k, params_);
}

std::vector<KnnHit> VectorIndex::knn_ann(std::span<const double> q, std::size_t k, const AnnParams& params,
                                         const IdFilter& filter) const {
  check_query(q);
  if (k == 0) throw Error(ErrorCode::validation, "k must be positive");
  const Vector unit = normalized(q);
  const double* qp = unit.data();
  const std::uint32_t start = greedy_descend(qp, entry_, max_level_, 0);
  auto accept = [&](std::uint32_t s) { return !nodes_[s].deleted && (!filter || filter(nodes_[s].id)); };
  const auto found = search_layer(qp, start, std::max(params.ef_search, k), 0, accept);

  std::vector<KnnHit> hits;
  hits.reserve(found.size());
  for (const auto& c : found) hits.push_back({nodes_[c.slot].id, cosine(q, {data(c.slot), dim_})});
  return top_k(std::move(hits), k);
}

void VectorIndex::save_sidecar(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write sidecar " + path.string());
  for (const auto& id : ids()) {
    out.write(id.view().data(), ParticleId::kLength);
    for (double x : vector(id)) {
      const auto f = static_cast<float>(x);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      char le[4];
      for (int i = 0; i < 4; ++i) le[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
      out.write(le, 4);
    }
  }
  if (!out) throw Error(ErrorCode::io, "sidecar write failed");
}

std::size_t VectorIndex::load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open sidecar " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::size_t record = ParticleId::kLength + 4 * dim_;
  if (bytes.size() % record != 0) throw Error(ErrorCode::validation, "sidecar size is not a whole number of records");
  std::size_t loaded = 0;
  Vector v(dim_);
  for (std::size_t off = 0; off < bytes.size(); off += record) {
    const auto id = ParticleId::parse_or_throw(std::string_view(bytes).substr(off, ParticleId::kLength));
    for (std::size_t i = 0; i < dim_; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + ParticleId::kLength + 4 * i + b]))
                << (8 * b);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      v[i] = f;
    }
    if (contains(id)) continue;
    insert(id, v);
    ++loaded;
  }
  return loaded;
}

}  // namespace cweave
