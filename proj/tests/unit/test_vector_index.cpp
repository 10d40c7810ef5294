#include <doctest.h>

#include <random>

#include "cweave/vector_index.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cweave;
using namespace cweave::testing;

namespace {

Vector random_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> g;
  Vector v(d);
  for (auto& x : v) x = g(rng);
  return v;
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::validation;
}

void check_matches_brute(const std::vector<KnnHit>& got, const std::vector<RefHit>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].id == want[i].id);
    CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("deterministic embedder returns unit vectors that depend only on the text") {
  DeterministicEmbedder e(32);
  const auto a = e.embed("Coffee beans roasted");
  CHECK(a.size() == 32);
  CHECK(ref_dot(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.embed("coffee, BEANS roasted!") == a);
  CHECK(e.embed("tea leaves") != a);
  CHECK(e.tag() == "mock-fnv1a-splitmix-d32");
  CHECK(code_of([&] { (void)e.embed(" ... "); }) == ErrorCode::empty_input);
}

TEST_CASE("cosine handles scaling and rejects zero or mismatched vectors") {
  const Vector a{1, 2, 3};
  const Vector b{2, 4, 6};
  CHECK(cosine(a, b) == doctest::Approx(1.0));
  CHECK(cosine(a, Vector{-1, -2, -3}) == doctest::Approx(-1.0));
  CHECK(code_of([&] { (void)cosine(a, Vector{0, 0, 0}); }) == ErrorCode::zero_vector);
  CHECK(code_of([&] { (void)cosine(a, Vector{1, 2}); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("exact k-NN equals a brute-force scan") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 16;
    VectorIndex index(d, "t");
    std::map<ParticleId, Vector> vectors;
    const std::size_t n = 50 + trial * 20;
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = ParticleId::mint(kT0 + static_cast<EpochMs>(i), rng());
      vectors[id] = random_vector(rng, d);
      index.insert(id, vectors[id]);
    }
    const auto q = random_vector(rng, d);
    for (std::size_t k : {1u, 5u, 10u, 1000u}) check_matches_brute(index.knn_exact(q, k), brute_knn(vectors, q, k));

    // Removing members keeps exact search in step with the reference.
    for (int r = 0; r < 5; ++r) {
      const auto victim = vectors.begin()->first;
      index.remove(victim);
      vectors.erase(victim);
    }
    check_matches_brute(index.knn_exact(q, 10), brute_knn(vectors, q, 10));
  }
}

TEST_CASE("exact search among candidates ignores unknown ids") {
  std::mt19937_64 rng(8);
  VectorIndex index(8, "t");
  std::map<ParticleId, Vector> subset;
  std::vector<ParticleId> candidates;
  for (int i = 0; i < 40; ++i) {
    const auto id = ParticleId::mint(kT0, rng());
    const auto v = random_vector(rng, 8);
    index.insert(id, v);
    if (i % 3 == 0) {
      subset[id] = v;
      candidates.push_back(id);
    }
  }
  candidates.push_back(ParticleId::mint(kT0, 123456));
  const auto q = random_vector(rng, 8);
  check_matches_brute(index.knn_exact_among(q, 5, candidates), brute_knn(subset, q, 5));
}

TEST_CASE("index error paths") {
  VectorIndex index(4, "tag-a");
  const Vector q{1, 0, 0, 0};
  CHECK(code_of([&] { (void)index.knn_exact(q, 3); }) == ErrorCode::empty_index);
  const auto id = ParticleId::mint(kT0, 1);
  index.insert(id, q);
  CHECK(code_of([&] { index.insert(id, q); }) == ErrorCode::duplicate_id);
  CHECK(code_of([&] { index.insert(ParticleId::mint(kT0, 2), Vector{1, 0}); }) == ErrorCode::dimension_mismatch);
  CHECK(code_of([&] { index.insert(ParticleId::mint(kT0, 3), Vector{0, 0, 0, 0}); }) == ErrorCode::zero_vector);
  CHECK(code_of([&] { index.insert(Embedding{ParticleId::mint(kT0, 4), q, "tag-b"}); }) ==
        ErrorCode::embedder_mismatch);
  CHECK(code_of([&] { (void)index.knn_exact(q, 0); }) == ErrorCode::validation);
  CHECK(code_of([&] { (void)index.knn_exact(Vector{1, 0}, 1); }) == ErrorCode::dimension_mismatch);
  CHECK(code_of([&] { index.remove(ParticleId::mint(kT0, 9)); }) == ErrorCode::not_found);
  CHECK(code_of([] { AnnParams{1, 10, 10}.validate(); }) == ErrorCode::config);
}

TEST_CASE("approximate search reaches high recall on a small corpus") {
  std::mt19937_64 rng(9);
  const std::size_t d = 32;
  VectorIndex index(d, "t", AnnParams{}, 11);
  for (int i = 0; i < 3000; ++i) index.insert(ParticleId::mint(kT0 + i, rng()), random_vector(rng, d));
  double total = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto q = random_vector(rng, d);
    const auto exact = index.knn_exact(q, 10);
    const auto approx = index.knn_ann(q, 10);
    total += recall_at_k(exact, approx);
  }
  CHECK(total / 50 >= 0.9);
}

TEST_CASE("approximate search honours an id filter and deletions") {
  std::mt19937_64 rng(10);
  VectorIndex index(8, "t");
  std::vector<ParticleId> ids;
  for (int i = 0; i < 500; ++i) {
    ids.push_back(ParticleId::mint(kT0 + i, rng()));
    index.insert(ids.back(), random_vector(rng, 8));
  }
  for (int i = 0; i < 200; ++i) index.remove(ids[static_cast<std::size_t>(i)]);
  const std::set<ParticleId> removed(ids.begin(), ids.begin() + 200);
  const auto q = random_vector(rng, 8);
  for (const auto& h : index.knn_ann(q, 20, index.params(), [](const ParticleId& id) { return id.str().back() < 'M'; })) {
    CHECK_FALSE(removed.count(h.id));
    CHECK(h.id.str().back() < 'M');
  }
  CHECK(index.size() == 300);
}

TEST_CASE("recall_at_k counts shared ids") {
  const auto a = ParticleId::mint(1, 1), b = ParticleId::mint(1, 2), c = ParticleId::mint(1, 3);
  const std::vector<KnnHit> exact{{a, 0.9}, {b, 0.8}};
  const std::vector<KnnHit> approx{{a, 0.9}, {c, 0.7}};
  CHECK(recall_at_k(exact, approx) == doctest::Approx(0.5));
}

TEST_CASE("sidecar round-trips ids and float32 vectors") {
  TempDir dir;
  std::mt19937_64 rng(12);
  VectorIndex index(6, "t");
  for (int i = 0; i < 20; ++i) index.insert(ParticleId::mint(kT0, rng()), random_vector(rng, 6));
  index.save_sidecar(dir.path() / "v.bin");
  CHECK(std::filesystem::file_size(dir.path() / "v.bin") == 20 * (26 + 4 * 6));

  VectorIndex loaded(6, "t");
  CHECK(loaded.load_sidecar(dir.path() / "v.bin") == 20);
  CHECK(loaded.ids() == index.ids());
  for (const auto& id : index.ids()) {
    const auto a = index.vector(id);
    const auto b = loaded.vector(id);
    for (std::size_t i = 0; i < 6; ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));
  }
  CHECK(loaded.load_sidecar(dir.path() / "v.bin") == 0);
}
