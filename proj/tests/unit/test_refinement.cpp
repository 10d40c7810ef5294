#include <doctest.h>

#include <cmath>
#include <random>

#include "cweave/refinement.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cweave;
using namespace cweave::testing;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::validation;
}

std::shared_ptr<const Embedder> embedder() { return std::make_shared<DeterministicEmbedder>(64); }

MemoryLayers fresh_layers() { return MemoryLayers(embedder(), AnnParams{}, StrandWeights{}, 7); }

IdSeedSource counter_seeds() {
  auto n = std::make_shared<std::uint64_t>(1000);
  return [n] { return (*n)++; };
}

class FailingOracle final : public SemanticOracle {
 public:
  OracleTransformOutput transform(std::string_view, const SituationalImprint&) override {
    throw Error(ErrorCode::oracle_transport, "down");
  }
  SynthesisResult synthesize(const SynthesisRequest&) override { throw Error(ErrorCode::oracle_transport, "down"); }
  std::optional<RelationSuggestion> suggest_relation(const ParticleView&, const ParticleView&) override {
    throw Error(ErrorCode::oracle_transport, "down");
  }
  [[nodiscard]] std::string name() const override { return "failing"; }
};

std::vector<ParticleId> load_twelve(MemoryLayers& layers) {
  const auto f = twelve_particle_fixture();
  std::vector<ParticleId> ids;
  for (std::size_t i = 0; i < f.texts.size(); ++i) {
    auto p = make_particle(i + 1, f.texts[i], f.times[i], 0.5);
    layers.add_particle(p);
    ids.push_back(p.id);
  }
  return ids;
}

}  // namespace

TEST_CASE("affinity combines similarity, links and time") {
  ClusterConfig cfg;
  ClusterMember a{ParticleId::mint(kT0, 1), {1.0, 0.0}, kT0};
  ClusterMember b{ParticleId::mint(kT0, 2), {1.0, 0.0}, kT0};
  CHECK(cluster_affinity(a, b, true, cfg) == doctest::Approx(1.0));
  CHECK(cluster_affinity(a, b, false, cfg) == doctest::Approx(0.8));
  b.t_create = kT0 + 86'400'000;
  b.embedding = {0.0, 1.0};
  CHECK(cluster_affinity(a, b, false, cfg) == doctest::Approx(0.2 * std::exp(-1.0)));
}

TEST_CASE("clustering equals connected components of the affinity graph") {
  std::mt19937_64 rng(31);
  ClusterConfig cfg;
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 30; ++trial) {
    // A handful of tight groups plus noise so components of many sizes appear.
    std::vector<ClusterMember> members;
    std::vector<Vector> centers(4, Vector(8));
    for (auto& c : centers)
      for (auto& x : c) x = g(rng);
    for (int i = 0; i < 40; ++i) {
      Vector v = centers[static_cast<std::size_t>(i) % 4];
      for (auto& x : v) x += g(rng) * (0.2 + 0.1 * (trial % 5));
      members.push_back({ParticleId::mint(kT0, rng()), v, kT0 + static_cast<EpochMs>(rng() % 200'000'000)});
    }
    std::set<std::pair<ParticleId, ParticleId>> links;
    for (int l = 0; l < 10; ++l) links.insert({members[rng() % 40].id, members[rng() % 40].id});
    auto linked = [&](const ParticleId& a, const ParticleId& b) { return links.count({a, b}) || links.count({b, a}); };

    const auto got = identify_clusters(members, linked, cfg);
    const auto want = brute_clusters(members, links, cfg);
    CHECK(std::set<Cluster>(got.begin(), got.end()) == want);
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].front() < got[i].front());
  }
}

TEST_CASE("cluster quality gate") {
  ClusterConfig cfg;
  const std::vector<Vector> tight{{1, 0}, {1, 0.1}, {1, -0.1}};
  const auto verdict = cluster_quality(tight, cfg);
  CHECK(verdict.accept);
  CHECK(verdict.score > 0.95);
  const std::vector<Vector> loose{{1, 0}, {0, 1}, {-1, 0}};
  CHECK_FALSE(cluster_quality(loose, cfg).accept);
  const std::vector<Vector> pair{{1, 0}, {1, 0}};
  CHECK_FALSE(cluster_quality(pair, cfg).accept);  // below minimum size
}

TEST_CASE("aggregate objective at reference points") {
  DeterministicEmbedder e(64);
  const SynthesisResult r{"solar panels", {"solar"}, 0.9};
  const Vector v = e.embed("solar panels");
  const std::vector<Vector> same{v, v};
  CHECK(ia_objective(r, same, IAObjectiveWeights{}, e) == doctest::Approx(-1.0 + 0.01 * 12).epsilon(1e-12));

  const Vector other = e.embed("espresso machine");
  const std::vector<Vector> mixed{v, other};
  const double expected = -(0.75 * ref_cosine(v, v) + 0.25 * ref_cosine(v, other)) + 0.01 * 12;
  CHECK(ia_objective(r, mixed, IAObjectiveWeights{{3.0, 1.0}, 0.01}, e) == doctest::Approx(expected).epsilon(1e-12));

  // Characters, not bytes.
  const SynthesisResult accented{"caf\xC3\xA9", {"cafe"}, 0.9};
  const std::vector<Vector> one{e.embed("caf\xC3\xA9")};
  CHECK(ia_objective(accented, one, IAObjectiveWeights{{}, 0.5}, e) == doctest::Approx(-1.0 + 0.5 * 4));
}

TEST_CASE("decay at reference points") {
  const DecayParams p;
  CHECK(decay_importance(0.8, p, 0.0) == 0.8);
  CHECK(decay_importance(0.8, p, 86'400'000.0) == doctest::Approx(ref_decay(0.8, 8e-9, 0.05, 86'400'000.0)).epsilon(1e-12));
  CHECK(decay_importance(0.8, p, 86'400'000.0) == doctest::Approx(0.75 * std::exp(-0.6912) + 0.05).epsilon(1e-12));
  const double half_life = std::log(2.0) / p.lambda_decay;
  CHECK(decay_importance(1.0, DecayParams{8e-9, 0.0}, half_life) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(decay_importance(0.9, p, 1e15) == doctest::Approx(0.05));
  CHECK(code_of([&] { (void)decay_importance(0.5, p, -1.0); }) == ErrorCode::validation);
  CHECK(code_of([&] { (void)decay_importance(1.5, p, 1.0); }) == ErrorCode::out_of_range);
}

TEST_CASE("decay is monotone toward the baseline and stays in range") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> unit(0.0, 1.0), span(0.0, 1e10);
  const DecayParams p;
  for (int i = 0; i < 2000; ++i) {
    const double i0 = unit(rng);
    const double t1 = span(rng), t2 = t1 + span(rng);
    const double a = decay_importance(i0, p, t1), b = decay_importance(i0, p, t2);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    if (i0 >= p.i_base) {
      CHECK(b <= a);
      CHECK(b >= p.i_base - 1e-15);
    } else {
      CHECK(b >= a);
    }
  }
}

TEST_CASE("recalibration at reference points") {
  const RecalibrationCoeffs c;
  auto p = make_particle(1, "x", kT0, 0.5);
  p.metrics.f_access = 10;
  const std::vector<double> links{0.8, 0.6};
  CHECK(recalibrate_importance(p, links, c, 1) == doctest::Approx(0.41).epsilon(1e-12));
  CHECK(recalibrate_importance(p, {}, c, 0) == doctest::Approx(0.425 + 0.05).epsilon(1e-12));
  CHECK(recalibrate_importance(p, {}, c, 0, 0.2) == doctest::Approx(0.675).epsilon(1e-12));
  p.metrics.f_access = 500;  // capped
  p.metrics.importance = 1.0;
  const std::vector<double> full{1.0};
  CHECK(recalibrate_importance(p, full, c, 0) == doctest::Approx(1.0));
  CHECK(recalibrate_importance(p, full, c, 20) == 0.0);
}

TEST_CASE("recalibration is monotone in each signal") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const RecalibrationCoeffs c;
  for (int i = 0; i < 2000; ++i) {
    auto p = make_particle(1, "x", kT0, unit(rng));
    p.metrics.f_access = rng() % 40;
    std::vector<double> links{unit(rng), unit(rng)};
    const std::size_t flags = rng() % 3;
    const double base = recalibrate_importance(p, links, c, flags);
    auto more_access = p;
    more_access.metrics.f_access += 1 + rng() % 5;
    CHECK(recalibrate_importance(more_access, links, c, flags) >= base);
    auto more_importance = p;
    more_importance.metrics.importance = std::min(1.0, p.metrics.importance + unit(rng) * 0.2);
    CHECK(recalibrate_importance(more_importance, links, c, flags) >= base);
    CHECK(recalibrate_importance(p, links, c, flags + 1) <= base);
  }
}

TEST_CASE("prune removes only unprotected particles below the floor") {
  MemoryLayers layers = fresh_layers();
  const DecayParams no_base{8e-9, 0.0};
  auto weak = make_particle(1, "weak signal", kT0, 0.01);
  auto strong = make_particle(2, "strong signal", kT0, 0.5);
  auto weak_member = make_particle(3, "weak member", kT0, 0.01);
  auto weak_ia = make_particle(4, "weak aggregate", kT0, 0.01, ParticleKind::IA);
  for (const auto& p : {weak, strong, weak_member, weak_ia}) layers.add_particle(p);
  layers.add_strand(weak_member.id, weak_ia.id, StrandType::derivedFrom, {}, kT0);

  const auto pruned = prune(layers, 0.02, no_base, kT0);
  CHECK(pruned == std::vector<ParticleId>{weak.id});
  CHECK(layers.store.size() == 3);

  // Decay alone eventually drops the strong particle below the floor.
  const auto later = prune(layers, 0.02, no_base, kT0 + 1'000'000'000'000);
  CHECK(later == std::vector<ParticleId>{strong.id});
  CHECK(code_of([&] { prune(layers, 1.5, no_base, kT0); }) == ErrorCode::out_of_range);
}

TEST_CASE("one cycle over the twelve-particle fixture builds three aggregates") {
  MemoryLayers layers = fresh_layers();
  const auto ids = load_twelve(layers);
  const auto fixture = twelve_particle_fixture();
  MockOracle oracle(layers.embedder_ptr());
  RefinementConfig cfg;
  const EpochMs now = kT0 + 3'600'000;

  const auto report = refinement_cycle(layers, oracle, cfg, now, counter_seeds());
  CHECK(report.errors.empty());
  CHECK(report.clusters_considered == 3);
  CHECK(report.clusters_accepted == 3);
  REQUIRE(report.ias_created.size() == 3);
  CHECK(report.ia_objectives.size() == 3);

  std::size_t derived = 0;
  for (const auto& [sid, s] : layers.graph.strands()) derived += s.type == StrandType::derivedFrom;
  CHECK(derived == 9);

  std::set<std::vector<ParticleId>> provenance;
  for (const auto& ia : report.ias_created) {
    const auto& p = layers.store.get(ia);
    CHECK(p.is_aggregate());
    provenance.insert(layers.graph.provenance(ia));
    std::size_t total = 0;
    for (const auto& id : layers.graph.provenance(ia)) total += layers.store.get(id).core_data.size();
    CHECK(p.core_data.size() < total);
  }
  std::set<std::vector<ParticleId>> expected;
  for (const auto& group : fixture.groups) {
    std::vector<ParticleId> g;
    for (auto i : group) g.push_back(ids[i]);
    std::sort(g.begin(), g.end());
    expected.insert(g);
  }
  CHECK(provenance == expected);

  const auto second = refinement_cycle(layers, oracle, cfg, now, counter_seeds());
  CHECK(second.ias_created.empty());
  CHECK(second.clusters_skipped_covered == 3);
  CHECK(second.importances_changed == 0);
}

TEST_CASE("aggregate importance is the constituent mean plus the bonus") {
  MemoryLayers layers = fresh_layers();
  const auto f = twelve_particle_fixture();
  std::vector<ParticleId> cluster;
  const double importances[] = {0.2, 0.4, 0.6};
  for (std::size_t i = 0; i < 3; ++i) {
    auto p = make_particle(i + 1, f.texts[i], f.times[i], importances[i]);
    layers.add_particle(p);
    cluster.push_back(p.id);
  }
  std::sort(cluster.begin(), cluster.end());
  MockOracle oracle(layers.embedder_ptr());
  double objective = 0.0;
  const auto ia = synthesize_ia(layers, cluster, oracle, RefinementConfig{}, kT0 + 10, 5, &objective);
  CHECK(ia.metrics.importance == doctest::Approx(0.5));
  CHECK(ia.imprint.source == "refinement");
  CHECK(objective < 0.0 + 0.01 * static_cast<double>(utf8_length(ia.core_data)));
  CHECK(layers.graph.provenance(ia.id) == cluster);
}

TEST_CASE("a cycle over an empty store reports nothing") {
  MemoryLayers layers = fresh_layers();
  MockOracle oracle(layers.embedder_ptr());
  const auto r = refinement_cycle(layers, oracle, RefinementConfig{}, kT0, counter_seeds());
  CHECK(r.clusters_considered == 0);
  CHECK(r.clusters_accepted == 0);
  CHECK(r.ias_created.empty());
  CHECK(r.strands_added == 0);
  CHECK(r.importances_changed == 0);
  CHECK(r.particles_pruned.empty());
  CHECK(r.errors.empty());
}

TEST_CASE("oracle failure leaves no partial aggregate behind") {
  MemoryLayers layers = fresh_layers();
  load_twelve(layers);
  FailingOracle oracle;
  const auto strands_before = layers.graph.strand_count();
  const auto size_before = layers.store.size();

  const auto report = refinement_cycle(layers, oracle, RefinementConfig{}, kT0 + 3'600'000, counter_seeds());
  CHECK(report.ias_created.empty());
  CHECK(report.errors.size() >= 3);
  CHECK(layers.store.size() == size_before);
  CHECK(layers.graph.strand_count() == strands_before);
  CHECK(layers.vectors.size() == size_before);

  Cluster first;
  for (const auto& [id, p] : layers.store.particles()) {
    first.push_back(id);
    if (first.size() == 3) break;
  }
  CHECK(code_of([&] { synthesize_ia(layers, first, oracle, RefinementConfig{}, kT0, 1); }) ==
        ErrorCode::oracle_transport);
  CHECK(layers.store.size() == size_before);
}

TEST_CASE("an aggregate whose provenance cannot be stored is rolled back") {
  MemoryLayers layers = fresh_layers();
  const auto ids = load_twelve(layers);
  MockOracle oracle(layers.embedder_ptr());
  std::vector<const InsightParticle*> members;
  std::vector<Vector> vectors;
  for (std::size_t i = 0; i < 3; ++i) {
    members.push_back(&layers.store.get(ids[i]));
    const auto v = layers.vectors.vector(ids[i]);
    vectors.emplace_back(v.begin(), v.end());
  }
  auto ia = prepare_ia(members, vectors, oracle, layers.embedder(), RefinementConfig{}, kT0 + 5, 77);
  ia.provenance.emplace_back(ParticleId::mint(kT0, 424242), StrandEvidence{});
  CHECK_THROWS_AS(commit_ia(layers, ia, kT0 + 5), Error);
  CHECK_FALSE(layers.store.contains(ia.particle.id));
  CHECK_FALSE(layers.vectors.contains(ia.particle.id));
  CHECK_FALSE(layers.temporal.contains(ia.particle.id));
  CHECK(layers.graph.strand_count() == 0);
}

TEST_CASE("report JSON carries every field") {
  RefinementReport r;
  r.ias_created.push_back(ParticleId::mint(kT0, 1));
  r.errors.push_back("x");
  const auto j = to_json(r);
  for (const char* key : {"clusters_considered", "clusters_accepted", "clusters_skipped_covered", "ias_created",
                          "strands_added", "importances_changed", "particles_pruned", "wall_time_ms", "ia_objectives",
                          "errors"})
    CHECK(j.contains(key));
  CHECK(j.at("ias_created").size() == 1);
}

TEST_CASE("configuration validation") {
  CHECK(code_of([] { ClusterConfig{0.6, 0.5, 0.2, 0.2}.validate(); }) == ErrorCode::config);
  CHECK(code_of([] { RecalibrationCoeffs{0.9, 0.2, 0.05}.validate(); }) == ErrorCode::config);
  CHECK(code_of([] { DecayParams{0.0, 0.05}.validate(); }) == ErrorCode::config);
  CHECK(code_of([] { RefinementTriggers{0, 1, 0.5}.validate(); }) == ErrorCode::config);
  CHECK_NOTHROW(RefinementConfig{}.validate());
}
