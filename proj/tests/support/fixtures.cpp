#include "fixtures.hpp"

#include <atomic>
#include <cstdlib>

#include <unistd.h>

namespace cweave::testing {

namespace {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words{
      "river",   "mountain", "harbor",  "engine",   "signal",  "garden",  "lantern", "copper",  "meadow",
      "falcon",  "quartz",   "willow",  "canyon",   "beacon",  "orchard", "glacier", "thunder", "velvet",
      "compass", "anchor",   "pepper",  "saddle",   "marble",  "tunnel",  "violet",  "summit",  "ember",
      "harvest", "lattice",  "nimbus",  "pylon",    "quiver",  "raven",   "solstice", "timber", "umber",
      "vertex",  "wharf",    "yarrow",  "zephyr",   "basalt",  "cobalt",  "delta",   "estuary", "fjord",
      "granite", "heron",    "island",  "juniper",  "kestrel", "lagoon",  "mosaic",  "nectar",  "obsidian",
      "prairie", "quarry",   "reef",    "sequoia",  "tundra",  "upland"};
  return words;
}

}  // namespace

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    auto candidate = base / ("cweave-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    if (std::filesystem::create_directory(candidate)) {
      path_ = candidate;
      break;
    }
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

EngineConfig memory_config(std::uint64_t seed) {
  EngineConfig c;
  c.seed = seed;
  c.fsync = false;
  return c;
}

EngineConfig disk_config(const std::filesystem::path& dir, std::uint64_t seed) {
  EngineConfig c = memory_config(seed);
  c.data_dir = dir;
  return c;
}

SituationalImprint imprint(std::string source, std::optional<std::string> user_tag) {
  SituationalImprint s;
  s.source = std::move(source);
  s.user_tag = std::move(user_tag);
  return s;
}

InsightParticle make_particle(std::uint64_t seed, std::string text, EpochMs t, double importance, ParticleKind kind) {
  InsightParticle p;
  p.id = ParticleId::mint(t, seed);
  p.core_data = std::move(text);
  for (auto& token : tokenize(p.core_data)) p.resonance_keys.insert(token);
  if (p.resonance_keys.empty()) p.resonance_keys.insert("empty");
  p.signifiers = {Signifier::assertion};
  p.imprint.source = "test";
  p.temporal = TemporalMetadata{t, t, t, std::nullopt, std::nullopt};
  p.metrics = AccessMetrics{0, importance, t};
  p.kind = kind;
  return p;
}

TwelveFixture twelve_particle_fixture() {
  TwelveFixture f;
  f.texts = {
      "solar panel efficiency drops sharply during winter months in northern regions",
      "solar panel efficiency drops sharply during winter weeks in northern regions",
      "solar panel efficiency drops sharply during cold months in northern regions",
      "the espresso machine in the third floor kitchen leaks water onto the counter",
      "the espresso machine in the third floor kitchen leaks steam onto the counter",
      "the espresso machine in the second floor kitchen leaks water onto the counter",
      "quarterly revenue forecast revised upward after strong subscription renewals",
      "quarterly revenue forecast revised upward after strong subscription signups",
      "quarterly revenue forecast revised upward after record subscription renewals",
      "migratory birds navigate using magnetic field lines",
      "ancient pottery shards recovered near the riverbank excavation",
      "compiler optimizations reorder memory accesses aggressively",
  };
  for (std::size_t i = 0; i < f.texts.size(); ++i) f.times.push_back(kT0 + static_cast<EpochMs>(i) * 60'000);
  f.groups = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  return f;
}

std::string random_sentence(std::mt19937_64& rng, std::size_t min_tokens, std::size_t max_tokens) {
  const auto& words = vocabulary();
  std::uniform_int_distribution<std::size_t> count(min_tokens, max_tokens);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  const auto n = count(rng);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[pick(rng)];
  return s;
}

std::vector<ParticleId> populate_random_corpus(Engine& engine, std::mt19937_64& rng, const RandomCorpusOptions& opt) {
  std::uniform_int_distribution<EpochMs> when(0, 30LL * 86'400'000);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  static const std::vector<StrandType> types{StrandType::supports, StrandType::contradicts, StrandType::elaborates,
                                             StrandType::causes,   StrandType::precedes,    StrandType::relatedTo};
  std::vector<ParticleId> ids;
  for (std::size_t i = 0; i < opt.n; ++i) {
    const EpochMs t = kT0 + when(rng);
    std::optional<std::string> tag;
    if (opt.user_tags) {
      const double r = unit(rng);
      if (r < 0.3) tag = "alice";
      else if (r < 0.5) tag = "bob";
    }
    std::optional<EventWindow> event;
    if (opt.events && unit(rng) < 0.5) {
      const EpochMs start = kT0 + when(rng);
      event = EventWindow{start, start + static_cast<EpochMs>(unit(rng) * 5 * 86'400'000)};
    }
    const auto id = engine.ingest(random_sentence(rng), imprint("test", tag), t, event);
    ids.push_back(id);
    if (opt.randomize_importance) {
      auto& layers = engine.layers_unsafe();
      InsightParticle p = layers.store.get(id);
      p.metrics.importance = unit(rng);
      layers.update_particle(p);
    }
    for (int r = 0; r < 2 && i > 0; ++r) {
      if (unit(rng) >= opt.link_probability / 2) continue;
      std::uniform_int_distribution<std::size_t> earlier(0, i - 1);
      const auto other = ids[earlier(rng)];
      const auto type = types[std::uniform_int_distribution<std::size_t>(0, types.size() - 1)(rng)];
      engine.link(id, other, type, unit(rng), t);
    }
  }
  return ids;
}

QuerySpec random_query(std::mt19937_64& rng, bool force_text) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  QuerySpec q;
  const bool text = force_text || unit(rng) < 0.7;
  const bool window = !text || unit(rng) < 0.5;
  if (text) q.text = random_sentence(rng, 2, 6);
  if (window) {
    static const std::vector<TemporalField> fields(kAllTemporalFields.begin(), kAllTemporalFields.end());
    TimeWindow w;
    w.field = fields[std::uniform_int_distribution<std::size_t>(0, fields.size() - 1)(rng)];
    w.lo = kT0 + static_cast<EpochMs>(unit(rng) * 30 * 86'400'000);
    w.hi = w.lo + static_cast<EpochMs>(unit(rng) * 10 * 86'400'000);
    q.time_window = w;
  }
  q.k = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
  if (unit(rng) < 0.4) {
    GraphExpand g;
    g.max_depth = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    if (unit(rng) < 0.2) g.type_filter = StrandType::supports;
    g.min_strength = unit(rng) * 0.5;
    q.graph_expand = g;
  }
  if (unit(rng) < 0.2) q.min_importance = unit(rng) * 0.6;
  if (unit(rng) < 0.2) q.user_tag = unit(rng) < 0.5 ? "alice" : "bob";
  q.use_ann = false;
  return q;
}

}  // namespace cweave::testing
