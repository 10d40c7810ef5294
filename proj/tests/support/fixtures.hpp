#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cweave/engine.hpp"

namespace cweave::testing {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline constexpr EpochMs kT0 = 1'700'000'000'000;

/// In-memory engine config with fsync off.
EngineConfig memory_config(std::uint64_t seed = 42);
EngineConfig disk_config(const std::filesystem::path& dir, std::uint64_t seed = 42);

SituationalImprint imprint(std::string source = "test", std::optional<std::string> user_tag = std::nullopt);

InsightParticle make_particle(std::uint64_t seed, std::string text, EpochMs t, double importance = 0.5,
                              ParticleKind kind = ParticleKind::IP);

struct TwelveFixture {
  std::vector<std::string> texts;
  std::vector<EpochMs> times;
  std::vector<std::vector<std::size_t>> groups;  // indices of the three near-duplicate groups
};

/// Three groups of three near-identical texts plus three unrelated texts.
TwelveFixture twelve_particle_fixture();

/// A random sentence from a small fixed vocabulary.
std::string random_sentence(std::mt19937_64& rng, std::size_t min_tokens = 4, std::size_t max_tokens = 12);

struct RandomCorpusOptions {
  std::size_t n = 200;
  double link_probability = 0.02;  // per particle, strands to random earlier particles
  bool randomize_importance = true;
  bool events = true;
  bool user_tags = true;
};

/// Ingests a random corpus spread over ~30 days and adds random strands.
/// Returns the ingested ids in order.
std::vector<ParticleId> populate_random_corpus(Engine& engine, std::mt19937_64& rng, const RandomCorpusOptions& opt);

/// Random query spec over the corpus time range.
QuerySpec random_query(std::mt19937_64& rng, bool force_text = false);

}  // namespace cweave::testing
