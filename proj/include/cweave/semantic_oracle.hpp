#pragma once

// Semantic oracle port: turns raw text into particle fields, condenses
// clusters into aggregates, and proposes relations. The mock is fully
// deterministic and is what the engine tests run against; the remote client
// speaks a small JSON envelope to an HTTP backend.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cweave/core_model.hpp"
#include "cweave/vector_index.hpp"

namespace cweave {

struct OracleTransformOutput {
  std::set<std::string> resonance_keys;
  std::set<Signifier> signifiers;
  std::map<std::string, std::string> imprint_enrichment;
  std::string core_data;
};

struct TemporalSummary {
  EpochMs t_create = 0;
  std::optional<EpochMs> t_event_start;
  std::optional<EpochMs> t_event_end;
};

struct Constituent {
  ParticleId id;
  std::string core_data;
  std::set<std::string> resonance_keys;
  TemporalSummary temporal;
};

struct SynthesisRequest {
  std::vector<Constituent> constituents;
  std::map<std::string, std::string> prompt_params;
};

struct SynthesisResult {
  std::string ia_core_data;
  std::set<std::string> ia_resonance_keys;
  double confidence = 0.0;
};

struct RelationSuggestion {
  StrandType type = StrandType::relatedTo;
  double confidence = 0.0;
  std::string rationale;
};

/// What the oracle may see of a particle. The embedding is optional; the mock
/// embeds core_data itself when it is absent.
struct ParticleView {
  ParticleId id;
  std::string core_data;
  std::set<std::string> resonance_keys;
  std::optional<Vector> embedding;
};

class SemanticOracle {
 public:
  virtual ~SemanticOracle() = default;
  virtual OracleTransformOutput transform(std::string_view raw, const SituationalImprint& imprint) = 0;
  virtual SynthesisResult synthesize(const SynthesisRequest& request) = 0;
  virtual std::optional<RelationSuggestion> suggest_relation(const ParticleView& a, const ParticleView& b) = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

/// The fixed 50-word stopword list used for resonance-key extraction.
const std::set<std::string, std::less<>>& mock_stopwords();
/// First tokens that mark a raw input as a directive.
const std::set<std::string, std::less<>>& mock_imperative_verbs();

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);
/// Cuts to at most max_bytes without splitting a UTF-8 sequence.
std::string truncate_utf8(std::string_view text, std::size_t max_bytes);
std::size_t utf8_length(std::string_view text) noexcept;

struct MockOracleConfig {
  std::size_t max_core_chars = 4096;
  std::size_t max_keys = 8;
  std::size_t min_cluster_size = 3;
};

class MockOracle final : public SemanticOracle {
 public:
  explicit MockOracle(std::shared_ptr<const Embedder> embedder, MockOracleConfig config = {});

  OracleTransformOutput transform(std::string_view raw, const SituationalImprint& imprint) override;
  SynthesisResult synthesize(const SynthesisRequest& request) override;
  std::optional<RelationSuggestion> suggest_relation(const ParticleView& a, const ParticleView& b) override;
  [[nodiscard]] std::string name() const override { return "mock-v1"; }

 private:
  std::shared_ptr<const Embedder> embedder_;
  MockOracleConfig config_;
};

// --- remote binding ------------------------------------------------------------

struct RemoteOracleConfig {
  std::string endpoint;  // http://host:port[/path]; path defaults to /oracle
  std::string token;
  int timeout_ms = 30000;
  int max_attempts = 5;
  std::chrono::milliseconds base_backoff{250};
  double backoff_factor = 2.0;
  std::ptrdiff_t max_in_flight = 4;
  std::size_t max_core_chars = 4096;
  std::size_t min_cluster_size = 3;

  /// Reads ORACLE_ENDPOINT, ORACLE_TOKEN, ORACLE_TIMEOUT_MS.
  static RemoteOracleConfig from_env();
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class RemoteOracle final : public SemanticOracle {
 public:
  explicit RemoteOracle(RemoteOracleConfig config, Sleeper sleeper = {});
  ~RemoteOracle() override;

  OracleTransformOutput transform(std::string_view raw, const SituationalImprint& imprint) override;
  SynthesisResult synthesize(const SynthesisRequest& request) override;
  std::optional<RelationSuggestion> suggest_relation(const ParticleView& a, const ParticleView& b) override;
  [[nodiscard]] std::string name() const override { return "remote"; }

  /// POSTs {mode, payload}; retries HTTP 429 with exponential backoff.
  Json remote_call(std::string_view mode, const Json& payload);

 private:
  RemoteOracleConfig config_;
  Sleeper sleeper_;
  std::string scheme_host_port_;
  std::string path_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

// Wire codecs shared by the remote client, the test stub, and the service.
Json transform_request_json(std::string_view raw, const SituationalImprint& imprint);
Json synthesis_request_json(const SynthesisRequest& request);
Json suggest_request_json(const ParticleView& a, const ParticleView& b);
Json to_json(const OracleTransformOutput& out);
Json to_json(const SynthesisResult& out);
Json to_json(const std::optional<RelationSuggestion>& out);

/// Schema-checked decoders; violations throw oracle_schema.
OracleTransformOutput parse_transform_output(const Json& j, std::size_t max_core_chars = 4096);
SynthesisResult parse_synthesis_result(const Json& j);
std::optional<RelationSuggestion> parse_suggestion(const Json& j);

}  // namespace cweave
