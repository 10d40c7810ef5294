#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "cweave/semantic_oracle.hpp"

namespace cweave {

RemoteOracleConfig RemoteOracleConfig::from_env() {
  RemoteOracleConfig config;
  if (const char* v = std::getenv("ORACLE_ENDPOINT")) config.endpoint = v;
  if (const char* v = std::getenv("ORACLE_TOKEN")) config.token = v;
  if (const char* v = std::getenv("ORACLE_TIMEOUT_MS")) {
    try {
      config.timeout_ms = std::stoi(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "ORACLE_TIMEOUT_MS is not an integer");
    }
  }
  return config;
}

RemoteOracle::RemoteOracle(RemoteOracleConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (config_.endpoint.empty()) throw Error(ErrorCode::config, "ORACLE_ENDPOINT is not configured");
  if (config_.max_attempts < 1 || config_.max_in_flight < 1 || config_.timeout_ms < 1)
    throw Error(ErrorCode::config, "remote oracle limits must be positive");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  const auto scheme_end = config_.endpoint.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = config_.endpoint.find('/', host_start);
  scheme_host_port_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/oracle" : config_.endpoint.substr(path_start);
  in_flight_ = std::make_unique<std::counting_semaphore<>>(config_.max_in_flight);
}

RemoteOracle::~RemoteOracle() = default;

Json RemoteOracle::remote_call(std::string_view mode, const Json& payload) {
  const std::string body = Json{{"mode", std::string(mode)}, {"payload", payload}}.dump();
  httplib::Headers headers;
  if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);

  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>* sem;
    ~Release() { sem->release(); }
  } release{in_flight_.get()};

  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  for (int attempt = 1;; ++attempt) {
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) throw Error(ErrorCode::oracle_transport, "oracle request failed: " + httplib::to_string(res.error()));
    if (res->status == 429) {
      if (attempt >= config_.max_attempts)
        throw Error(ErrorCode::oracle_retry_exhausted,
                    "oracle still rate-limited after " + std::to_string(attempt) + " attempts");
      const double scale = std::pow(config_.backoff_factor, attempt - 1);
      sleeper_(std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(config_.base_backoff.count()) * scale)));
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw Error(ErrorCode::oracle_status, "oracle returned HTTP " + std::to_string(res->status));
    try {
      return Json::parse(res->body);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::oracle_schema, std::string("oracle response is not JSON: ") + e.what());
    }
  }
}

OracleTransformOutput RemoteOracle::transform(std::string_view raw, const SituationalImprint& imprint) {
  if (normalize_whitespace(raw).empty()) throw Error(ErrorCode::empty_input, "raw input is empty");
  return parse_transform_output(remote_call("transform", transform_request_json(raw, imprint)),
                                config_.max_core_chars);
}

SynthesisResult RemoteOracle::synthesize(const SynthesisRequest& request) {
  if (request.constituents.size() < config_.min_cluster_size)
    throw Error(ErrorCode::too_few_constituents, "synthesis needs at least " +
                                                     std::to_string(config_.min_cluster_size) + " constituents");
  auto result = parse_synthesis_result(remote_call("synthesize", synthesis_request_json(request)));
  std::size_t total = 0;
  for (const auto& c : request.constituents) total += c.core_data.size();
  if (result.ia_core_data.size() >= total)
    throw Error(ErrorCode::oracle_schema, "synthesized text is not shorter than its constituents");
  return result;
}

std::optional<RelationSuggestion> RemoteOracle::suggest_relation(const ParticleView& a, const ParticleView& b) {
  if (a.id == b.id) throw Error(ErrorCode::validation, "cannot relate a particle to itself");
  return parse_suggestion(remote_call("suggest", suggest_request_json(a, b)));
}

}  // namespace cweave
