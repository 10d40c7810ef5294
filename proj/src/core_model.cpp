#include "cweave/core_model.hpp"

#include <cctype>
#include <cmath>

namespace cweave {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::clock_regression: return "clock_regression";
    case ErrorCode::io: return "io";
    case ErrorCode::checksum_mismatch: return "checksum_mismatch";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::zero_vector: return "zero_vector";
    case ErrorCode::empty_index: return "empty_index";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::inverted_range: return "inverted_range";
    case ErrorCode::stale_value: return "stale_value";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::self_loop: return "self_loop";
    case ErrorCode::derived_from_target_not_ia: return "derived_from_target_not_ia";
    case ErrorCode::not_an_ia: return "not_an_ia";
    case ErrorCode::too_few_constituents: return "too_few_constituents";
    case ErrorCode::embedder_mismatch: return "embedder_mismatch";
    case ErrorCode::oracle_transport: return "oracle_transport";
    case ErrorCode::oracle_status: return "oracle_status";
    case ErrorCode::oracle_schema: return "oracle_schema";
    case ErrorCode::oracle_rate_limited: return "oracle_rate_limited";
    case ErrorCode::oracle_retry_exhausted: return "oracle_retry_exhausted";
    case ErrorCode::write_lock_timeout: return "write_lock_timeout";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

namespace detail {

int crockford_value(char c) noexcept {
  auto pos = kCrockford.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

std::array<char, 26> encode_ulid(EpochMs now, std::uint64_t seed) {
  std::array<char, 26> out{};
  const auto ts = static_cast<std::uint64_t>(now) & ((1ULL << 48) - 1);
  for (int i = 0; i < 10; ++i) out[i] = kCrockford[(ts >> (45 - 5 * i)) & 31U];

  std::uint64_t state = seed;
  const std::uint64_t lo = splitmix64(state);
  const std::uint64_t hi = splitmix64(state) >> 48;  // 16 more bits
  // 80 bits = hi (16) : lo (64); emit 5 bits at a time from the top.
  for (int j = 0; j < 16; ++j) {
    const int shift = 75 - 5 * j;
    std::uint64_t chunk = 0;
    if (shift >= 64) {
      chunk = hi >> (shift - 64);
    } else if (shift > 59) {
      chunk = (lo >> shift) | (hi << (64 - shift));
    } else {
      chunk = lo >> shift;
    }
    out[10 + j] = kCrockford[chunk & 31U];
  }
  return out;
}

bool is_valid_ulid(std::string_view text) noexcept {
  if (text.size() != 26) return false;
  for (char c : text)
    if (crockford_value(c) < 0) return false;
  return crockford_value(text[0]) <= 7;  // 48-bit timestamp fits in 10 chars
}

EpochMs ulid_timestamp(const std::array<char, 26>& chars) noexcept {
  std::uint64_t ts = 0;
  for (int i = 0; i < 10; ++i) ts = (ts << 5) | static_cast<std::uint64_t>(crockford_value(chars[i]));
  return static_cast<EpochMs>(ts);
}

}  // namespace detail

ParticleId new_particle_id(EpochMs now, std::uint64_t rng_seed) { return ParticleId::mint(now, rng_seed); }

namespace {

constexpr std::array<std::string_view, 6> kSignifierNames = {
    "assertion", "hypothesis", "query", "observation", "directive", "emotional_state"};
constexpr std::array<std::string_view, 7> kStrandTypeNames = {
    "supports", "contradicts", "elaborates", "causes", "precedes", "derivedFrom", "relatedTo"};

// nlohmann exceptions become validation errors at the wire boundary.
template <class F>
void decoding(const char* what, F&& f) {
  try {
    f();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, std::string("malformed ") + what + ": " + e.what());
  }
}

std::optional<EpochMs> optional_ms(const Json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number_integer()) throw Error(ErrorCode::validation, std::string(key) + " must be an integer");
  return v.get<EpochMs>();
}

EpochMs required_ms(const Json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw Error(ErrorCode::validation, std::string(key) + " must be an integer");
  return v.get<EpochMs>();
}

std::optional<std::string> optional_text(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

Json optional_json(const std::optional<EpochMs>& v) { return v ? Json(*v) : Json(nullptr); }
Json optional_json(const std::optional<std::string>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

std::string_view to_string(Signifier s) noexcept { return kSignifierNames[static_cast<std::size_t>(s)]; }

std::optional<Signifier> parse_signifier(std::string_view text) noexcept {
  for (std::size_t i = 0; i < kSignifierNames.size(); ++i)
    if (kSignifierNames[i] == text) return static_cast<Signifier>(i);
  return std::nullopt;
}

std::string_view to_string(ParticleKind k) noexcept { return k == ParticleKind::IA ? "IA" : "IP"; }

std::optional<ParticleKind> parse_kind(std::string_view text) noexcept {
  if (text == "IP") return ParticleKind::IP;
  if (text == "IA") return ParticleKind::IA;
  return std::nullopt;
}

std::string_view to_string(StrandType t) noexcept { return kStrandTypeNames[static_cast<std::size_t>(t)]; }

std::optional<StrandType> parse_strand_type(std::string_view text) noexcept {
  for (std::size_t i = 0; i < kStrandTypeNames.size(); ++i)
    if (kStrandTypeNames[i] == text) return static_cast<StrandType>(i);
  return std::nullopt;
}

bool InsightParticle::is_stale() const {
  auto it = imprint.agent_state.find(std::string(kStaleProvenanceKey));
  return it != imprint.agent_state.end() && it->second == "true";
}

std::vector<Violation> validate_particle(const InsightParticle& p) {
  std::vector<Violation> out;
  auto add = [&](std::string rule, std::string detail) { out.push_back({std::move(rule), std::move(detail)}); };

  if (p.core_data.empty()) add("core data", "core_data is empty");
  if (p.resonance_keys.empty()) add("resonance keys", "resonance_keys is empty");
  for (const auto& key : p.resonance_keys) {
    bool lower = !key.empty();
    for (unsigned char c : key)
      if (std::isupper(c)) lower = false;
    if (!lower) add("resonance key case", "key '" + key + "' is empty or not lowercase");
  }
  if (p.imprint.source.empty()) add("imprint source", "imprint.source is empty");

  const auto& t = p.temporal;
  if (t.t_create < 0) add("temporal order", "t_create is negative");
  if (t.t_modify < t.t_create) add("temporal order", "t_modify precedes t_create");
  if (t.t_access < t.t_create) add("temporal order", "t_access precedes t_create");
  if (t.t_event_start && t.t_event_end && *t.t_event_start > *t.t_event_end)
    add("event order", "t_event_start is after t_event_end");

  const double imp = p.metrics.importance;
  if (!(imp >= 0.0 && imp <= 1.0)) add("importance range", "importance outside [0,1]");
  return out;
}

InsightParticle touch_access(InsightParticle p, EpochMs now) {
  if (now < p.temporal.t_access) {
    throw Error(ErrorCode::clock_regression, "access time " + std::to_string(now) + " precedes t_access " +
                                                 std::to_string(p.temporal.t_access));
  }
  p.metrics.f_access += 1;
  p.temporal.t_access = now;
  return p;
}

// --- JSON -------------------------------------------------------------------

void to_json(Json& j, const TemporalMetadata& t) {
  j = Json{{"t_create", t.t_create},
           {"t_modify", t.t_modify},
           {"t_access", t.t_access},
           {"t_event_start", optional_json(t.t_event_start)},
           {"t_event_end", optional_json(t.t_event_end)}};
}

void from_json(const Json& j, TemporalMetadata& t) {
  decoding("temporal", [&] {
    t.t_create = required_ms(j, "t_create");
    t.t_modify = required_ms(j, "t_modify");
    t.t_access = required_ms(j, "t_access");
    t.t_event_start = optional_ms(j, "t_event_start");
    t.t_event_end = optional_ms(j, "t_event_end");
  });
}

void to_json(Json& j, const AccessMetrics& m) {
  j = Json{{"f_access", m.f_access}, {"importance", m.importance}, {"last_recalibrated", m.last_recalibrated}};
}

void from_json(const Json& j, AccessMetrics& m) {
  decoding("metrics", [&] {
    if (!j.at("f_access").is_number_unsigned() && !(j.at("f_access").is_number_integer() && j.at("f_access").get<std::int64_t>() >= 0))
      throw Error(ErrorCode::validation, "f_access must be a non-negative integer");
    m.f_access = j.at("f_access").get<std::uint64_t>();
    if (!j.at("importance").is_number()) throw Error(ErrorCode::validation, "importance must be a number");
    m.importance = j.at("importance").get<double>();
    m.last_recalibrated = required_ms(j, "last_recalibrated");
  });
}

void to_json(Json& j, const SituationalImprint& s) {
  j = Json{{"source", s.source},
           {"agent_state", s.agent_state},
           {"task_tag", optional_json(s.task_tag)},
           {"user_tag", optional_json(s.user_tag)}};
}

void from_json(const Json& j, SituationalImprint& s) {
  decoding("imprint", [&] {
    s.source = j.at("source").get<std::string>();
    s.agent_state.clear();
    if (auto it = j.find("agent_state"); it != j.end() && !it->is_null())
      s.agent_state = it->get<std::map<std::string, std::string>>();
    s.task_tag = optional_text(j, "task_tag");
    s.user_tag = optional_text(j, "user_tag");
  });
}

void to_json(Json& j, const InsightParticle& p) {
  Json signifiers = Json::array();
  for (auto s : p.signifiers) signifiers.push_back(to_string(s));
  j = Json{{"id", p.id},
           {"core_data", p.core_data},
           {"resonance_keys", p.resonance_keys},
           {"signifiers", std::move(signifiers)},
           {"imprint", p.imprint},
           {"temporal", p.temporal},
           {"metrics", p.metrics},
           {"kind", to_string(p.kind)}};
}

void from_json(const Json& j, InsightParticle& p) {
  decoding("particle", [&] {
    p.id = j.at("id").get<ParticleId>();
    p.core_data = j.at("core_data").get<std::string>();
    p.resonance_keys = j.at("resonance_keys").get<std::set<std::string>>();
    p.signifiers.clear();
    for (const auto& s : j.at("signifiers")) {
      auto sig = parse_signifier(s.get<std::string>());
      if (!sig) throw Error(ErrorCode::validation, "unknown signifier '" + s.get<std::string>() + "'");
      p.signifiers.insert(*sig);
    }
    p.imprint = j.at("imprint").get<SituationalImprint>();
    p.temporal = j.at("temporal").get<TemporalMetadata>();
    p.metrics = j.at("metrics").get<AccessMetrics>();
    auto kind = parse_kind(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::validation, "unknown particle kind");
    p.kind = *kind;
  });
}

void to_json(Json& j, const StrandEvidence& e) {
  j = Json{{"sim", e.sim}, {"cooccur", e.cooccur}, {"conf_soi", e.conf_soi}, {"common_neighbors", e.common_neighbors}};
}

void from_json(const Json& j, StrandEvidence& e) {
  decoding("evidence", [&] {
    e.sim = j.at("sim").get<double>();
    e.cooccur = j.at("cooccur").get<std::uint64_t>();
    e.conf_soi = j.at("conf_soi").get<double>();
    e.common_neighbors = j.at("common_neighbors").get<std::uint64_t>();
  });
}

void to_json(Json& j, const RelationalStrand& s) {
  j = Json{{"id", s.id},       {"src", s.src},           {"dst", s.dst},          {"type", to_string(s.type)},
           {"strength", s.strength}, {"evidence", s.evidence}, {"t_create", s.t_create}};
}

void from_json(const Json& j, RelationalStrand& s) {
  decoding("strand", [&] {
    s.id = j.at("id").get<StrandId>();
    s.src = j.at("src").get<ParticleId>();
    s.dst = j.at("dst").get<ParticleId>();
    auto type = parse_strand_type(j.at("type").get<std::string>());
    if (!type) throw Error(ErrorCode::validation, "unknown strand type");
    s.type = *type;
    s.strength = j.at("strength").get<double>();
    s.evidence = j.at("evidence").get<StrandEvidence>();
    s.t_create = required_ms(j, "t_create");
  });
}

std::string encode_particle(const InsightParticle& p) { return Json(p).dump(); }

InsightParticle decode_particle(std::string_view text) {
  Json j;
  decoding("particle json", [&] { j = Json::parse(text); });
  return j.get<InsightParticle>();
}

std::string encode_strand(const RelationalStrand& s) { return Json(s).dump(); }

RelationalStrand decode_strand(std::string_view text) {
  Json j;
  decoding("strand json", [&] { j = Json::parse(text); });
  return j.get<RelationalStrand>();
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace cweave
