#pragma once

// Canonical domain records shared by every layer of the memory graph:
// particles, their temporal/access metadata, and typed relational strands.

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cweave/error.hpp"

namespace cweave {

using Json = nlohmann::json;

/// UTC milliseconds since the Unix epoch.
using EpochMs = std::int64_t;
using DurationMs = std::int64_t;

/// splitmix64 step; the only PRNG used for anything that must be reproducible.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform real in [0, 1) from the top 53 bits of a splitmix64 draw.
inline double splitmix_uniform(std::uint64_t& state) noexcept {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

namespace detail {

inline constexpr std::string_view kCrockford = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

int crockford_value(char c) noexcept;

std::array<char, 26> encode_ulid(EpochMs now, std::uint64_t seed);
bool is_valid_ulid(std::string_view text) noexcept;
EpochMs ulid_timestamp(const std::array<char, 26>& chars) noexcept;

}  // namespace detail

/// 26-character lexicographically sortable identifier: a 48-bit millisecond
/// timestamp followed by 80 random bits, Crockford base32. Lexicographic
/// order equals creation-time order.
template <class Tag>
class Ulid {
 public:
  static constexpr std::size_t kLength = 26;

  Ulid() { chars_.fill('0'); }

  /// Deterministic in (now, seed).
  static Ulid mint(EpochMs now, std::uint64_t seed) {
    if (now < 0) throw Error(ErrorCode::validation, "id timestamp must be non-negative");
    Ulid id;
    id.chars_ = detail::encode_ulid(now, seed);
    return id;
  }

  static std::optional<Ulid> parse(std::string_view text) {
    if (!detail::is_valid_ulid(text)) return std::nullopt;
    Ulid id;
    for (std::size_t i = 0; i < kLength; ++i) id.chars_[i] = text[i];
    return id;
  }

  static Ulid parse_or_throw(std::string_view text) {
    auto id = parse(text);
    if (!id) throw Error(ErrorCode::validation, "malformed id '" + std::string(text) + "'");
    return *id;
  }

  [[nodiscard]] std::string_view view() const noexcept { return {chars_.data(), kLength}; }
  [[nodiscard]] std::string str() const { return std::string(view()); }
  [[nodiscard]] EpochMs timestamp() const noexcept { return detail::ulid_timestamp(chars_); }

  friend auto operator<=>(const Ulid&, const Ulid&) = default;
  friend bool operator==(const Ulid&, const Ulid&) = default;

 private:
  std::array<char, 26> chars_{};
};

struct ParticleTag {};
struct StrandTag {};
using ParticleId = Ulid<ParticleTag>;
using StrandId = Ulid<StrandTag>;

template <class Tag>
void to_json(Json& j, const Ulid<Tag>& id) {
  j = id.str();
}
template <class Tag>
void from_json(const Json& j, Ulid<Tag>& id) {
  if (!j.is_string()) throw Error(ErrorCode::validation, "id must be a string");
  id = Ulid<Tag>::parse_or_throw(j.get<std::string>());
}

ParticleId new_particle_id(EpochMs now, std::uint64_t rng_seed);

// ---------------------------------------------------------------------------

struct TemporalMetadata {
  EpochMs t_create = 0;
  EpochMs t_modify = 0;
  EpochMs t_access = 0;
  std::optional<EpochMs> t_event_start;
  std::optional<EpochMs> t_event_end;

  friend bool operator==(const TemporalMetadata&, const TemporalMetadata&) = default;
};

struct AccessMetrics {
  std::uint64_t f_access = 0;
  double importance = 0.0;
  EpochMs last_recalibrated = 0;

  friend bool operator==(const AccessMetrics&, const AccessMetrics&) = default;
};

struct SituationalImprint {
  std::string source;
  std::map<std::string, std::string> agent_state;
  std::optional<std::string> task_tag;
  std::optional<std::string> user_tag;

  friend bool operator==(const SituationalImprint&, const SituationalImprint&) = default;
};

/// Key set in agent_state marking an aggregate whose constituents were deleted.
inline constexpr std::string_view kStaleProvenanceKey = "stale_provenance";

enum class Signifier { assertion, hypothesis, query, observation, directive, emotional_state };
enum class ParticleKind { IP, IA };

std::string_view to_string(Signifier s) noexcept;
std::optional<Signifier> parse_signifier(std::string_view text) noexcept;
std::string_view to_string(ParticleKind k) noexcept;
std::optional<ParticleKind> parse_kind(std::string_view text) noexcept;

struct InsightParticle {
  ParticleId id;
  std::string core_data;
  std::set<std::string> resonance_keys;
  std::set<Signifier> signifiers;
  SituationalImprint imprint;
  TemporalMetadata temporal;
  AccessMetrics metrics;
  ParticleKind kind = ParticleKind::IP;

  [[nodiscard]] bool is_aggregate() const noexcept { return kind == ParticleKind::IA; }
  [[nodiscard]] bool is_stale() const;

  friend bool operator==(const InsightParticle&, const InsightParticle&) = default;
};

struct Violation {
  std::string rule;
  std::string detail;
};

/// Empty result means the particle satisfies every record-level invariant.
std::vector<Violation> validate_particle(const InsightParticle& p);

/// Records one access at `now`; throws clock_regression if now < t_access.
InsightParticle touch_access(InsightParticle p, EpochMs now);

// ---------------------------------------------------------------------------

enum class StrandType { supports, contradicts, elaborates, causes, precedes, derivedFrom, relatedTo };

std::string_view to_string(StrandType t) noexcept;
std::optional<StrandType> parse_strand_type(std::string_view text) noexcept;

struct StrandEvidence {
  double sim = 0.0;
  std::uint64_t cooccur = 0;
  double conf_soi = 0.0;
  std::uint64_t common_neighbors = 0;

  friend bool operator==(const StrandEvidence&, const StrandEvidence&) = default;
};

struct RelationalStrand {
  StrandId id;
  ParticleId src;
  ParticleId dst;
  StrandType type = StrandType::relatedTo;
  double strength = 0.5;
  StrandEvidence evidence;
  EpochMs t_create = 0;

  friend bool operator==(const RelationalStrand&, const RelationalStrand&) = default;
};

// Canonical wire encoding. Keys are snake_case, timestamps integers, absent
// optionals encoded as null, sets as sorted arrays.
void to_json(Json& j, const TemporalMetadata& t);
void from_json(const Json& j, TemporalMetadata& t);
void to_json(Json& j, const AccessMetrics& m);
void from_json(const Json& j, AccessMetrics& m);
void to_json(Json& j, const SituationalImprint& s);
void from_json(const Json& j, SituationalImprint& s);
void to_json(Json& j, const InsightParticle& p);
void from_json(const Json& j, InsightParticle& p);
void to_json(Json& j, const StrandEvidence& e);
void from_json(const Json& j, StrandEvidence& e);
void to_json(Json& j, const RelationalStrand& s);
void from_json(const Json& j, RelationalStrand& s);

std::string encode_particle(const InsightParticle& p);
InsightParticle decode_particle(std::string_view text);
std::string encode_strand(const RelationalStrand& s);
RelationalStrand decode_strand(std::string_view text);

/// Lowercases ASCII and splits on every non-alphanumeric byte.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace cweave

template <class Tag>
struct std::hash<cweave::Ulid<Tag>> {
  std::size_t operator()(const cweave::Ulid<Tag>& id) const noexcept {
    return std::hash<std::string_view>{}(id.view());
  }
};
