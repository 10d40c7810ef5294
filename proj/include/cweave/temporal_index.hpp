#pragma once

#include <array>
#include <optional>
#include <set>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cweave/core_model.hpp"

namespace cweave {

enum class TemporalField { t_create, t_modify, t_access, t_event_start, t_event_end };

inline constexpr std::array<TemporalField, 5> kAllTemporalFields = {
    TemporalField::t_create, TemporalField::t_modify, TemporalField::t_access, TemporalField::t_event_start,
    TemporalField::t_event_end};

std::string_view to_string(TemporalField f) noexcept;
std::optional<TemporalField> parse_temporal_field(std::string_view text) noexcept;
std::optional<EpochMs> field_value(const TemporalMetadata& t, TemporalField f) noexcept;

/// One ordered tree per timestamp field, keyed by (value, id). Particles
/// without event times are simply absent from the event-field trees.
class TemporalIndex {
 public:
  void insert(const ParticleId& id, const TemporalMetadata& t);
  void remove(const ParticleId& id);
  /// Throws stale_value if `old_t` is not what is currently indexed.
  void reindex(const ParticleId& id, const TemporalMetadata& old_t, const TemporalMetadata& new_t);

  /// Ids with field value in [lo, hi], ordered by (value, id).
  [[nodiscard]] std::vector<ParticleId> range_query(TemporalField field, EpochMs lo, EpochMs hi) const;

  [[nodiscard]] bool contains(const ParticleId& id) const { return entries_.count(id) != 0; }
  [[nodiscard]] const TemporalMetadata* find(const ParticleId& id) const;
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::size_t field_size(TemporalField f) const { return trees_[static_cast<std::size_t>(f)].size(); }
  [[nodiscard]] std::vector<ParticleId> ids() const;

 private:
  using Tree = std::set<std::pair<EpochMs, ParticleId>>;
  void add_keys(const ParticleId& id, const TemporalMetadata& t);
  void drop_keys(const ParticleId& id, const TemporalMetadata& t);

  std::array<Tree, 5> trees_;
  std::unordered_map<ParticleId, TemporalMetadata> entries_;
};

}  // namespace cweave
