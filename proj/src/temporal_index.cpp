#include "cweave/temporal_index.hpp"

#include <algorithm>

namespace cweave {

namespace {
constexpr std::array<std::string_view, 5> kFieldNames = {"t_create", "t_modify", "t_access", "t_event_start",
                                                         "t_event_end"};
}

std::string_view to_string(TemporalField f) noexcept { return kFieldNames[static_cast<std::size_t>(f)]; }

std::optional<TemporalField> parse_temporal_field(std::string_view text) noexcept {
  for (std::size_t i = 0; i < kFieldNames.size(); ++i)
    if (kFieldNames[i] == text) return static_cast<TemporalField>(i);
  return std::nullopt;
}

std::optional<EpochMs> field_value(const TemporalMetadata& t, TemporalField f) noexcept {
  switch (f) {
    case TemporalField::t_create: return t.t_create;
    case TemporalField::t_modify: return t.t_modify;
    case TemporalField::t_access: return t.t_access;
    case TemporalField::t_event_start: return t.t_event_start;
    case TemporalField::t_event_end: return t.t_event_end;
  }
  return std::nullopt;
}

void TemporalIndex::add_keys(const ParticleId& id, const TemporalMetadata& t) {
  for (auto f : kAllTemporalFields)
    if (auto v = field_value(t, f)) trees_[static_cast<std::size_t>(f)].emplace(*v, id);
}

void TemporalIndex::drop_keys(const ParticleId& id, const TemporalMetadata& t) {
  for (auto f : kAllTemporalFields)
    if (auto v = field_value(t, f)) trees_[static_cast<std::size_t>(f)].erase({*v, id});
}

void TemporalIndex::insert(const ParticleId& id, const TemporalMetadata& t) {
  if (!entries_.emplace(id, t).second) throw Error(ErrorCode::duplicate_id, id.str() + " already temporally indexed");
  add_keys(id, t);
}

void TemporalIndex::remove(const ParticleId& id) {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorCode::not_found, id.str() + " not temporally indexed");
  drop_keys(id, it->second);
  entries_.erase(it);
}

void TemporalIndex::reindex(const ParticleId& id, const TemporalMetadata& old_t, const TemporalMetadata& new_t) {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorCode::not_found, id.str() + " not temporally indexed");
  if (!(it->second == old_t)) throw Error(ErrorCode::stale_value, "stale temporal metadata for " + id.str());
  drop_keys(id, old_t);
  add_keys(id, new_t);
  it->second = new_t;
}

std::vector<ParticleId> TemporalIndex::range_query(TemporalField field, EpochMs lo, EpochMs hi) const {
  if (lo > hi) throw Error(ErrorCode::inverted_range, "range lower bound exceeds upper bound");
  const auto& tree = trees_[static_cast<std::size_t>(field)];
  std::vector<ParticleId> out;
  // ParticleId{} is all '0', the smallest possible id.
  for (auto it = tree.lower_bound({lo, ParticleId{}}); it != tree.end() && it->first <= hi; ++it)
    out.push_back(it->second);
  return out;
}

const TemporalMetadata* TemporalIndex::find(const ParticleId& id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<ParticleId> TemporalIndex::ids() const {
  std::vector<ParticleId> out;
  out.reserve(entries_.size());
  for (const auto& [id, t] : entries_) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace cweave
