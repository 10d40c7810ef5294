#pragma once

// Relational strand layer: typed, directed, weighted edges between particles,
// their log-linear strength score, traversal, provenance, and contradiction
// surfacing.

#include <iosfwd>
#include <map>
#include <optional>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "cweave/core_model.hpp"

namespace cweave {

struct StrandWeights {
  double theta1 = 1.5;  // similarity
  double theta2 = 0.5;  // ln(1 + co-occurrence)
  double theta3 = 2.0;  // oracle confidence
  double theta4 = 0.5;  // saturated common-neighbor count
  double bias = -2.0;

  void validate() const;
};

/// Throws out_of_range unless sim in [-1,1] and conf_soi in [0,1].
void validate_evidence(const StrandEvidence& e);

/// logistic(bias + θ1·sim + θ2·ln(1+cooccur) + θ3·conf + θ4·cn/(1+cn)), kept
/// strictly inside (0, 1).
double strand_strength(const StrandEvidence& e, const StrandWeights& w);

enum class Direction { outgoing, incoming };
std::string_view to_string(Direction d) noexcept;

struct IncidentStrand {
  RelationalStrand strand;
  Direction direction = Direction::outgoing;
};

enum class ContradictionStatus { flagged, acknowledged };
std::string_view to_string(ContradictionStatus s) noexcept;

struct ContradictionRecord {
  ParticleId a;
  ParticleId b;
  StrandId strand;
  ContradictionStatus status = ContradictionStatus::flagged;
};

struct StrandFilter {
  std::optional<StrandType> type;
  double min_strength = 0.0;

  [[nodiscard]] bool accepts(const RelationalStrand& s) const {
    return (!type || s.type == *type) && s.strength >= min_strength;
  }
};

struct TraversalPath {
  std::vector<StrandId> strands;
  ParticleId end;
  /// Product of strand strengths along the path.
  double strength = 1.0;
};

class RelationalGraph {
 public:
  explicit RelationalGraph(StrandWeights weights = {}, std::uint64_t id_seed = 0x57A4D5ULL);

  void add_node(const ParticleId& id, ParticleKind kind);
  /// Drops the node and every incident strand; returns the removed strand ids.
  std::vector<StrandId> remove_node(const ParticleId& id);
  [[nodiscard]] bool has_node(const ParticleId& id) const { return nodes_.count(id) != 0; }
  [[nodiscard]] std::optional<ParticleKind> kind_of(const ParticleId& id) const;

  /// At most one strand per (src, dst, type): re-adding updates the evidence,
  /// recomputes strength, and keeps the original id.
  const RelationalStrand& add_strand(const ParticleId& src, const ParticleId& dst, StrandType type,
                                     const StrandEvidence& evidence, EpochMs now);
  /// Inserts a fully formed strand (e.g. rebuilt from the store) after the
  /// same endpoint checks as add_strand.
  void insert_strand(const RelationalStrand& s);
  /// Inserts without any endpoint checks. Only for fault injection and raw imports.
  void insert_strand_unchecked(const RelationalStrand& s);
  void remove_strand(const StrandId& id);

  [[nodiscard]] const RelationalStrand* find_strand(const StrandId& id) const;
  [[nodiscard]] const RelationalStrand* find_strand(const ParticleId& src, const ParticleId& dst, StrandType type) const;
  [[nodiscard]] bool linked(const ParticleId& a, const ParticleId& b) const;
  [[nodiscard]] std::uint64_t common_neighbors(const ParticleId& a, const ParticleId& b) const;

  /// Incident strands passing the filter, by strength descending then strand id.
  [[nodiscard]] std::vector<IncidentStrand> neighbors(const ParticleId& id, const StrandFilter& filter = {}) const;
  /// Sources of derivedFrom strands into `ia`, id-sorted.
  [[nodiscard]] std::vector<ParticleId> provenance(const ParticleId& ia) const;
  /// Breadth-first enumeration of simple paths of length 1..max_depth,
  /// following strands in either direction, ordered lexicographically by
  /// strand-id sequence.
  [[nodiscard]] std::vector<TraversalPath> traverse(const ParticleId& start, std::size_t max_depth,
                                                    const StrandFilter& filter = {}) const;

  /// One record per contradicts strand touching `scope` (or all of them).
  std::vector<ContradictionRecord> flag_contradictions(const std::optional<ParticleId>& scope = std::nullopt);
  void acknowledge_contradiction(const StrandId& id);
  /// Flagged (unacknowledged) contradicts strands incident to `id`.
  [[nodiscard]] std::size_t flagged_contradictions(const ParticleId& id) const;

  [[nodiscard]] std::size_t strand_count() const { return strands_.size(); }
  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }
  [[nodiscard]] std::size_t degree(const ParticleId& id) const;
  [[nodiscard]] const std::map<StrandId, RelationalStrand>& strands() const { return strands_; }
  [[nodiscard]] const std::unordered_map<ParticleId, ParticleKind>& nodes() const { return nodes_; }
  [[nodiscard]] const StrandWeights& weights() const { return weights_; }

  /// One canonical strand JSON object per line.
  void export_jsonl(std::ostream& out) const;
  /// Raw import of exported strands; endpoints are not checked. Returns count.
  std::size_t import_jsonl(std::istream& in);

 private:
  struct Adjacency {
    std::vector<StrandId> out;
    std::vector<StrandId> in;
  };
  using TripleKey = std::tuple<ParticleId, ParticleId, StrandType>;

  void check_endpoints(const ParticleId& src, const ParticleId& dst, StrandType type) const;
  void link(const RelationalStrand& s);
  void unlink(const RelationalStrand& s);

  StrandWeights weights_;
  std::uint64_t id_state_;
  std::unordered_map<ParticleId, ParticleKind> nodes_;
  std::unordered_map<ParticleId, Adjacency> adjacency_;
  std::map<StrandId, RelationalStrand> strands_;
  std::map<TripleKey, StrandId> by_triple_;
  std::map<StrandId, ContradictionStatus> contradiction_status_;
};

}  // namespace cweave
