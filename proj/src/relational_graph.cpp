#include "cweave/relational_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <string>

namespace cweave {

void StrandWeights::validate() const {
  for (double v : {theta1, theta2, theta3, theta4, bias})
    if (!std::isfinite(v)) throw Error(ErrorCode::config, "strand weights must be finite");
}

void validate_evidence(const StrandEvidence& e) {
  if (!(e.sim >= -1.0 && e.sim <= 1.0)) throw Error(ErrorCode::out_of_range, "evidence sim outside [-1,1]");
  if (!(e.conf_soi >= 0.0 && e.conf_soi <= 1.0))
    throw Error(ErrorCode::out_of_range, "evidence conf_soi outside [0,1]");
}

double strand_strength(const StrandEvidence& e, const StrandWeights& w) {
  validate_evidence(e);
  const double cn = static_cast<double>(e.common_neighbors);
  const double score = w.bias + w.theta1 * e.sim + w.theta2 * std::log1p(static_cast<double>(e.cooccur)) +
                       w.theta3 * e.conf_soi + w.theta4 * (cn / (1.0 + cn));
  const double p = 1.0 / (1.0 + std::exp(-score));
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(p, lo, hi);
}

std::string_view to_string(Direction d) noexcept { return d == Direction::outgoing ? "outgoing" : "incoming"; }

std::string_view to_string(ContradictionStatus s) noexcept {
  return s == ContradictionStatus::flagged ? "flagged" : "acknowledged";
}

RelationalGraph::RelationalGraph(StrandWeights weights, std::uint64_t id_seed) : weights_(weights), id_state_(id_seed) {
  weights_.validate();
}

void RelationalGraph::add_node(const ParticleId& id, ParticleKind kind) {
  nodes_.insert_or_assign(id, kind);
  adjacency_.try_emplace(id);
}

std::vector<StrandId> RelationalGraph::remove_node(const ParticleId& id) {
  std::vector<StrandId> removed;
  if (auto it = adjacency_.find(id); it != adjacency_.end()) {
    removed = it->second.out;
    removed.insert(removed.end(), it->second.in.begin(), it->second.in.end());
    std::sort(removed.begin(), removed.end());
    for (const auto& sid : removed) remove_strand(sid);
  }
  nodes_.erase(id);
  adjacency_.erase(id);
  return removed;
}

std::optional<ParticleKind> RelationalGraph::kind_of(const ParticleId& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) return std::nullopt;
  return it->second;
}

void RelationalGraph::check_endpoints(const ParticleId& src, const ParticleId& dst, StrandType type) const {
  if (src == dst) throw Error(ErrorCode::self_loop, "strand endpoints must differ");
  if (!has_node(src)) throw Error(ErrorCode::not_found, "strand source " + src.str() + " not found");
  if (!has_node(dst)) throw Error(ErrorCode::not_found, "strand target " + dst.str() + " not found");
  if (type == StrandType::derivedFrom && nodes_.at(dst) != ParticleKind::IA)
    throw Error(ErrorCode::derived_from_target_not_ia, "derivedFrom must terminate at an aggregate");
}

void RelationalGraph::link(const RelationalStrand& s) {
  adjacency_[s.src].out.push_back(s.id);
  adjacency_[s.dst].in.push_back(s.id);
  by_triple_[{s.src, s.dst, s.type}] = s.id;
  strands_.insert_or_assign(s.id, s);
}

void RelationalGraph::unlink(const RelationalStrand& s) {
  auto erase_from = [&](const ParticleId& node, bool outgoing) {
    auto it = adjacency_.find(node);
    if (it == adjacency_.end()) return;
    auto& ids = outgoing ? it->second.out : it->second.in;
    ids.erase(std::remove(ids.begin(), ids.end(), s.id), ids.end());
  };
  erase_from(s.src, true);
  erase_from(s.dst, false);
  if (auto it = by_triple_.find({s.src, s.dst, s.type}); it != by_triple_.end() && it->second == s.id)
    by_triple_.erase(it);
}

const RelationalStrand& RelationalGraph::add_strand(const ParticleId& src, const ParticleId& dst, StrandType type,
                                                    const StrandEvidence& evidence, EpochMs now) {
  check_endpoints(src, dst, type);
  const double strength = strand_strength(evidence, weights_);
  if (auto it = by_triple_.find({src, dst, type}); it != by_triple_.end()) {
    auto& existing = strands_.at(it->second);
    existing.evidence = evidence;
    existing.strength = strength;
    return existing;
  }
  RelationalStrand s;
  do {
    s.id = StrandId::mint(now, splitmix64(id_state_));
  } while (strands_.count(s.id));
  s.src = src;
  s.dst = dst;
  s.type = type;
  s.evidence = evidence;
  s.strength = strength;
  s.t_create = now;
  link(s);
  return strands_.at(s.id);
}

void RelationalGraph::insert_strand(const RelationalStrand& s) {
  check_endpoints(s.src, s.dst, s.type);
  if (auto it = by_triple_.find({s.src, s.dst, s.type}); it != by_triple_.end() && it->second != s.id)
    throw Error(ErrorCode::conflict, "a strand with the same endpoints and type already exists");
  insert_strand_unchecked(s);
}

void RelationalGraph::insert_strand_unchecked(const RelationalStrand& s) {
  if (auto it = strands_.find(s.id); it != strands_.end()) unlink(it->second);
  link(s);
}

void RelationalGraph::remove_strand(const StrandId& id) {
  auto it = strands_.find(id);
  if (it == strands_.end()) throw Error(ErrorCode::not_found, "strand " + id.str() + " not found");
  unlink(it->second);
  contradiction_status_.erase(id);
  strands_.erase(it);
}

const RelationalStrand* RelationalGraph::find_strand(const StrandId& id) const {
  auto it = strands_.find(id);
  return it == strands_.end() ? nullptr : &it->second;
}

const RelationalStrand* RelationalGraph::find_strand(const ParticleId& src, const ParticleId& dst,
                                                     StrandType type) const {
  auto it = by_triple_.find({src, dst, type});
  return it == by_triple_.end() ? nullptr : find_strand(it->second);
}

bool RelationalGraph::linked(const ParticleId& a, const ParticleId& b) const {
  auto it = adjacency_.find(a);
  if (it == adjacency_.end()) return false;
  for (const auto& sid : it->second.out)
    if (strands_.at(sid).dst == b) return true;
  for (const auto& sid : it->second.in)
    if (strands_.at(sid).src == b) return true;
  return false;
}

std::uint64_t RelationalGraph::common_neighbors(const ParticleId& a, const ParticleId& b) const {
  auto around = [&](const ParticleId& id) {
    std::set<ParticleId> out;
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) return out;
    for (const auto& sid : it->second.out) out.insert(strands_.at(sid).dst);
    for (const auto& sid : it->second.in) out.insert(strands_.at(sid).src);
    return out;
  };
  const auto na = around(a);
  const auto nb = around(b);
  std::uint64_t count = 0;
  for (const auto& n : na)
    if (n != a && n != b && nb.count(n)) ++count;
  return count;
}

std::size_t RelationalGraph::degree(const ParticleId& id) const {
  auto it = adjacency_.find(id);
  return it == adjacency_.end() ? 0 : it->second.out.size() + it->second.in.size();
}

std::vector<IncidentStrand> RelationalGraph::neighbors(const ParticleId& id, const StrandFilter& filter) const {
  if (!has_node(id)) throw Error(ErrorCode::not_found, "particle " + id.str() + " not in graph");
  std::vector<IncidentStrand> out;
  const auto& adj = adjacency_.at(id);
  for (const auto& sid : adj.out) {
    const auto& s = strands_.at(sid);
    if (filter.accepts(s)) out.push_back({s, Direction::outgoing});
  }
  for (const auto& sid : adj.in) {
    const auto& s = strands_.at(sid);
    if (filter.accepts(s)) out.push_back({s, Direction::incoming});
  }
  std::sort(out.begin(), out.end(), [](const IncidentStrand& a, const IncidentStrand& b) {
    if (a.strand.strength != b.strand.strength) return a.strand.strength > b.strand.strength;
    return a.strand.id < b.strand.id;
  });
  return out;
}

std::vector<ParticleId> RelationalGraph::provenance(const ParticleId& ia) const {
  auto kind = kind_of(ia);
  if (!kind) throw Error(ErrorCode::not_found, "particle " + ia.str() + " not in graph");
  if (*kind != ParticleKind::IA) throw Error(ErrorCode::not_an_ia, ia.str() + " is not an aggregate");
  std::vector<ParticleId> out;
  for (const auto& sid : adjacency_.at(ia).in) {
    const auto& s = strands_.at(sid);
    if (s.type == StrandType::derivedFrom) out.push_back(s.src);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TraversalPath> RelationalGraph::traverse(const ParticleId& start, std::size_t max_depth,
                                                     const StrandFilter& filter) const {
  if (!has_node(start)) throw Error(ErrorCode::not_found, "particle " + start.str() + " not in graph");
  if (max_depth < 1) throw Error(ErrorCode::validation, "max_depth must be at least 1");

  struct Frontier {
    TraversalPath path;
    std::vector<ParticleId> visited;
  };
  std::vector<TraversalPath> out;
  std::deque<Frontier> queue;
  queue.push_back({{{}, start, 1.0}, {start}});
  while (!queue.empty()) {
    auto current = std::move(queue.front());
    queue.pop_front();
    if (current.path.strands.size() >= max_depth) continue;
    auto it = adjacency_.find(current.path.end);
    if (it == adjacency_.end()) continue;
    auto step = [&](const StrandId& sid, bool outgoing) {
      const auto& s = strands_.at(sid);
      if (!filter.accepts(s)) return;
      const ParticleId next = outgoing ? s.dst : s.src;
      if (std::find(current.visited.begin(), current.visited.end(), next) != current.visited.end()) return;
      Frontier extended = current;
      extended.path.strands.push_back(sid);
      extended.path.end = next;
      extended.path.strength *= s.strength;
      extended.visited.push_back(next);
      out.push_back(extended.path);
      queue.push_back(std::move(extended));
    };
    for (const auto& sid : it->second.out) step(sid, true);
    for (const auto& sid : it->second.in) step(sid, false);
  }
  std::sort(out.begin(), out.end(),
            [](const TraversalPath& a, const TraversalPath& b) { return a.strands < b.strands; });
  return out;
}

std::vector<ContradictionRecord> RelationalGraph::flag_contradictions(const std::optional<ParticleId>& scope) {
  if (scope && !has_node(*scope)) throw Error(ErrorCode::not_found, "particle " + scope->str() + " not in graph");
  std::vector<ContradictionRecord> out;
  for (const auto& [sid, s] : strands_) {
    if (s.type != StrandType::contradicts) continue;
    if (scope && s.src != *scope && s.dst != *scope) continue;
    auto [it, inserted] = contradiction_status_.try_emplace(sid, ContradictionStatus::flagged);
    out.push_back({s.src, s.dst, sid, it->second});
  }
  return out;
}

void RelationalGraph::acknowledge_contradiction(const StrandId& id) {
  const auto* s = find_strand(id);
  if (!s || s->type != StrandType::contradicts)
    throw Error(ErrorCode::not_found, "no contradicts strand " + id.str());
  contradiction_status_[id] = ContradictionStatus::acknowledged;
}

std::size_t RelationalGraph::flagged_contradictions(const ParticleId& id) const {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end()) return 0;
  std::size_t count = 0;
  auto tally = [&](const StrandId& sid) {
    if (strands_.at(sid).type != StrandType::contradicts) return;
    auto st = contradiction_status_.find(sid);
    if (st == contradiction_status_.end() || st->second == ContradictionStatus::flagged) ++count;
  };
  for (const auto& sid : it->second.out) tally(sid);
  for (const auto& sid : it->second.in) tally(sid);
  return count;
}

void RelationalGraph::export_jsonl(std::ostream& out) const {
  for (const auto& [id, s] : strands_) out << encode_strand(s) << '\n';
}

std::size_t RelationalGraph::import_jsonl(std::istream& in) {
  std::size_t count = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    insert_strand_unchecked(decode_strand(line));
    ++count;
  }
  return count;
}

}  // namespace cweave
