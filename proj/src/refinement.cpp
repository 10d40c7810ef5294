#include "cweave/refinement.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <queue>

namespace cweave {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::config, what);
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

bool contains_all(const std::vector<ParticleId>& sorted_superset, const Cluster& sorted_subset) {
  return std::includes(sorted_superset.begin(), sorted_superset.end(), sorted_subset.begin(), sorted_subset.end());
}

}  // namespace

void ClusterConfig::validate() const {
  require(tau_cluster > 0.0 && tau_cluster < 1.0, "tau_cluster must lie in (0,1)");
  require(w_sem >= 0 && w_rel >= 0 && w_temp >= 0, "cluster weights must be non-negative");
  require(std::abs(w_sem + w_rel + w_temp - 1.0) <= 1e-9, "cluster weights must sum to 1");
  require(sigma_t_ms > 0.0, "sigma_t must be positive");
  require(min_cluster_size >= 2, "min_cluster_size must be at least 2");
  require(q_min >= -1.0 && q_min <= 1.0, "q_min must lie in [-1,1]");
}

void RefinementTriggers::validate() const {
  require(period_ms > 0, "refinement period must be positive");
  require(ingest_count_threshold > 0, "ingest count threshold must be positive");
  require(fragmentation_threshold > 0.0, "fragmentation threshold must be positive");
}

void IAObjectiveWeights::validate() const {
  require(lambda_comp >= 0.0, "lambda_comp must be non-negative");
  for (double w : omega) require(w >= 0.0, "omega entries must be non-negative");
  if (!omega.empty())
    require(std::accumulate(omega.begin(), omega.end(), 0.0) > 0.0, "omega must have positive mass");
}

void RecalibrationCoeffs::validate() const {
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
  require(beta >= 0.0 && gamma >= 0.0, "beta and gamma must be non-negative");
  require(alpha + beta + gamma <= 1.0 + 1e-12, "alpha + beta + gamma must not exceed 1");
  require(f_cap >= 1, "f_cap must be at least 1");
  require(delta_contra >= 0.0, "delta_contra must be non-negative");
}

void DecayParams::validate() const {
  require(lambda_decay > 0.0, "lambda_decay must be positive");
  require(i_base >= 0.0 && i_base < 1.0, "i_base must lie in [0,1)");
}

void RefinementConfig::validate() const {
  cluster.validate();
  objective.validate();
  recalibration.validate();
  decay.validate();
  require(prune_floor >= 0.0 && prune_floor < 1.0, "prune floor must lie in [0,1)");
  require(ia_importance_bonus >= 0.0, "IA importance bonus must be non-negative");
}

Json to_json(const RefinementReport& r) {
  Json objectives = Json::array();
  for (const auto& o : r.ia_objectives) objectives.push_back({{"ia", o.ia.str()}, {"objective", o.objective}});
  Json ias = Json::array();
  for (const auto& id : r.ias_created) ias.push_back(id.str());
  Json pruned = Json::array();
  for (const auto& id : r.particles_pruned) pruned.push_back(id.str());
  return Json{{"clusters_considered", r.clusters_considered},
              {"clusters_accepted", r.clusters_accepted},
              {"clusters_skipped_covered", r.clusters_skipped_covered},
              {"ias_created", ias},
              {"strands_added", r.strands_added},
              {"importances_changed", r.importances_changed},
              {"particles_pruned", pruned},
              {"wall_time_ms", r.wall_time_ms},
              {"ia_objectives", objectives},
              {"errors", r.errors}};
}

// --- pure building blocks ------------------------------------------------------

double cluster_affinity(const ClusterMember& a, const ClusterMember& b, bool linked, const ClusterConfig& cfg) {
  const double dt = std::abs(static_cast<double>(a.t_create - b.t_create));
  return cfg.w_sem * cosine(a.embedding, b.embedding) + cfg.w_rel * (linked ? 1.0 : 0.0) +
         cfg.w_temp * std::exp(-dt / cfg.sigma_t_ms);
}

std::vector<Cluster> identify_clusters(std::span<const ClusterMember> members, const LinkPredicate& linked,
                                       const ClusterConfig& cfg) {
  struct Edge {
    double affinity;
    std::size_t i;
    std::size_t j;
  };
  std::vector<std::size_t> order(members.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return members[x].id < members[y].id; });

  std::vector<Edge> edges;
  for (std::size_t a = 0; a < order.size(); ++a) {
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto& mi = members[order[a]];
      const auto& mj = members[order[b]];
      const bool has_link = linked && linked(mi.id, mj.id);
      const double affinity = cluster_affinity(mi, mj, has_link, cfg);
      if (affinity >= cfg.tau_cluster) edges.push_back({affinity, a, b});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.affinity != y.affinity) return x.affinity > y.affinity;
    return std::tie(x.i, x.j) < std::tie(y.i, y.j);
  });

  DisjointSets sets(order.size());
  for (const auto& e : edges) sets.unite(e.i, e.j);

  std::map<std::size_t, Cluster> groups;
  for (std::size_t a = 0; a < order.size(); ++a) groups[sets.find(a)].push_back(members[order[a]].id);
  std::vector<Cluster> out;
  for (auto& [root, ids] : groups)
    if (ids.size() >= cfg.min_cluster_size) out.push_back(std::move(ids));
  return out;
}

QualityVerdict cluster_quality(std::span<const Vector> member_embeddings, const ClusterConfig& cfg) {
  const std::size_t n = member_embeddings.size();
  if (n < 2) return {false, 0.0};
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++pairs) sum += cosine(member_embeddings[i], member_embeddings[j]);
  const double score = sum / static_cast<double>(pairs);
  return {score >= cfg.q_min && n >= cfg.min_cluster_size, score};
}

double ia_objective(const SynthesisResult& candidate, std::span<const Vector> member_embeddings,
                    const IAObjectiveWeights& w, const Embedder& embedder) {
  if (member_embeddings.empty()) throw Error(ErrorCode::validation, "objective needs a non-empty cluster");
  std::vector<double> omega = w.omega;
  if (omega.size() != member_embeddings.size()) omega.assign(member_embeddings.size(), 1.0);
  const double mass = std::accumulate(omega.begin(), omega.end(), 0.0);
  if (!(mass > 0.0)) throw Error(ErrorCode::validation, "omega must have positive mass");

  const Vector v = embedder.embed(candidate.ia_core_data);
  double relevance = 0.0;
  for (std::size_t i = 0; i < member_embeddings.size(); ++i)
    relevance += (omega[i] / mass) * cosine(v, member_embeddings[i]);
  return -relevance + w.lambda_comp * static_cast<double>(utf8_length(candidate.ia_core_data));
}

double decay_importance(double i0, const DecayParams& p, double dt_ms) {
  if (dt_ms < 0.0) throw Error(ErrorCode::validation, "decay interval is negative");
  if (!(i0 >= 0.0 && i0 <= 1.0)) throw Error(ErrorCode::out_of_range, "initial importance outside [0,1]");
  if (dt_ms == 0.0) return i0;
  return (i0 - p.i_base) * std::exp(-p.lambda_decay * dt_ms) + p.i_base;
}

double recalibrate_importance(const InsightParticle& p, std::span<const double> ia_link_strengths,
                              const RecalibrationCoeffs& c, std::size_t contradiction_flags, double extra_signal) {
  const double f = static_cast<double>(std::min(p.metrics.f_access, c.f_cap)) / static_cast<double>(c.f_cap);
  double link_mean = 0.0;
  if (!ia_link_strengths.empty())
    link_mean = std::accumulate(ia_link_strengths.begin(), ia_link_strengths.end(), 0.0) /
                static_cast<double>(ia_link_strengths.size());
  return clamp01(c.alpha * p.metrics.importance + c.beta * f + c.gamma * link_mean -
                 c.delta_contra * static_cast<double>(contradiction_flags) + extra_signal);
}

double current_importance(const InsightParticle& p, const DecayParams& decay, EpochMs now) {
  const auto dt = std::max<EpochMs>(0, now - p.metrics.last_recalibrated);
  return decay_importance(p.metrics.importance, decay, static_cast<double>(dt));
}

std::unordered_set<ParticleId> protected_particles(const RelationalGraph& graph,
                                                   const std::map<ParticleId, InsightParticle>& particles) {
  std::unordered_set<ParticleId> out;
  for (const auto& [id, p] : particles)
    if (p.is_aggregate()) out.insert(id);
  for (const auto& [sid, s] : graph.strands())
    if (s.type == StrandType::derivedFrom) out.insert(s.src);
  return out;
}

// --- layer-level operations ----------------------------------------------------

PreparedIA prepare_ia(const std::vector<const InsightParticle*>& constituents, std::span<const Vector> embeddings,
                      SemanticOracle& oracle, const Embedder& embedder, const RefinementConfig& cfg, EpochMs now,
                      std::uint64_t id_seed) {
  if (constituents.size() != embeddings.size())
    throw Error(ErrorCode::validation, "constituent and embedding counts differ");
  SynthesisRequest request;
  double importance_sum = 0.0;
  for (const auto* c : constituents) {
    request.constituents.push_back(
        {c->id, c->core_data, c->resonance_keys,
         TemporalSummary{c->temporal.t_create, c->temporal.t_event_start, c->temporal.t_event_end}});
    importance_sum += c->metrics.importance;
  }
  const SynthesisResult result = oracle.synthesize(request);
  if (normalize_whitespace(result.ia_core_data).empty())
    throw Error(ErrorCode::oracle_schema, "synthesized text is empty");

  PreparedIA ia;
  ia.embedding = embedder.embed(result.ia_core_data);
  ia.objective = ia_objective(result, embeddings, cfg.objective, embedder);

  auto& p = ia.particle;
  p.id = ParticleId::mint(now, id_seed);
  p.kind = ParticleKind::IA;
  p.core_data = result.ia_core_data;
  for (const auto& key : result.ia_resonance_keys) {
    std::string lower = key;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (!lower.empty()) p.resonance_keys.insert(lower);
  }
  if (p.resonance_keys.empty())
    for (auto& token : tokenize(result.ia_core_data)) p.resonance_keys.insert(std::move(token));
  p.signifiers = {Signifier::assertion};
  p.imprint.source = "refinement";
  p.imprint.agent_state["oracle"] = oracle.name();
  p.temporal = TemporalMetadata{now, now, now, std::nullopt, std::nullopt};
  p.metrics.importance =
      clamp01(importance_sum / static_cast<double>(constituents.size()) + cfg.ia_importance_bonus);
  p.metrics.last_recalibrated = now;
  if (auto violations = validate_particle(p); !violations.empty())
    throw Error(ErrorCode::validation, "synthesized aggregate is invalid: " + violations.front().detail);

  const double confidence = clamp01(result.confidence);
  for (std::size_t i = 0; i < constituents.size(); ++i)
    ia.provenance.emplace_back(constituents[i]->id, StrandEvidence{cosine(embeddings[i], ia.embedding), 0, confidence, 0});
  return ia;
}

void commit_ia(MemoryLayers& layers, const PreparedIA& ia, EpochMs now) {
  layers.add_particle(ia.particle, ia.embedding);
  try {
    for (const auto& [src, evidence] : ia.provenance)
      layers.add_strand(src, ia.particle.id, StrandType::derivedFrom, evidence, now);
  } catch (...) {
    layers.delete_particle(ia.particle.id, Cascade::strands_only);
    throw;
  }
}

InsightParticle synthesize_ia(MemoryLayers& layers, const Cluster& cluster, SemanticOracle& oracle,
                              const RefinementConfig& cfg, EpochMs now, std::uint64_t id_seed, double* objective_out) {
  std::vector<const InsightParticle*> constituents;
  std::vector<Vector> embeddings;
  for (const auto& id : cluster) {
    constituents.push_back(&layers.store.get(id));
    const auto v = layers.vectors.vector(id);
    embeddings.emplace_back(v.begin(), v.end());
  }
  auto ia = prepare_ia(constituents, embeddings, oracle, layers.embedder(), cfg, now, id_seed);
  commit_ia(layers, ia, now);
  if (objective_out) *objective_out = ia.objective;
  return ia.particle;
}

std::vector<ParticleId> prune(MemoryLayers& layers, double importance_floor, const DecayParams& decay, EpochMs now) {
  if (!(importance_floor >= 0.0 && importance_floor < 1.0))
    throw Error(ErrorCode::out_of_range, "importance floor outside [0,1)");
  const auto protect = protected_particles(layers.graph, layers.store.particles());
  std::vector<ParticleId> victims;
  for (const auto& [id, p] : layers.store.particles())
    if (!protect.count(id) && current_importance(p, decay, now) < importance_floor) victims.push_back(id);
  for (const auto& id : victims) layers.delete_particle(id, Cascade::strands_and_flag_ias);
  return victims;
}

// --- cycle phases --------------------------------------------------------------

CycleSnapshot capture(MemoryLayers& layers, EpochMs now) {
  CycleSnapshot snap;
  snap.now = now;
  layers.graph.flag_contradictions();
  snap.particles = layers.store.particles();
  for (const auto& [id, p] : snap.particles) {
    if (layers.vectors.contains(id)) {
      const auto v = layers.vectors.vector(id);
      snap.embeddings.emplace(id, Vector(v.begin(), v.end()));
    }
    if (const auto flags = layers.graph.flagged_contradictions(id)) snap.contradiction_flags[id] = flags;
  }
  for (const auto& [sid, s] : layers.graph.strands()) {
    snap.links[s.src].insert(s.dst);
    snap.links[s.dst].insert(s.src);
    if (s.type == StrandType::derivedFrom) snap.ia_link_strengths[s.src].push_back(s.strength);
  }
  for (const auto& [id, p] : snap.particles) {
    if (!p.is_aggregate() || p.is_stale()) continue;
    snap.covered.push_back(layers.graph.provenance(id));
  }
  snap.protected_ids = protected_particles(layers.graph, snap.particles);
  return snap;
}

RefinementPlan plan_refinement(const CycleSnapshot& snap, SemanticOracle& oracle, const Embedder& embedder,
                               const RefinementConfig& cfg, const IdSeedSource& next_seed) {
  const auto start = std::chrono::steady_clock::now();
  RefinementPlan plan;
  plan.now = snap.now;
  auto& report = plan.report;

  // Decay and recalibrate every importance. Particles already recalibrated at
  // this instant are left alone so that repeated cycles are stable.
  std::map<ParticleId, InsightParticle> current = snap.particles;
  for (auto& [id, p] : current) {
    if (p.metrics.last_recalibrated >= snap.now) continue;
    InsightParticle decayed = p;
    decayed.metrics.importance = current_importance(p, cfg.decay, snap.now);
    const auto links_it = snap.ia_link_strengths.find(id);
    const std::span<const double> links =
        links_it == snap.ia_link_strengths.end() ? std::span<const double>{} : std::span<const double>(links_it->second);
    const auto flags_it = snap.contradiction_flags.find(id);
    const std::size_t flags = flags_it == snap.contradiction_flags.end() ? 0 : flags_it->second;
    const double updated = recalibrate_importance(decayed, links, cfg.recalibration, flags);
    if (updated != p.metrics.importance) ++report.importances_changed;
    p.metrics.importance = updated;
    p.metrics.last_recalibrated = snap.now;
    plan.importance_updates.push_back({id, updated});
  }

  auto linked = [&](const ParticleId& a, const ParticleId& b) {
    const auto it = snap.links.find(a);
    return it != snap.links.end() && it->second.count(b) != 0;
  };

  std::vector<ClusterMember> members;
  for (const auto& [id, p] : current) {
    if (p.is_aggregate() || p.is_stale()) continue;
    const auto e = snap.embeddings.find(id);
    if (e == snap.embeddings.end()) continue;
    members.push_back({id, e->second, p.temporal.t_create});
  }
  const auto clusters = identify_clusters(members, linked, cfg.cluster);

  std::unordered_set<ParticleId> new_constituents;
  for (const auto& cluster : clusters) {
    ++report.clusters_considered;
    std::vector<Vector> embeddings;
    std::vector<const InsightParticle*> constituents;
    for (const auto& id : cluster) {
      embeddings.push_back(snap.embeddings.at(id));
      constituents.push_back(&current.at(id));
    }
    if (!cluster_quality(embeddings, cfg.cluster).accept) continue;
    ++report.clusters_accepted;
    const bool covered = std::any_of(snap.covered.begin(), snap.covered.end(),
                                     [&](const auto& prov) { return contains_all(prov, cluster); });
    if (covered) {
      ++report.clusters_skipped_covered;
      continue;
    }
    try {
      auto ia = prepare_ia(constituents, embeddings, oracle, embedder, cfg, snap.now, next_seed());
      report.ia_objectives.push_back({ia.particle.id, ia.objective});
      new_constituents.insert(cluster.begin(), cluster.end());
      plan.new_ias.push_back(std::move(ia));
    } catch (const std::exception& e) {
      report.errors.push_back("synthesis for cluster at " + cluster.front().str() + " failed: " + e.what());
    }
  }

  // Top-K most similar unlinked pairs among non-stale particles.
  struct Pair {
    double sim;
    ParticleId a;
    ParticleId b;
  };
  auto better = [](const Pair& x, const Pair& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  };
  std::priority_queue<Pair, std::vector<Pair>, decltype(better)> top(better);
  if (cfg.suggest_top_k > 0) {
    std::vector<std::pair<ParticleId, const Vector*>> pool;
    for (const auto& [id, p] : current) {
      if (p.is_stale()) continue;
      if (const auto e = snap.embeddings.find(id); e != snap.embeddings.end()) pool.emplace_back(id, &e->second);
    }
    for (std::size_t i = 0; i < pool.size(); ++i) {
      for (std::size_t j = i + 1; j < pool.size(); ++j) {
        if (linked(pool[i].first, pool[j].first)) continue;
        Pair candidate{cosine(*pool[i].second, *pool[j].second), pool[i].first, pool[j].first};
        if (top.size() < cfg.suggest_top_k) {
          top.push(candidate);
        } else if (better(candidate, top.top())) {
          top.pop();
          top.push(candidate);
        }
      }
    }
  }
  std::vector<Pair> pairs;
  while (!top.empty()) {
    pairs.push_back(top.top());
    top.pop();
  }
  std::sort(pairs.begin(), pairs.end(), better);

  auto view_of = [&](const ParticleId& id) {
    const auto& p = current.at(id);
    return ParticleView{id, p.core_data, p.resonance_keys, snap.embeddings.at(id)};
  };
  auto common_neighbors = [&](const ParticleId& a, const ParticleId& b) -> std::uint64_t {
    const auto ia = snap.links.find(a);
    const auto ib = snap.links.find(b);
    if (ia == snap.links.end() || ib == snap.links.end()) return 0;
    std::uint64_t n = 0;
    for (const auto& x : ia->second) n += ib->second.count(x);
    return n;
  };
  for (const auto& pair : pairs) {
    try {
      const auto suggestion = oracle.suggest_relation(view_of(pair.a), view_of(pair.b));
      if (!suggestion) continue;
      plan.suggestions.push_back({pair.a, pair.b, suggestion->type,
                                  StrandEvidence{pair.sim, 0, clamp01(suggestion->confidence),
                                                 common_neighbors(pair.a, pair.b)}});
    } catch (const std::exception& e) {
      report.errors.push_back("relation suggestion for " + pair.a.str() + "/" + pair.b.str() + " failed: " + e.what());
    }
  }

  for (const auto& [id, p] : current) {
    if (p.is_aggregate() || snap.protected_ids.count(id) || new_constituents.count(id)) continue;
    if (current_importance(p, cfg.decay, snap.now) < cfg.prune_floor) plan.prune.push_back(id);
  }

  report.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return plan;
}

RefinementReport commit_plan(MemoryLayers& layers, const RefinementPlan& plan) {
  const auto start = std::chrono::steady_clock::now();
  RefinementReport report = plan.report;

  for (const auto& update : plan.importance_updates) {
    const auto* live = layers.store.find(update.id);
    if (!live) continue;
    InsightParticle p = *live;
    p.metrics.importance = update.importance;
    p.metrics.last_recalibrated = std::max(p.metrics.last_recalibrated, plan.now);
    if (p != *live) layers.update_particle(p);
  }

  for (const auto& ia : plan.new_ias) {
    const bool intact = std::all_of(ia.provenance.begin(), ia.provenance.end(),
                                    [&](const auto& entry) { return layers.store.contains(entry.first); });
    if (!intact || layers.store.contains(ia.particle.id)) {
      report.errors.push_back("aggregate " + ia.particle.id.str() + " dropped: constituents changed during the cycle");
      continue;
    }
    try {
      commit_ia(layers, ia, plan.now);
      report.ias_created.push_back(ia.particle.id);
      report.strands_added += ia.provenance.size();
    } catch (const std::exception& e) {
      report.errors.push_back("storing aggregate " + ia.particle.id.str() + " failed: " + e.what());
    }
  }
  std::erase_if(report.ia_objectives, [&](const IAObjectiveRecord& r) {
    return std::find(report.ias_created.begin(), report.ias_created.end(), r.ia) == report.ias_created.end();
  });

  for (const auto& s : plan.suggestions) {
    if (!layers.store.contains(s.src) || !layers.store.contains(s.dst) || layers.graph.linked(s.src, s.dst)) continue;
    try {
      layers.add_strand(s.src, s.dst, s.type, s.evidence, plan.now);
      ++report.strands_added;
    } catch (const std::exception& e) {
      report.errors.push_back("suggested strand " + s.src.str() + "->" + s.dst.str() + " failed: " + e.what());
    }
  }

  for (const auto& id : plan.prune) {
    if (!layers.store.contains(id)) continue;
    layers.delete_particle(id, Cascade::strands_and_flag_ias);
    report.particles_pruned.push_back(id);
  }

  report.wall_time_ms +=
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

RefinementReport refinement_cycle(MemoryLayers& layers, SemanticOracle& oracle, const RefinementConfig& cfg,
                                  EpochMs now, const IdSeedSource& next_seed) {
  const auto snapshot = capture(layers, now);
  const auto plan = plan_refinement(snapshot, oracle, layers.embedder(), cfg, next_seed);
  return commit_plan(layers, plan);
}

}  // namespace cweave
