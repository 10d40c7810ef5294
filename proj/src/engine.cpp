#include "cweave/engine.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <thread>
#include <unordered_set>

namespace cweave {

namespace {

// Reads an object's keys into fields and rejects keys it did not consume.
class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw Error(ErrorCode::config, context_ + " must be a JSON object");
  }

  template <class T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::config, context_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void read_optional(const char* key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T value{};
    try {
      value = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::config, context_ + "." + key + ": " + e.what());
    }
    out = std::move(value);
  }

  const Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw Error(ErrorCode::config, "unknown configuration key " + context_ + "." + key);
  }

 private:
  const Json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

std::optional<std::filesystem::path> to_path(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return std::filesystem::path(*s);
}

Json path_json(const std::optional<std::filesystem::path>& p) { return p ? Json(p->string()) : Json(nullptr); }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  return splitmix64(state);
}

template <class T>
T parse_field(const Json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::validation, std::string(what) + "." + key + " is missing or has the wrong type");
  }
}

}  // namespace

// --- configuration -------------------------------------------------------------

void EngineConfig::validate() const {
  if (embedding_dimension == 0) throw Error(ErrorCode::config, "embedding_dimension must be positive");
  ann.validate();
  strand_weights.validate();
  refinement.validate();
  triggers.validate();
  if (!(similarity_weight >= 0.0 && similarity_weight <= 1.0))
    throw Error(ErrorCode::config, "similarity_weight must lie in [0,1]");
  if (!(initial_importance >= 0.0 && initial_importance <= 1.0))
    throw Error(ErrorCode::config, "initial_importance must lie in [0,1]");
  if (write_lock_timeout_ms < 0) throw Error(ErrorCode::config, "write_lock_timeout_ms must be non-negative");
  if (oracle.kind != "mock" && oracle.kind != "remote")
    throw Error(ErrorCode::config, "oracle.kind must be \"mock\" or \"remote\"");
  if (oracle.max_core_chars == 0 || oracle.max_keys == 0)
    throw Error(ErrorCode::config, "oracle limits must be positive");
  if (service.port < 0 || service.port > 65535) throw Error(ErrorCode::config, "service.port out of range");
}

EngineConfig EngineConfig::from_json(const Json& j) {
  EngineConfig c;
  ConfigReader top(j, "config");
  top.read("seed", c.seed);
  std::optional<std::string> data_dir, audit_log;
  top.read_optional("data_dir", data_dir);
  top.read_optional("audit_log_path", audit_log);
  c.data_dir = to_path(data_dir);
  c.audit_log_path = to_path(audit_log);
  top.read("fsync", c.fsync);
  top.read("embedding_dimension", c.embedding_dimension);
  top.read("similarity_weight", c.similarity_weight);
  top.read("initial_importance", c.initial_importance);
  top.read("write_lock_timeout_ms", c.write_lock_timeout_ms);
  top.read("exact_candidate_limit", c.exact_candidate_limit);

  if (const Json* a = top.child("ann")) {
    ConfigReader r(*a, "ann");
    r.read("max_neighbors_per_node", c.ann.max_neighbors_per_node);
    r.read("ef_construction", c.ann.ef_construction);
    r.read("ef_search", c.ann.ef_search);
    r.finish();
  }
  if (const Json* w = top.child("strand_weights")) {
    ConfigReader r(*w, "strand_weights");
    r.read("theta1", c.strand_weights.theta1);
    r.read("theta2", c.strand_weights.theta2);
    r.read("theta3", c.strand_weights.theta3);
    r.read("theta4", c.strand_weights.theta4);
    r.read("bias", c.strand_weights.bias);
    r.finish();
  }
  if (const Json* cl = top.child("cluster")) {
    ConfigReader r(*cl, "cluster");
    auto& x = c.refinement.cluster;
    r.read("tau_cluster", x.tau_cluster);
    r.read("w_sem", x.w_sem);
    r.read("w_rel", x.w_rel);
    r.read("w_temp", x.w_temp);
    r.read("sigma_t_ms", x.sigma_t_ms);
    r.read("min_cluster_size", x.min_cluster_size);
    r.read("q_min", x.q_min);
    r.finish();
  }
  if (const Json* t = top.child("triggers")) {
    ConfigReader r(*t, "triggers");
    r.read("period_ms", c.triggers.period_ms);
    r.read("ingest_count_threshold", c.triggers.ingest_count_threshold);
    r.read("fragmentation_threshold", c.triggers.fragmentation_threshold);
    r.finish();
  }
  if (const Json* o = top.child("objective")) {
    ConfigReader r(*o, "objective");
    r.read("omega", c.refinement.objective.omega);
    r.read("lambda_comp", c.refinement.objective.lambda_comp);
    r.finish();
  }
  if (const Json* rc = top.child("recalibration")) {
    ConfigReader r(*rc, "recalibration");
    auto& x = c.refinement.recalibration;
    r.read("alpha", x.alpha);
    r.read("beta", x.beta);
    r.read("gamma", x.gamma);
    r.read("f_cap", x.f_cap);
    r.read("delta_contra", x.delta_contra);
    r.finish();
  }
  if (const Json* d = top.child("decay")) {
    ConfigReader r(*d, "decay");
    r.read("lambda_decay", c.refinement.decay.lambda_decay);
    r.read("i_base", c.refinement.decay.i_base);
    r.finish();
  }
  if (const Json* rf = top.child("refinement")) {
    ConfigReader r(*rf, "refinement");
    r.read("prune_floor", c.refinement.prune_floor);
    r.read("suggest_top_k", c.refinement.suggest_top_k);
    r.read("ia_importance_bonus", c.refinement.ia_importance_bonus);
    r.finish();
  }
  if (const Json* o = top.child("oracle")) {
    ConfigReader r(*o, "oracle");
    r.read("kind", c.oracle.kind);
    r.read("max_core_chars", c.oracle.max_core_chars);
    r.read("max_keys", c.oracle.max_keys);
    r.finish();
  }
  if (const Json* s = top.child("service")) {
    ConfigReader r(*s, "service");
    r.read("host", c.service.host);
    r.read("port", c.service.port);
    r.read_optional("bearer_token", c.service.bearer_token);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

EngineConfig EngineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::config, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

Json EngineConfig::to_json() const {
  const auto& cl = refinement.cluster;
  const auto& rc = refinement.recalibration;
  return Json{
      {"seed", seed},
      {"data_dir", path_json(data_dir)},
      {"fsync", fsync},
      {"audit_log_path", path_json(audit_log_path)},
      {"embedding_dimension", embedding_dimension},
      {"similarity_weight", similarity_weight},
      {"initial_importance", initial_importance},
      {"write_lock_timeout_ms", write_lock_timeout_ms},
      {"exact_candidate_limit", exact_candidate_limit},
      {"ann",
       {{"max_neighbors_per_node", ann.max_neighbors_per_node},
        {"ef_construction", ann.ef_construction},
        {"ef_search", ann.ef_search}}},
      {"strand_weights",
       {{"theta1", strand_weights.theta1},
        {"theta2", strand_weights.theta2},
        {"theta3", strand_weights.theta3},
        {"theta4", strand_weights.theta4},
        {"bias", strand_weights.bias}}},
      {"cluster",
       {{"tau_cluster", cl.tau_cluster},
        {"w_sem", cl.w_sem},
        {"w_rel", cl.w_rel},
        {"w_temp", cl.w_temp},
        {"sigma_t_ms", cl.sigma_t_ms},
        {"min_cluster_size", cl.min_cluster_size},
        {"q_min", cl.q_min}}},
      {"triggers",
       {{"period_ms", triggers.period_ms},
        {"ingest_count_threshold", triggers.ingest_count_threshold},
        {"fragmentation_threshold", triggers.fragmentation_threshold}}},
      {"objective", {{"omega", refinement.objective.omega}, {"lambda_comp", refinement.objective.lambda_comp}}},
      {"recalibration",
       {{"alpha", rc.alpha}, {"beta", rc.beta}, {"gamma", rc.gamma}, {"f_cap", rc.f_cap},
        {"delta_contra", rc.delta_contra}}},
      {"decay", {{"lambda_decay", refinement.decay.lambda_decay}, {"i_base", refinement.decay.i_base}}},
      {"refinement",
       {{"prune_floor", refinement.prune_floor},
        {"suggest_top_k", refinement.suggest_top_k},
        {"ia_importance_bonus", refinement.ia_importance_bonus}}},
      {"oracle", {{"kind", oracle.kind}, {"max_core_chars", oracle.max_core_chars}, {"max_keys", oracle.max_keys}}},
      {"service",
       {{"host", service.host},
        {"port", service.port},
        {"bearer_token", service.bearer_token ? Json(*service.bearer_token) : Json(nullptr)}}},
  };
}

// --- query types ---------------------------------------------------------------

void QuerySpec::validate() const {
  if (!text && !time_window) throw Error(ErrorCode::validation, "query needs text or a time_window");
  if (k == 0) throw Error(ErrorCode::validation, "k must be positive");
  if (time_window && time_window->lo > time_window->hi)
    throw Error(ErrorCode::inverted_range, "time_window.lo is after time_window.hi");
  if (!(min_importance >= 0.0 && min_importance <= 1.0))
    throw Error(ErrorCode::validation, "min_importance must lie in [0,1]");
  if (graph_expand) {
    if (graph_expand->max_depth == 0) throw Error(ErrorCode::validation, "graph_expand.max_depth must be positive");
    if (!(graph_expand->min_strength >= 0.0 && graph_expand->min_strength <= 1.0))
      throw Error(ErrorCode::validation, "graph_expand.min_strength must lie in [0,1]");
  }
}

QuerySpec QuerySpec::from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::validation, "query must be a JSON object");
  static const std::set<std::string> known{"text",           "time_window", "k",       "graph_expand",
                                           "min_importance", "use_ann",     "user_tag"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::validation, "unknown query field '" + key + "'");

  QuerySpec q;
  auto present = [&](const char* key) { return j.contains(key) && !j.at(key).is_null(); };
  if (present("text")) q.text = parse_field<std::string>(j, "text", "query");
  if (present("time_window")) {
    const auto& w = j.at("time_window");
    if (!w.is_object()) throw Error(ErrorCode::validation, "query.time_window must be an object");
    TimeWindow tw;
    const auto field = parse_field<std::string>(w, "field", "time_window");
    const auto parsed = parse_temporal_field(field);
    if (!parsed) throw Error(ErrorCode::validation, "unknown temporal field '" + field + "'");
    tw.field = *parsed;
    tw.lo = parse_field<EpochMs>(w, "lo", "time_window");
    tw.hi = parse_field<EpochMs>(w, "hi", "time_window");
    q.time_window = tw;
  }
  if (present("k")) {
    const auto k = parse_field<std::int64_t>(j, "k", "query");
    if (k < 1) throw Error(ErrorCode::validation, "k must be positive");
    q.k = static_cast<std::size_t>(k);
  }
  if (present("graph_expand")) {
    const auto& g = j.at("graph_expand");
    if (!g.is_object()) throw Error(ErrorCode::validation, "query.graph_expand must be an object");
    GraphExpand ge;
    if (g.contains("max_depth")) {
      const auto depth = parse_field<std::int64_t>(g, "max_depth", "graph_expand");
      if (depth < 1) throw Error(ErrorCode::validation, "graph_expand.max_depth must be positive");
      ge.max_depth = static_cast<std::size_t>(depth);
    }
    if (g.contains("type_filter") && !g.at("type_filter").is_null()) {
      const auto name = parse_field<std::string>(g, "type_filter", "graph_expand");
      ge.type_filter = parse_strand_type(name);
      if (!ge.type_filter) throw Error(ErrorCode::validation, "unknown strand type '" + name + "'");
    }
    if (g.contains("min_strength")) ge.min_strength = parse_field<double>(g, "min_strength", "graph_expand");
    q.graph_expand = ge;
  }
  if (present("min_importance")) q.min_importance = parse_field<double>(j, "min_importance", "query");
  if (present("use_ann")) q.use_ann = parse_field<bool>(j, "use_ann", "query");
  if (present("user_tag")) q.user_tag = parse_field<std::string>(j, "user_tag", "query");
  q.validate();
  return q;
}

Json QuerySpec::to_json() const {
  Json j{{"text", text ? Json(*text) : Json(nullptr)},
         {"time_window", nullptr},
         {"k", k},
         {"graph_expand", nullptr},
         {"min_importance", min_importance},
         {"use_ann", use_ann},
         {"user_tag", user_tag ? Json(*user_tag) : Json(nullptr)}};
  if (time_window)
    j["time_window"] = {{"field", to_string(time_window->field)}, {"lo", time_window->lo}, {"hi", time_window->hi}};
  if (graph_expand)
    j["graph_expand"] = {
        {"max_depth", graph_expand->max_depth},
        {"type_filter", graph_expand->type_filter ? Json(to_string(*graph_expand->type_filter)) : Json(nullptr)},
        {"min_strength", graph_expand->min_strength}};
  return j;
}

Json RecallResult::to_json() const {
  Json arr = Json::array();
  for (const auto& h : hits) {
    Json path = nullptr;
    if (h.provenance_path) {
      path = Json::array();
      for (const auto& s : *h.provenance_path) path.push_back(s.str());
    }
    arr.push_back({{"id", h.id.str()}, {"relevance", h.relevance}, {"provenance_path", path}});
  }
  return Json{{"hits", arr}, {"snapshot_seq", snapshot_seq}, {"latency_ms", latency_ms}};
}

double EngineStats::fragmentation() const {
  if (ip_count == 0) return 0.0;
  return static_cast<double>(ips_outside_provenance) / static_cast<double>(ip_count);
}

Json EngineStats::to_json() const {
  return Json{{"particle_count", particle_count},
              {"ia_count", ia_count},
              {"ip_count", ip_count},
              {"strand_count", strand_count},
              {"index_sizes",
               {{"store", particle_count},
                {"vector", vector_index_size},
                {"temporal", temporal_index_size},
                {"graph_nodes", graph_node_count}}},
              {"fragmentation", fragmentation()},
              {"last_refinement", last_refinement},
              {"ingests_since_refinement", ingests_since_refinement},
              {"log_seq", log_seq},
              {"index_rebuild_ms", index_rebuild_ms}};
}

TriggerDecision should_refine(const EngineStats& stats, const RefinementTriggers& triggers, EpochMs now) {
  if (now - stats.last_refinement >= triggers.period_ms) return {true, "period"};
  if (stats.ingests_since_refinement >= triggers.ingest_count_threshold) return {true, "ingest_count"};
  if (stats.ip_count > 0 && stats.fragmentation() >= triggers.fragmentation_threshold)
    return {true, "fragmentation"};
  return {false, ""};
}

Json to_json(const std::vector<AuditViolation>& violations) {
  Json arr = Json::array();
  for (const auto& v : violations) arr.push_back({{"kind", v.kind}, {"detail", v.detail}});
  return arr;
}

std::shared_ptr<SemanticOracle> make_oracle(const EngineConfig& config, std::shared_ptr<const Embedder> embedder) {
  if (config.oracle.kind == "remote") {
    auto rc = RemoteOracleConfig::from_env();
    rc.max_core_chars = config.oracle.max_core_chars;
    rc.min_cluster_size = config.refinement.cluster.min_cluster_size;
    return std::make_shared<RemoteOracle>(rc);
  }
  MockOracleConfig mc;
  mc.max_core_chars = config.oracle.max_core_chars;
  mc.max_keys = config.oracle.max_keys;
  mc.min_cluster_size = config.refinement.cluster.min_cluster_size;
  return std::make_shared<MockOracle>(std::move(embedder), mc);
}

// --- engine --------------------------------------------------------------------

Engine::Engine(EngineConfig config, std::shared_ptr<SemanticOracle> oracle, std::shared_ptr<const Embedder> embedder)
    : config_(std::move(config)), embedder_(std::move(embedder)), oracle_(std::move(oracle)) {
  config_.validate();
  if (!embedder_) embedder_ = std::make_shared<DeterministicEmbedder>(config_.embedding_dimension);
  if (embedder_->dimension() != config_.embedding_dimension)
    throw Error(ErrorCode::config, "embedder dimension does not match embedding_dimension");
  if (!oracle_) oracle_ = make_oracle(config_, embedder_);

  ParticleStore store;
  if (config_.data_dir) {
    std::filesystem::create_directories(*config_.data_dir);
    store = ParticleStore::open(
        {*config_.data_dir / "strg.log", *config_.data_dir / "strg.snap", config_.fsync});
  }
  seed_salt_ = mix_seed(config_.seed, store.seq());
  const auto start = std::chrono::steady_clock::now();
  layers_ = std::make_unique<MemoryLayers>(embedder_, config_.ann, config_.strand_weights, config_.seed,
                                           std::move(store));
  rebuild_ms_ = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  load_meta();
}

Engine::~Engine() {
  try {
    save_meta();
  } catch (...) {
  }
}

std::unique_lock<std::timed_mutex> Engine::acquire_writer() {
  std::unique_lock lock(writer_, std::defer_lock);
  if (!lock.try_lock_for(std::chrono::milliseconds(config_.write_lock_timeout_ms)))
    throw Error(ErrorCode::write_lock_timeout, "timed out waiting for the writer lock");
  return lock;
}

std::uint64_t Engine::next_seed() { return mix_seed(seed_salt_, ++seed_counter_); }

ParticleId Engine::mint_particle_id(EpochMs now) {
  for (;;) {
    auto id = ParticleId::mint(now, next_seed());
    if (!layers_->store.contains(id)) return id;
  }
}

void Engine::load_meta() {
  if (!config_.data_dir) return;
  std::ifstream in(*config_.data_dir / "engine_meta.json");
  if (!in) return;
  try {
    const auto j = Json::parse(in);
    last_refinement_ = j.value("last_refinement", EpochMs{0});
    ingests_since_refinement_ = j.value("ingests_since_refinement", std::uint64_t{0});
    refined_or_started_ = j.value("started", false);
  } catch (const Json::exception&) {
    // A damaged metadata file only resets the refinement schedule.
  }
}

void Engine::save_meta() const {
  if (!config_.data_dir) return;
  const auto path = *config_.data_dir / "engine_meta.json";
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << Json{{"last_refinement", last_refinement_},
                {"ingests_since_refinement", ingests_since_refinement_},
                {"started", refined_or_started_}}
               .dump();
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void Engine::append_audit_log(const RefinementReport& report, EpochMs now) const {
  if (!config_.audit_log_path) return;
  std::ofstream out(*config_.audit_log_path, std::ios::app);
  Json line = to_json(report);
  line["now"] = now;
  out << line.dump() << '\n';
  if (!out) throw Error(ErrorCode::io, "cannot append to audit log " + config_.audit_log_path->string());
}

ParticleId Engine::ingest(std::string_view raw, const SituationalImprint& imprint, EpochMs now,
                          std::optional<EventWindow> event) {
  if (normalize_whitespace(raw).empty()) throw Error(ErrorCode::empty_input, "raw input is empty");
  if (event && event->start > event->end) throw Error(ErrorCode::validation, "event start is after event end");
  auto writer = acquire_writer();

  const auto out = oracle_->transform(raw, imprint);

  InsightParticle p;
  p.core_data = out.core_data;
  p.resonance_keys = out.resonance_keys;
  p.signifiers = out.signifiers;
  p.imprint = imprint;
  for (const auto& [key, value] : out.imprint_enrichment) p.imprint.agent_state.emplace(key, value);
  p.temporal = TemporalMetadata{now, now, now, std::nullopt, std::nullopt};
  if (event) {
    p.temporal.t_event_start = event->start;
    p.temporal.t_event_end = event->end;
  }
  p.metrics = AccessMetrics{0, config_.initial_importance, now};
  p.kind = ParticleKind::IP;
  if (auto violations = validate_particle(p); !violations.empty())
    throw Error(ErrorCode::validation, violations.front().rule + ": " + violations.front().detail);
  auto vector = embedder_->embed(p.core_data);

  std::unique_lock state(state_);
  p.id = mint_particle_id(now);
  layers_->add_particle(p, std::move(vector));
  ++ingests_since_refinement_;
  if (!refined_or_started_) {
    refined_or_started_ = true;
    last_refinement_ = now;
  }
  return p.id;
}

InsightParticle Engine::get(const ParticleId& id) const {
  std::shared_lock state(state_);
  return layers_->store.get(id);
}

DeletionReport Engine::remove(const ParticleId& id, Cascade cascade) {
  auto writer = acquire_writer();
  std::unique_lock state(state_);
  if (cascade == Cascade::strands_only) {
    // Dropping a constituent must not leave an unflagged aggregate below the provenance minimum.
    const auto min_size = config_.refinement.cluster.min_cluster_size;
    for (const auto& [sid, s] : layers_->graph.strands()) {
      if (s.type != StrandType::derivedFrom || s.src != id) continue;
      const auto* ia = layers_->store.find(s.dst);
      if (ia && !ia->is_stale() && layers_->graph.provenance(s.dst).size() <= min_size) {
        cascade = Cascade::strands_and_flag_ias;
        break;
      }
    }
  }
  return layers_->delete_particle(id, cascade);
}

RelationalStrand Engine::link(const ParticleId& src, const ParticleId& dst, StrandType type,
                              const StrandEvidence& evidence, EpochMs now) {
  validate_evidence(evidence);
  auto writer = acquire_writer();
  std::unique_lock state(state_);
  return layers_->add_strand(src, dst, type, evidence, now);
}

RelationalStrand Engine::link(const ParticleId& src, const ParticleId& dst, StrandType type, double confidence,
                              EpochMs now) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw Error(ErrorCode::out_of_range, "confidence outside [0,1]");
  auto writer = acquire_writer();
  std::unique_lock state(state_);
  for (const auto& id : {src, dst})
    if (!layers_->store.contains(id)) throw Error(ErrorCode::not_found, "particle " + id.str() + " not found");
  StrandEvidence ev;
  if (src != dst) ev.sim = cosine(layers_->vectors.vector(src), layers_->vectors.vector(dst));
  ev.conf_soi = confidence;
  ev.common_neighbors = layers_->graph.common_neighbors(src, dst);
  return layers_->add_strand(src, dst, type, ev, now);
}

RecallResult Engine::query(const QuerySpec& spec, EpochMs now) {
  spec.validate();
  const auto started = std::chrono::steady_clock::now();
  RecallResult result;
  std::optional<Vector> qvec;
  if (spec.text) qvec = embedder_->embed(*spec.text);

  {
    std::shared_lock state(state_);
    const auto& layers = *layers_;
    const auto& store = layers.store;
    const auto& decay = config_.refinement.decay;
    result.snapshot_seq = store.seq();

    auto tag_ok = [&](const InsightParticle& p) { return !spec.user_tag || p.imprint.user_tag == spec.user_tag; };
    auto importance_of = [&](const ParticleId& id) { return current_importance(store.get(id), decay, now); };

    // Stage 1: temporal prefilter. nullopt means "every particle".
    std::optional<std::vector<ParticleId>> candidates;
    if (spec.time_window) {
      auto ids = layers.temporal.range_query(spec.time_window->field, spec.time_window->lo, spec.time_window->hi);
      if (spec.user_tag) std::erase_if(ids, [&](const ParticleId& id) { return !tag_ok(store.get(id)); });
      candidates = std::move(ids);
    } else if (spec.user_tag) {
      std::vector<ParticleId> ids;
      for (const auto& [id, p] : store.particles())
        if (tag_ok(p)) ids.push_back(id);
      candidates = std::move(ids);
    }

    // Stage 2: semantic ranking, or importance ranking without text.
    std::vector<RecallHit> direct;
    if (qvec) {
      if (layers.vectors.size() == 0) throw Error(ErrorCode::empty_index, "vector index is empty");
      std::vector<KnnHit> knn;
      if (!candidates) {
        knn = spec.use_ann ? layers.vectors.knn_ann(*qvec, spec.k) : layers.vectors.knn_exact(*qvec, spec.k);
      } else if (!spec.use_ann || candidates->size() <= config_.exact_candidate_limit) {
        knn = layers.vectors.knn_exact_among(*qvec, spec.k, *candidates);
      } else {
        const std::unordered_set<ParticleId> allowed(candidates->begin(), candidates->end());
        knn = layers.vectors.knn_ann(*qvec, spec.k, config_.ann,
                                     [&](const ParticleId& id) { return allowed.count(id) != 0; });
      }
      const double w = config_.similarity_weight;
      for (const auto& h : knn) direct.push_back({h.id, w * h.score + (1.0 - w) * importance_of(h.id), std::nullopt});
    } else {
      const auto& ids = *candidates;
      direct.reserve(ids.size());
      for (const auto& id : ids) direct.push_back({id, importance_of(id), std::nullopt});
    }
    auto by_relevance = [](const RecallHit& a, const RecallHit& b) {
      if (a.relevance != b.relevance) return a.relevance > b.relevance;
      return a.id < b.id;
    };
    if (direct.size() > spec.k) {
      std::partial_sort(direct.begin(), direct.begin() + static_cast<std::ptrdiff_t>(spec.k), direct.end(),
                        by_relevance);
      direct.resize(spec.k);
    } else {
      std::sort(direct.begin(), direct.end(), by_relevance);
    }

    // Stage 3: graph expansion, keeping the best relevance per particle.
    std::vector<RecallHit> merged = direct;
    if (spec.graph_expand) {
      std::map<ParticleId, std::size_t> position;
      for (std::size_t i = 0; i < merged.size(); ++i) position.emplace(merged[i].id, i);
      const StrandFilter filter{spec.graph_expand->type_filter, spec.graph_expand->min_strength};
      for (const auto& hit : direct) {
        for (const auto& path : layers.graph.traverse(hit.id, spec.graph_expand->max_depth, filter)) {
          const double relevance = hit.relevance * path.strength;
          auto [it, inserted] = position.emplace(path.end, merged.size());
          if (inserted) {
            merged.push_back({path.end, relevance, path.strands});
          } else if (relevance > merged[it->second].relevance) {
            merged[it->second].relevance = relevance;
            merged[it->second].provenance_path = path.strands;
          }
        }
      }
    }

    if (spec.min_importance > 0.0)
      std::erase_if(merged, [&](const RecallHit& h) { return importance_of(h.id) < spec.min_importance; });
    std::sort(merged.begin(), merged.end(), by_relevance);
    result.hits = std::move(merged);
  }

  if (!result.hits.empty()) {
    std::unique_lock state(state_);
    std::erase_if(result.hits, [&](const RecallHit& h) { return !layers_->store.contains(h.id); });
    for (const auto& h : result.hits) {
      const auto& p = layers_->store.get(h.id);
      layers_->update_particle(touch_access(p, std::max(now, p.temporal.t_access)));
    }
  }
  result.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

RefinementReport Engine::refine(EpochMs now) {
  auto writer = acquire_writer();
  CycleSnapshot snapshot;
  {
    std::unique_lock state(state_);
    snapshot = capture(*layers_, now);
  }
  const auto plan =
      plan_refinement(snapshot, *oracle_, *embedder_, config_.refinement, [this] { return next_seed(); });
  RefinementReport report;
  {
    std::unique_lock state(state_);
    report = commit_plan(*layers_, plan);
    last_refinement_ = now;
    refined_or_started_ = true;
    ingests_since_refinement_ = 0;
  }
  append_audit_log(report, now);
  save_meta();
  return report;
}

std::optional<RefinementReport> Engine::maybe_refine(EpochMs now) {
  {
    std::shared_lock state(state_);
    if (!refined_or_started_) return std::nullopt;
  }
  if (!should_refine(stats(), config_.triggers, now).refine) return std::nullopt;
  return refine(now);
}

EngineStats Engine::stats() const {
  std::shared_lock state(state_);
  const auto& layers = *layers_;
  EngineStats s;
  s.particle_count = layers.store.size();
  s.strand_count = layers.graph.strand_count();
  s.vector_index_size = layers.vectors.size();
  s.temporal_index_size = layers.temporal.size();
  s.graph_node_count = layers.graph.node_count();
  s.last_refinement = last_refinement_;
  s.ingests_since_refinement = ingests_since_refinement_;
  s.log_seq = layers.store.seq();
  s.index_rebuild_ms = rebuild_ms_;
  std::unordered_set<ParticleId> covered;
  for (const auto& [sid, strand] : layers.graph.strands())
    if (strand.type == StrandType::derivedFrom) covered.insert(strand.src);
  for (const auto& [id, p] : layers.store.particles()) {
    if (p.is_aggregate()) {
      ++s.ia_count;
    } else {
      ++s.ip_count;
      if (!covered.count(id)) ++s.ips_outside_provenance;
    }
  }
  return s;
}

std::vector<AuditViolation> Engine::audit() const {
  std::shared_lock state(state_);
  const auto& layers = *layers_;
  const auto& store = layers.store;
  std::vector<AuditViolation> out;
  auto report = [&](std::string kind, std::string detail) { out.push_back({std::move(kind), std::move(detail)}); };

  for (const auto& [id, p] : store.particles())
    for (const auto& v : validate_particle(p)) report("particle invariant", id.str() + ": " + v.detail);

  // Strands: a dangling endpoint is reported once, as a referential fault;
  // otherwise the graph and store copies must agree.
  std::set<StrandId> strand_ids;
  for (const auto& [sid, s] : store.strands()) strand_ids.insert(sid);
  for (const auto& [sid, s] : layers.graph.strands()) strand_ids.insert(sid);
  for (const auto& sid : strand_ids) {
    const auto* in_store = store.find_strand(sid);
    const auto* in_graph = layers.graph.find_strand(sid);
    bool dangling = false;
    for (const auto* s : {in_store, in_graph}) {
      if (s && (!store.contains(s->src) || !store.contains(s->dst))) dangling = true;
    }
    if (dangling) {
      report("referential", "strand " + sid.str() + " references a particle missing from the store");
    } else if (!in_store || !in_graph || !(*in_store == *in_graph)) {
      report("strand membership", "strand " + sid.str() + " differs between the graph and the store");
    }
  }

  auto membership = [&](const std::string& layer, auto&& has, const std::vector<ParticleId>& layer_ids) {
    for (const auto& [id, p] : store.particles())
      if (!has(id)) report("membership", layer + " is missing particle " + id.str());
    for (const auto& id : layer_ids)
      if (!store.contains(id)) report("membership", layer + " holds unknown particle " + id.str());
  };
  membership("vector index", [&](const ParticleId& id) { return layers.vectors.contains(id); }, layers.vectors.ids());
  membership("temporal index", [&](const ParticleId& id) { return layers.temporal.contains(id); },
             layers.temporal.ids());
  std::vector<ParticleId> graph_ids;
  for (const auto& [id, kind] : layers.graph.nodes()) graph_ids.push_back(id);
  std::sort(graph_ids.begin(), graph_ids.end());
  membership("graph", [&](const ParticleId& id) { return layers.graph.has_node(id); }, graph_ids);

  for (const auto& [id, p] : store.particles()) {
    if (const auto* t = layers.temporal.find(id); t && !(*t == p.temporal))
      report("temporal drift", "temporal index entry for " + id.str() + " is stale");
    if (const auto kind = layers.graph.kind_of(id); kind && *kind != p.kind)
      report("graph drift", "graph node kind for " + id.str() + " is stale");
  }

  for (const auto& [sid, s] : store.strands()) {
    if (s.type != StrandType::derivedFrom) continue;
    const auto* dst = store.find(s.dst);
    if (dst && !dst->is_aggregate()) report("provenance", "derivedFrom strand " + sid.str() + " targets a non-aggregate");
  }
  const auto min_size = config_.refinement.cluster.min_cluster_size;
  for (const auto& [id, p] : store.particles()) {
    if (!p.is_aggregate() || p.is_stale()) continue;
    std::size_t sources = 0;
    for (const auto& [sid, s] : store.strands())
      if (s.type == StrandType::derivedFrom && s.dst == id) ++sources;
    if (sources < min_size)
      report("provenance", "aggregate " + id.str() + " has " + std::to_string(sources) + " provenance strands");
  }
  return out;
}

std::vector<InsightParticle> Engine::scan(const ScanPredicate& predicate) const {
  std::shared_lock state(state_);
  return layers_->store.scan(predicate);
}

std::vector<ParticleId> Engine::provenance(const ParticleId& ia) const {
  std::shared_lock state(state_);
  return layers_->graph.provenance(ia);
}

std::vector<RelationalStrand> Engine::strands_of(const ParticleId& id) const {
  std::shared_lock state(state_);
  if (!layers_->store.contains(id)) throw Error(ErrorCode::not_found, "particle " + id.str() + " not found");
  std::vector<RelationalStrand> out;
  for (const auto& inc : layers_->graph.neighbors(id)) out.push_back(inc.strand);
  return out;
}

void Engine::checkpoint() {
  if (!config_.data_dir) throw Error(ErrorCode::config, "checkpoint needs a data_dir");
  auto writer = acquire_writer();
  std::unique_lock state(state_);
  layers_->store.compact(*config_.data_dir / "strg.snap");
  save_meta();
}

void Engine::export_graph(std::ostream& out) const {
  std::shared_lock state(state_);
  layers_->graph.export_jsonl(out);
}

std::size_t Engine::import_graph_jsonl_unsafe(std::istream& in) { return layers_->graph.import_jsonl(in); }

}  // namespace cweave
