#include "cweave/semantic_oracle.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace cweave {

const std::set<std::string, std::less<>>& mock_stopwords() {
  static const std::set<std::string, std::less<>> words = {
      "a",    "an",   "the",  "and",   "or",    "but",  "if",   "then", "of",    "to",
      "in",   "on",   "at",   "by",    "for",   "with", "from", "as",   "into",  "about",
      "is",   "are",  "was",  "were",  "be",    "been", "being", "it",  "its",   "this",
      "that", "these", "those", "i",   "you",   "he",   "she",  "we",   "they",  "me",
      "my",   "our",  "your", "his",   "her",   "their", "not", "no",   "so",    "than"};
  return words;
}

const std::set<std::string, std::less<>>& mock_imperative_verbs() {
  static const std::set<std::string, std::less<>> verbs = {"do",  "make",   "create", "find",
                                                           "check", "add", "remove", "update"};
  return verbs;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::string truncate_utf8(std::string_view text, std::size_t max_bytes) {
  if (text.size() <= max_bytes) return std::string(text);
  std::size_t cut = max_bytes;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return std::string(text.substr(0, cut));
}

std::size_t utf8_length(std::string_view text) noexcept {
  std::size_t n = 0;
  for (unsigned char c : text)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

namespace {

// Top `limit` entries by count descending, then key ascending.
std::set<std::string> top_by_count(const std::map<std::string, std::size_t>& counts, std::size_t limit) {
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::set<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < limit; ++i) out.insert(ranked[i].first);
  return out;
}

}  // namespace

MockOracle::MockOracle(std::shared_ptr<const Embedder> embedder, MockOracleConfig config)
    : embedder_(std::move(embedder)), config_(config) {
  if (!embedder_) throw Error(ErrorCode::config, "mock oracle needs an embedder");
}

OracleTransformOutput MockOracle::transform(std::string_view raw, const SituationalImprint& imprint) {
  (void)imprint;
  OracleTransformOutput out;
  out.core_data = truncate_utf8(normalize_whitespace(raw), config_.max_core_chars);
  if (out.core_data.empty()) throw Error(ErrorCode::empty_input, "raw input is empty");
  const auto tokens = tokenize(out.core_data);
  if (tokens.empty()) throw Error(ErrorCode::empty_input, "raw input has no alphanumeric tokens");

  std::map<std::string, std::size_t> counts;
  for (const auto& t : tokens)
    if (!mock_stopwords().count(t)) ++counts[t];
  if (counts.empty())
    for (const auto& t : tokens) ++counts[t];
  out.resonance_keys = top_by_count(counts, config_.max_keys);

  if (raw.find('?') != std::string_view::npos) out.signifiers.insert(Signifier::query);
  if (mock_imperative_verbs().count(tokens.front())) out.signifiers.insert(Signifier::directive);
  if (out.signifiers.empty()) out.signifiers.insert(Signifier::assertion);

  out.imprint_enrichment = {{"oracle", "mock-v1"}};
  return out;
}

SynthesisResult MockOracle::synthesize(const SynthesisRequest& request) {
  const auto& members = request.constituents;
  if (members.size() < config_.min_cluster_size)
    throw Error(ErrorCode::too_few_constituents, "synthesis needs at least " +
                                                     std::to_string(config_.min_cluster_size) + " constituents");
  std::vector<Vector> vectors;
  vectors.reserve(members.size());
  for (const auto& c : members) vectors.push_back(embedder_->embed(c.core_data));

  Vector centroid(embedder_->dimension(), 0.0);
  for (const auto& v : vectors)
    for (std::size_t i = 0; i < v.size(); ++i) centroid[i] += v[i] / static_cast<double>(vectors.size());
  double centroid_norm = 0.0;
  for (double x : centroid) centroid_norm += x * x;

  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double score = centroid_norm > 0.0 ? cosine(centroid, vectors[i]) : 0.0;
    if (score > best_score || (score == best_score && members[i].id < members[best].id)) {
      best = i;
      best_score = score;
    }
  }

  SynthesisResult result;
  std::size_t total = 0;
  for (const auto& c : members) total += c.core_data.size();
  result.ia_core_data = "Synthesis of " + std::to_string(members.size()) + " insights: " + members[best].core_data;
  if (result.ia_core_data.size() >= total) result.ia_core_data = truncate_utf8(result.ia_core_data, total - 1);

  std::map<std::string, std::size_t> key_counts;
  for (const auto& c : members)
    for (const auto& k : c.resonance_keys) ++key_counts[k];
  result.ia_resonance_keys = top_by_count(key_counts, config_.max_keys);

  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i)
    for (std::size_t j = i + 1; j < vectors.size(); ++j, ++pairs) sum += cosine(vectors[i], vectors[j]);
  result.confidence = std::clamp(pairs ? sum / static_cast<double>(pairs) : 1.0, 0.0, 1.0);
  return result;
}

std::optional<RelationSuggestion> MockOracle::suggest_relation(const ParticleView& a, const ParticleView& b) {
  if (a.id == b.id) throw Error(ErrorCode::validation, "cannot relate a particle to itself");
  const Vector va = a.embedding ? *a.embedding : embedder_->embed(a.core_data);
  const Vector vb = b.embedding ? *b.embedding : embedder_->embed(b.core_data);
  const double sim = cosine(va, vb);
  if (sim >= 0.8) return RelationSuggestion{StrandType::elaborates, sim, "embedding cosine >= 0.8"};

  std::size_t overlap = 0;
  for (const auto& k : a.resonance_keys) overlap += b.resonance_keys.count(k);
  if (overlap >= 3) {
    return RelationSuggestion{StrandType::relatedTo, std::min(1.0, static_cast<double>(overlap) / 8.0),
                              std::to_string(overlap) + " shared resonance keys"};
  }
  return std::nullopt;
}

// --- wire codecs ------------------------------------------------------------------

namespace {

Json view_json(const ParticleView& v) {
  return Json{{"id", v.id}, {"core_data", v.core_data}, {"resonance_keys", v.resonance_keys}};
}

[[noreturn]] void schema_error(const std::string& what) {
  throw Error(ErrorCode::oracle_schema, "oracle response schema violation: " + what);
}

template <class F>
auto schema_checked(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    schema_error(e.what());
  }
}

std::set<std::string> lowercase_keys(const Json& array) {
  std::set<std::string> out;
  for (const auto& k : array) {
    auto key = k.get<std::string>();
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (!key.empty()) out.insert(std::move(key));
  }
  return out;
}

}  // namespace

Json transform_request_json(std::string_view raw, const SituationalImprint& imprint) {
  return Json{{"raw", std::string(raw)}, {"imprint", imprint}};
}

Json synthesis_request_json(const SynthesisRequest& request) {
  Json constituents = Json::array();
  for (const auto& c : request.constituents) {
    constituents.push_back(Json{{"id", c.id},
                                {"core_data", c.core_data},
                                {"resonance_keys", c.resonance_keys},
                                {"temporal",
                                 {{"t_create", c.temporal.t_create},
                                  {"t_event_start", c.temporal.t_event_start ? Json(*c.temporal.t_event_start) : Json()},
                                  {"t_event_end", c.temporal.t_event_end ? Json(*c.temporal.t_event_end) : Json()}}}});
  }
  return Json{{"constituents", std::move(constituents)}, {"prompt_params", request.prompt_params}};
}

Json suggest_request_json(const ParticleView& a, const ParticleView& b) {
  return Json{{"a", view_json(a)}, {"b", view_json(b)}};
}

Json to_json(const OracleTransformOutput& out) {
  Json signifiers = Json::array();
  for (auto s : out.signifiers) signifiers.push_back(to_string(s));
  return Json{{"resonance_keys", out.resonance_keys},
              {"signifiers", std::move(signifiers)},
              {"imprint_enrichment", out.imprint_enrichment},
              {"core_data", out.core_data}};
}

Json to_json(const SynthesisResult& out) {
  return Json{
      {"ia_core_data", out.ia_core_data}, {"ia_resonance_keys", out.ia_resonance_keys}, {"confidence", out.confidence}};
}

Json to_json(const std::optional<RelationSuggestion>& out) {
  if (!out) return Json{{"suggestion", nullptr}};
  return Json{{"suggestion",
               {{"type", to_string(out->type)}, {"confidence", out->confidence}, {"rationale", out->rationale}}}};
}

OracleTransformOutput parse_transform_output(const Json& j, std::size_t max_core_chars) {
  return schema_checked([&] {
    OracleTransformOutput out;
    out.core_data = truncate_utf8(j.at("core_data").get<std::string>(), max_core_chars);
    if (out.core_data.empty()) schema_error("core_data is empty");
    out.resonance_keys = lowercase_keys(j.at("resonance_keys"));
    if (out.resonance_keys.empty()) schema_error("resonance_keys is empty");
    std::vector<std::string> unknown;
    for (const auto& s : j.at("signifiers")) {
      const auto text = s.get<std::string>();
      if (auto sig = parse_signifier(text)) {
        out.signifiers.insert(*sig);
      } else {
        out.signifiers.insert(Signifier::assertion);
        unknown.push_back(text);
      }
    }
    if (out.signifiers.empty()) out.signifiers.insert(Signifier::assertion);
    if (auto it = j.find("imprint_enrichment"); it != j.end() && !it->is_null())
      out.imprint_enrichment = it->get<std::map<std::string, std::string>>();
    if (!unknown.empty()) {
      std::string note = "unknown signifiers mapped to assertion:";
      for (const auto& u : unknown) note += " " + u;
      out.imprint_enrichment["oracle_note"] = note;
    }
    return out;
  });
}

SynthesisResult parse_synthesis_result(const Json& j) {
  return schema_checked([&] {
    SynthesisResult out;
    out.ia_core_data = j.at("ia_core_data").get<std::string>();
    if (out.ia_core_data.empty()) schema_error("ia_core_data is empty");
    out.ia_resonance_keys = lowercase_keys(j.at("ia_resonance_keys"));
    if (out.ia_resonance_keys.empty()) schema_error("ia_resonance_keys is empty");
    out.confidence = j.at("confidence").get<double>();
    if (!(out.confidence >= 0.0 && out.confidence <= 1.0)) schema_error("confidence outside [0,1]");
    return out;
  });
}

std::optional<RelationSuggestion> parse_suggestion(const Json& j) {
  return schema_checked([&]() -> std::optional<RelationSuggestion> {
    const auto& s = j.at("suggestion");
    if (s.is_null()) return std::nullopt;
    RelationSuggestion out;
    auto type = parse_strand_type(s.at("type").get<std::string>());
    if (!type) schema_error("unknown strand type");
    if (*type == StrandType::derivedFrom) schema_error("oracle may not suggest derivedFrom");
    out.type = *type;
    out.confidence = s.at("confidence").get<double>();
    if (!(out.confidence >= 0.0 && out.confidence <= 1.0)) schema_error("confidence outside [0,1]");
    if (auto it = s.find("rationale"); it != s.end() && it->is_string()) out.rationale = it->get<std::string>();
    return out;
  });
}

}  // namespace cweave
