#include "cweave/workload.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace cweave {

namespace {

std::uint64_t uniform_below(std::uint64_t& state, std::uint64_t n) { return splitmix64(state) % n; }

std::vector<std::string> make_vocabulary(std::size_t size, std::uint64_t seed) {
  static constexpr std::string_view consonants = "bcdfghjklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::uint64_t state = seed ^ 0xC0FFEEULL;
  std::set<std::string> seen;
  std::vector<std::string> vocab;
  while (vocab.size() < size) {
    const auto syllables = 2 + uniform_below(state, 3);
    std::string word;
    for (std::uint64_t s = 0; s < syllables; ++s) {
      word += consonants[uniform_below(state, consonants.size())];
      word += vowels[uniform_below(state, vowels.size())];
    }
    if (seen.insert(word).second) vocab.push_back(std::move(word));
  }
  return vocab;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void WorkloadSpec::validate() const {
  if (n_particles < 1) throw Error(ErrorCode::validation, "n_particles must be at least 1");
  if (vocab_size < 1) throw Error(ErrorCode::validation, "vocab_size must be at least 1");
  if (tokens_min < 1 || tokens_min > tokens_max) throw Error(ErrorCode::validation, "invalid tokens_per_particle range");
  if (time_span_ms < 0) throw Error(ErrorCode::validation, "time_span must be non-negative");
  if (!(cluster_fraction >= 0.0 && cluster_fraction <= 1.0))
    throw Error(ErrorCode::validation, "cluster_fraction must lie in [0,1]");
  if (start_ms < 0) throw Error(ErrorCode::validation, "start time must be non-negative");
}

DurationMs WorkloadSpec::effective_span() const {
  return time_span_ms > 0 ? time_span_ms : static_cast<DurationMs>(n_particles) * 60'000;
}

std::vector<WorkloadItem> generate_workload(const WorkloadSpec& spec) {
  spec.validate();
  const auto vocab = make_vocabulary(spec.vocab_size, spec.seed);
  std::uint64_t state = spec.seed;
  const DurationMs span = spec.effective_span();

  std::vector<WorkloadItem> items;
  std::vector<std::size_t> originals;
  items.reserve(spec.n_particles);
  for (std::size_t i = 0; i < spec.n_particles; ++i) {
    WorkloadItem item;
    item.t = spec.start_ms + static_cast<EpochMs>((static_cast<long double>(span) * i) / spec.n_particles);
    const bool near_duplicate = !originals.empty() && splitmix_uniform(state) < spec.cluster_fraction;
    std::vector<std::string> tokens;
    if (near_duplicate) {
      const auto parent = originals[uniform_below(state, originals.size())];
      item.parent = parent;
      std::istringstream words(items[parent].text);
      for (std::string w; words >> w;) tokens.push_back(w);
      tokens[uniform_below(state, tokens.size())] = vocab[uniform_below(state, vocab.size())];
    } else {
      const auto count = spec.tokens_min + uniform_below(state, spec.tokens_max - spec.tokens_min + 1);
      for (std::uint64_t t = 0; t < count; ++t) tokens.push_back(vocab[uniform_below(state, vocab.size())]);
      originals.push_back(i);
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) item.text += (t ? " " : "") + tokens[t];
    items.push_back(std::move(item));
  }
  return items;
}

void write_workload_jsonl(const std::vector<WorkloadItem>& items, std::ostream& out) {
  for (const auto& item : items) {
    Json j{{"text", item.text}, {"t", item.t}, {"parent", item.parent ? Json(*item.parent) : Json(nullptr)}};
    out << j.dump() << '\n';
  }
}

std::vector<WorkloadItem> read_workload_jsonl(std::istream& in) {
  std::vector<WorkloadItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      WorkloadItem item;
      item.text = j.at("text").get<std::string>();
      item.t = j.at("t").get<EpochMs>();
      if (j.contains("parent") && !j.at("parent").is_null()) item.parent = j.at("parent").get<std::size_t>();
      items.push_back(std::move(item));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::validation, "workload line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

std::uint64_t workload_hash(const std::vector<WorkloadItem>& items) {
  std::ostringstream out;
  write_workload_jsonl(items, out);
  return fnv1a64(out.str());
}

void load_workload(Engine& engine, const std::vector<WorkloadItem>& items) {
  SituationalImprint imprint;
  imprint.source = "workload";
  std::vector<ParticleId> ids;
  ids.reserve(items.size());
  for (const auto& item : items) {
    ids.push_back(engine.ingest(item.text, imprint, item.t));
    if (item.parent && *item.parent < ids.size() - 1)
      engine.link(ids.back(), ids[*item.parent], StrandType::elaborates, 0.8, item.t);
  }
}

Json LatencyReport::to_json() const {
  Json arr = Json::array();
  for (const auto& r : rows) {
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << r.corpus_hash;
    arr.push_back({{"store_size", r.store_size},
                   {"p50_ms", r.p50_ms},
                   {"p95_ms", r.p95_ms},
                   {"mean_ms", r.mean_ms},
                   {"text_mean_ms", r.text_mean_ms},
                   {"temporal_mean_ms", r.temporal_mean_ms},
                   {"hybrid_mean_ms", r.hybrid_mean_ms},
                   {"build_ms", r.build_ms},
                   {"corpus_hash", hash.str()},
                   {"error", r.error ? Json(*r.error) : Json(nullptr)}});
  }
  return Json{{"rows", arr}, {"fitted_exponent", fitted_exponent ? Json(*fitted_exponent) : Json(nullptr)}};
}

void LatencyReport::write_csv(std::ostream& out) const {
  out << "store_size,p50_ms,p95_ms,mean_ms,text_mean_ms,temporal_mean_ms,hybrid_mean_ms,build_ms,error\n";
  for (const auto& r : rows) {
    out << r.store_size << ',' << r.p50_ms << ',' << r.p95_ms << ',' << r.mean_ms << ',' << r.text_mean_ms << ','
        << r.temporal_mean_ms << ',' << r.hybrid_mean_ms << ',' << r.build_ms << ',' << (r.error ? *r.error : "")
        << '\n';
  }
}

std::optional<double> fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  std::vector<std::pair<double, double>> logs;
  for (const auto& [x, y] : points)
    if (x > 0 && y > 0) logs.emplace_back(std::log(x), std::log(y));
  if (logs.size() < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (const auto& [x, y] : logs) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(logs.size());
  my /= static_cast<double>(logs.size());
  double sxy = 0, sxx = 0;
  for (const auto& [x, y] : logs) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

LatencyReport bench_latency(const std::vector<std::size_t>& sizes, std::size_t queries_per_size,
                            const WorkloadSpec& spec, std::uint64_t seed, const EngineConfig& base) {
  if (sizes.empty()) throw Error(ErrorCode::validation, "bench needs at least one size");
  if (!std::is_sorted(sizes.begin(), sizes.end()) ||
      std::adjacent_find(sizes.begin(), sizes.end()) != sizes.end())
    throw Error(ErrorCode::validation, "bench sizes must be strictly increasing");
  if (queries_per_size == 0) throw Error(ErrorCode::validation, "queries_per_size must be positive");

  LatencyReport report;
  std::vector<std::pair<double, double>> fit_points;
  for (const auto size : sizes) {
    LatencyRow row;
    row.store_size = size;
    try {
      WorkloadSpec ws = spec;
      ws.n_particles = size;
      const auto items = generate_workload(ws);
      row.corpus_hash = workload_hash(items);

      EngineConfig config = base;
      config.data_dir.reset();
      config.audit_log_path.reset();
      config.oracle.kind = "mock";
      Engine engine(config);
      const auto build_start = std::chrono::steady_clock::now();
      load_workload(engine, items);
      row.build_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - build_start).count();

      const auto vocab = make_vocabulary(ws.vocab_size, ws.seed);
      const EpochMs t0 = items.front().t;
      const EpochMs t1 = items.back().t;
      const EpochMs now = t1 + 1;
      std::uint64_t state = seed ^ (0x51ED270B2ULL * (size + 1));
      auto random_text = [&] {
        std::string text;
        for (int i = 0; i < 5; ++i) text += (i ? " " : "") + vocab[uniform_below(state, vocab.size())];
        return text;
      };
      auto random_window = [&] {
        const DurationMs hour = 3'600'000;
        const auto range = static_cast<std::uint64_t>(std::max<EpochMs>(1, t1 - t0 + 1));
        const EpochMs lo = t0 + static_cast<EpochMs>(uniform_below(state, range));
        return TimeWindow{TemporalField::t_create, lo, lo + hour};
      };

      std::vector<double> all, text_lat, temporal_lat, hybrid_lat;
      for (std::size_t q = 0; q < queries_per_size; ++q) {
        QuerySpec query;
        query.k = 10;
        query.use_ann = true;
        const auto kind = q % 4;  // 0,1 text; 2 temporal; 3 hybrid
        if (kind <= 1) {
          query.text = random_text();
        } else if (kind == 2) {
          query.time_window = random_window();
        } else {
          query.text = random_text();
          query.time_window = random_window();
          query.graph_expand = GraphExpand{1, std::nullopt, 0.0};
        }
        const auto start = std::chrono::steady_clock::now();
        (void)engine.query(query, now);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        all.push_back(ms);
        (kind <= 1 ? text_lat : kind == 2 ? temporal_lat : hybrid_lat).push_back(ms);
      }
      row.p50_ms = percentile(all, 0.50);
      row.p95_ms = percentile(all, 0.95);
      row.mean_ms = mean_of(all);
      row.text_mean_ms = mean_of(text_lat);
      row.temporal_mean_ms = mean_of(temporal_lat);
      row.hybrid_mean_ms = mean_of(hybrid_lat);
      fit_points.emplace_back(static_cast<double>(size), row.mean_ms);
    } catch (const std::bad_alloc&) {
      row.error = "out of memory";
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  report.fitted_exponent = fit_loglog_slope(fit_points);
  return report;
}

}  // namespace cweave
