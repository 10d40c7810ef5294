#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cweave/engine.hpp"

namespace cweave {

struct WorkloadSpec {
  std::size_t n_particles = 1000;
  std::uint64_t seed = 1;
  std::size_t vocab_size = 500;
  std::size_t tokens_min = 5;
  std::size_t tokens_max = 30;
  /// Zero means n_particles minutes.
  DurationMs time_span_ms = 0;
  double cluster_fraction = 0.3;
  EpochMs start_ms = 1'700'000'000'000;

  void validate() const;
  [[nodiscard]] DurationMs effective_span() const;
};

struct WorkloadItem {
  std::string text;
  EpochMs t = 0;
  /// Index of the earlier item this one was derived from, for near-duplicates.
  std::optional<std::size_t> parent;
};

/// Same spec, same items, byte for byte.
std::vector<WorkloadItem> generate_workload(const WorkloadSpec& spec);
/// One JSON object per line: {"text", "t", "parent"}.
void write_workload_jsonl(const std::vector<WorkloadItem>& items, std::ostream& out);
std::vector<WorkloadItem> read_workload_jsonl(std::istream& in);
std::uint64_t workload_hash(const std::vector<WorkloadItem>& items);

/// Ingests the workload and links every near-duplicate to its parent.
void load_workload(Engine& engine, const std::vector<WorkloadItem>& items);

struct LatencyRow {
  std::size_t store_size = 0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  double text_mean_ms = 0.0;
  double temporal_mean_ms = 0.0;
  double hybrid_mean_ms = 0.0;
  double build_ms = 0.0;
  std::uint64_t corpus_hash = 0;
  std::optional<std::string> error;
};

struct LatencyReport {
  std::vector<LatencyRow> rows;
  /// Least-squares slope of log(mean) against log(size); absent below two sizes.
  std::optional<double> fitted_exponent;

  [[nodiscard]] Json to_json() const;
  void write_csv(std::ostream& out) const;
};

std::optional<double> fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

/// Builds an engine per size and runs a 50/25/25 mix of text, temporal, and
/// hybrid (depth-1 expansion) queries with ANN enabled.
LatencyReport bench_latency(const std::vector<std::size_t>& sizes, std::size_t queries_per_size,
                            const WorkloadSpec& spec, std::uint64_t seed, const EngineConfig& base = {});

}  // namespace cweave
