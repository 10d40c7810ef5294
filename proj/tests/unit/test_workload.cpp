#include <doctest.h>

#include <sstream>

#include "cweave/workload.hpp"
#include "fixtures.hpp"

using namespace cweave;
using namespace cweave::testing;

TEST_CASE("workload generation is deterministic per seed") {
  WorkloadSpec spec;
  spec.n_particles = 300;
  spec.seed = 5;
  const auto a = generate_workload(spec);
  const auto b = generate_workload(spec);
  std::stringstream sa, sb;
  write_workload_jsonl(a, sa);
  write_workload_jsonl(b, sb);
  CHECK(sa.str() == sb.str());
  CHECK(workload_hash(a) == workload_hash(b));
  spec.seed = 6;
  CHECK(workload_hash(generate_workload(spec)) != workload_hash(a));
}

TEST_CASE("generated items respect the workload settings") {
  WorkloadSpec spec;
  spec.n_particles = 500;
  spec.tokens_min = 3;
  spec.tokens_max = 7;
  const auto items = generate_workload(spec);
  REQUIRE(items.size() == 500);
  std::size_t near_duplicates = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto tokens = tokenize(items[i].text);
    CHECK(tokens.size() >= 3);
    CHECK(tokens.size() <= 7);
    CHECK(items[i].t >= spec.start_ms);
    CHECK(items[i].t <= spec.start_ms + spec.effective_span());
    if (items[i].parent) {
      CHECK(*items[i].parent < i);
      ++near_duplicates;
    }
  }
  CHECK(near_duplicates > 50);
  CHECK(spec.effective_span() == 500 * 60'000);
}

TEST_CASE("workload JSONL round-trips") {
  WorkloadSpec spec;
  spec.n_particles = 50;
  const auto items = generate_workload(spec);
  std::stringstream buffer;
  write_workload_jsonl(items, buffer);
  const auto back = read_workload_jsonl(buffer);
  CHECK(workload_hash(back) == workload_hash(items));
  std::stringstream bad("{\"text\": 3}\n");
  CHECK_THROWS_AS(read_workload_jsonl(bad), Error);
}

TEST_CASE("invalid specs are rejected") {
  WorkloadSpec spec;
  spec.tokens_min = 10;
  spec.tokens_max = 5;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = WorkloadSpec{};
  spec.cluster_fraction = 1.5;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("loading links near-duplicates to their parents") {
  WorkloadSpec spec;
  spec.n_particles = 200;
  const auto items = generate_workload(spec);
  Engine engine(memory_config());
  load_workload(engine, items);
  std::size_t parents = 0;
  for (const auto& item : items) parents += item.parent.has_value();
  const auto stats = engine.stats();
  CHECK(stats.particle_count == 200);
  CHECK(stats.strand_count <= parents);
  CHECK(stats.strand_count > 0);
  CHECK(engine.audit().empty());
}

TEST_CASE("log-log slope fit") {
  CHECK(fit_loglog_slope({{10, 100}, {100, 10'000}, {1000, 1'000'000}}).value() == doctest::Approx(2.0));
  CHECK(fit_loglog_slope({{10, 5}, {1000, 5}}).value() == doctest::Approx(0.0));
  CHECK_FALSE(fit_loglog_slope({{10, 5}}).has_value());
  CHECK_FALSE(fit_loglog_slope({{10, 5}, {10, 7}}).has_value());
}

TEST_CASE("a single-size benchmark has no exponent") {
  WorkloadSpec spec;
  const auto report = bench_latency({200}, 20, spec, 3, memory_config());
  REQUIRE(report.rows.size() == 1);
  CHECK_FALSE(report.fitted_exponent.has_value());
  const auto& row = report.rows[0];
  CHECK_FALSE(row.error.has_value());
  CHECK(row.store_size == 200);
  CHECK(row.p50_ms <= row.p95_ms);
  CHECK(row.mean_ms > 0.0);
  const auto j = report.to_json();
  CHECK(j.at("fitted_exponent").is_null());
  std::stringstream csv;
  report.write_csv(csv);
  CHECK(csv.str().find("store_size") != std::string::npos);
}

TEST_CASE("a two-size benchmark fits an exponent") {
  const auto report = bench_latency({100, 400}, 20, WorkloadSpec{}, 3, memory_config());
  REQUIRE(report.rows.size() == 2);
  CHECK(report.fitted_exponent.has_value());
  CHECK_THROWS_AS(bench_latency({400, 100}, 5, WorkloadSpec{}, 3), Error);
}
