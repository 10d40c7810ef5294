// Operator CLI: ingest, query, refine, inspect, generate workloads, benchmark, serve.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cweave/engine.hpp"
#include "cweave/service.hpp"
#include "cweave/workload.hpp"

namespace {

using namespace cweave;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitEngine = 2;

struct GlobalOptions {
  std::string config_path;
  std::string data_dir;
};

EngineConfig load_config(const GlobalOptions& g) {
  EngineConfig config = g.config_path.empty() ? EngineConfig{} : EngineConfig::load(g.config_path);
  if (!g.data_dir.empty()) config.data_dir = g.data_dir;
  if (!config.data_dir) config.data_dir = "cweave-data";
  return config;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, ',');) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      sizes.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::validation, "invalid size '" + part + "'");
    }
  }
  return sizes;
}

Service* g_service = nullptr;
void handle_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cweave: hybrid vector and graph memory engine"};
  app.require_subcommand(1);
  GlobalOptions global;
  app.add_option("--config", global.config_path, "Engine configuration file (JSON)");
  app.add_option("--data-dir", global.data_dir, "Data directory (overrides the config; default ./cweave-data)");

  std::optional<EpochMs> now_flag;
  auto now = [&] { return now_flag.value_or(system_now_ms()); };

  // ingest-file
  auto* ingest = app.add_subcommand("ingest-file", "Ingest one raw text per line with a shared imprint");
  std::string ingest_path, source = "cli";
  std::optional<std::string> user_tag, task_tag;
  bool jsonl = false;
  ingest->add_option("path", ingest_path, "Input file")->required();
  ingest->add_option("--source", source, "Imprint source");
  ingest->add_option("--user-tag", user_tag, "Imprint user tag");
  ingest->add_option("--task-tag", task_tag, "Imprint task tag");
  ingest->add_flag("--jsonl", jsonl, "Input is gen-workload JSONL (uses each line's timestamp and parent link)");
  ingest->add_option("--now", now_flag, "Ingestion time in epoch ms (default: wall clock)");

  // query
  auto* query = app.add_subcommand("query", "Run a hybrid query and print the RecallResult JSON");
  std::optional<std::string> q_text, q_field, q_user_tag, q_type;
  std::optional<EpochMs> q_lo, q_hi;
  std::size_t q_k = 10, q_depth = 0;
  double q_min_importance = 0.0, q_min_strength = 0.0;
  bool q_exact = false;
  query->add_option("--text", q_text, "Semantic query text");
  query->add_option("--field", q_field, "Temporal field for the window (default t_create)");
  query->add_option("--lo", q_lo, "Window start (epoch ms)");
  query->add_option("--hi", q_hi, "Window end (epoch ms)");
  query->add_option("--k", q_k, "Number of direct hits");
  query->add_option("--depth", q_depth, "Graph expansion depth (0 disables)");
  query->add_option("--strand-type", q_type, "Only expand along this strand type");
  query->add_option("--min-strength", q_min_strength, "Minimum strand strength for expansion");
  query->add_option("--min-importance", q_min_importance, "Drop hits below this importance");
  query->add_option("--user-tag", q_user_tag, "Restrict to particles with this user tag");
  query->add_flag("--exact", q_exact, "Use exact k-NN instead of the ANN graph");
  query->add_option("--now", now_flag, "Query time in epoch ms");

  auto* refine = app.add_subcommand("refine", "Run one refinement cycle and print its report");
  refine->add_option("--now", now_flag, "Cycle time in epoch ms");

  app.add_subcommand("stats", "Print engine statistics");
  app.add_subcommand("audit", "Check store, index, and graph integrity");
  app.add_subcommand("checkpoint", "Write a snapshot and truncate the log");

  // gen-workload
  auto* gen = app.add_subcommand("gen-workload", "Generate a deterministic synthetic corpus as JSONL");
  WorkloadSpec wspec;
  std::string gen_out;
  gen->add_option("--n", wspec.n_particles, "Number of particles")->required();
  gen->add_option("--seed", wspec.seed, "Generator seed");
  gen->add_option("--vocab", wspec.vocab_size, "Vocabulary size");
  gen->add_option("--tokens-min", wspec.tokens_min, "Minimum tokens per particle");
  gen->add_option("--tokens-max", wspec.tokens_max, "Maximum tokens per particle");
  gen->add_option("--span-ms", wspec.time_span_ms, "Time span in ms (default n minutes)");
  gen->add_option("--cluster-fraction", wspec.cluster_fraction, "Fraction of near-duplicates");
  gen->add_option("--out", gen_out, "Output file (default stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "Query latency sweep over store sizes");
  std::string bench_sizes = "1000,10000,100000", bench_json, bench_csv;
  std::size_t bench_queries = 200;
  std::uint64_t bench_seed = 7;
  WorkloadSpec bspec;
  bench->add_option("--sizes", bench_sizes, "Comma-separated, strictly increasing store sizes");
  bench->add_option("--queries", bench_queries, "Queries per size");
  bench->add_option("--seed", bench_seed, "Seed for workload and queries");
  bench->add_option("--json", bench_json, "Write the LatencyReport JSON here (default stdout)");
  bench->add_option("--csv", bench_csv, "Also write CSV rows here");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::optional<std::string> host;
  std::optional<int> port;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();

    if (name == "gen-workload") {
      const auto items = generate_workload(wspec);
      if (gen_out.empty()) {
        write_workload_jsonl(items, std::cout);
      } else {
        std::ofstream out(gen_out, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io, "cannot write " + gen_out);
        write_workload_jsonl(items, out);
      }
      return kExitOk;
    }

    if (name == "bench") {
      bspec.seed = bench_seed;
      EngineConfig base = global.config_path.empty() ? EngineConfig{} : EngineConfig::load(global.config_path);
      const auto report = bench_latency(parse_sizes(bench_sizes), bench_queries, bspec, bench_seed, base);
      const auto text = report.to_json().dump(2);
      if (bench_json.empty()) {
        std::cout << text << '\n';
      } else {
        std::ofstream(bench_json) << text << '\n';
      }
      if (!bench_csv.empty()) {
        std::ofstream csv(bench_csv);
        report.write_csv(csv);
      }
      return kExitOk;
    }

    EngineConfig config = load_config(global);
    if (name == "serve") {
      if (host) config.service.host = *host;
      if (port) config.service.port = *port;
    }
    Engine engine(config);

    if (name == "ingest-file") {
      std::ifstream in(ingest_path);
      if (!in) throw Error(ErrorCode::validation, "cannot open " + ingest_path);
      SituationalImprint imprint;
      imprint.source = source;
      imprint.user_tag = user_tag;
      imprint.task_tag = task_tag;
      std::size_t count = 0;
      if (jsonl) {
        const auto items = read_workload_jsonl(in);
        std::vector<ParticleId> ids;
        for (const auto& item : items) {
          ids.push_back(engine.ingest(item.text, imprint, item.t));
          if (item.parent && *item.parent + 1 < ids.size())
            engine.link(ids.back(), ids[*item.parent], StrandType::elaborates, 0.8, item.t);
        }
        count = ids.size();
      } else {
        const EpochMs t = now();
        for (std::string line; std::getline(in, line);) {
          if (normalize_whitespace(line).empty()) continue;
          const auto id = engine.ingest(line, imprint, t);
          std::cout << id.str() << '\n';
          ++count;
        }
      }
      std::cerr << "ingested " << count << " particles\n";
      return kExitOk;
    }

    if (name == "query") {
      QuerySpec spec;
      spec.text = q_text;
      if (q_lo || q_hi) {
        if (!q_lo || !q_hi) throw Error(ErrorCode::validation, "--lo and --hi must be given together");
        TimeWindow w;
        if (q_field) {
          const auto f = parse_temporal_field(*q_field);
          if (!f) throw Error(ErrorCode::validation, "unknown temporal field '" + *q_field + "'");
          w.field = *f;
        }
        w.lo = *q_lo;
        w.hi = *q_hi;
        spec.time_window = w;
      }
      spec.k = q_k;
      if (q_depth > 0) {
        GraphExpand g;
        g.max_depth = q_depth;
        g.min_strength = q_min_strength;
        if (q_type) {
          g.type_filter = parse_strand_type(*q_type);
          if (!g.type_filter) throw Error(ErrorCode::validation, "unknown strand type '" + *q_type + "'");
        }
        spec.graph_expand = g;
      }
      spec.min_importance = q_min_importance;
      spec.use_ann = !q_exact;
      spec.user_tag = q_user_tag;
      std::cout << engine.query(spec, now()).to_json().dump(2) << '\n';
      return kExitOk;
    }

    if (name == "refine") {
      std::cout << to_json(engine.refine(now())).dump(2) << '\n';
      return kExitOk;
    }

    if (name == "stats") {
      std::cout << engine.stats().to_json().dump(2) << '\n';
      return kExitOk;
    }

    if (name == "audit") {
      const auto violations = engine.audit();
      std::cout << violations.size() << " violations\n";
      for (const auto& v : violations) std::cout << v.kind << ": " << v.detail << '\n';
      return violations.empty() ? kExitOk : kExitEngine;
    }

    if (name == "checkpoint") {
      engine.checkpoint();
      std::cout << "checkpoint written\n";
      return kExitOk;
    }

    if (name == "serve") {
      Service service(engine, config.service);
      const int bound = service.bind();
      g_service = &service;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "listening on " << config.service.host << ':' << bound << '\n';
      service.run();
      g_service = nullptr;
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return http_status(e.code()) == 400 ? kExitValidation : kExitEngine;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitEngine;
  }
  return kExitOk;
}
