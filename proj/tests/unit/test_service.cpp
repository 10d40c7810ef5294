#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "blocking_oracle.hpp"
#include "cweave/service.hpp"
#include "fixtures.hpp"

using namespace cweave;
using namespace cweave::testing;

namespace {

// Serves one engine on an ephemeral port for the lifetime of the object.
class RunningService {
 public:
  RunningService(Engine& engine, ServiceConfig cfg)
      : service_(engine, (cfg.port = 0, cfg), [] { return kT0 + 1'000; }) {
    port_ = service_.bind();
    thread_ = std::thread([this] { service_.run(); });
  }
  ~RunningService() {
    service_.stop();
    thread_.join();
  }
  httplib::Client client(std::optional<std::string> token = std::nullopt) const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(std::chrono::seconds(20));
    if (token) c.set_bearer_token_auth(*token);
    return c;
  }

 private:
  Service service_;
  int port_ = 0;
  std::thread thread_;
};

Json body_of(const httplib::Result& r) { return Json::parse(r->body); }

}  // namespace

TEST_CASE("status mapping for error codes") {
  CHECK(http_status(ErrorCode::not_found) == 404);
  CHECK(http_status(ErrorCode::duplicate_id) == 409);
  CHECK(http_status(ErrorCode::empty_index) == 409);
  CHECK(http_status(ErrorCode::oracle_schema) == 502);
  CHECK(http_status(ErrorCode::write_lock_timeout) == 503);
  CHECK(http_status(ErrorCode::checksum_mismatch) == 500);
  CHECK(http_status(ErrorCode::validation) == 400);
  CHECK(http_status(ErrorCode::inverted_range) == 400);
}

TEST_CASE("particles posted over HTTP read back identically") {
  Engine engine(memory_config());
  RunningService svc(engine, ServiceConfig{});
  auto client = svc.client();

  auto created = client.Post("/particles?now=" + std::to_string(kT0), R"({"raw": "Harbor cranes idle after storm"})",
                             "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto particle = body_of(created);
  CHECK(particle.at("temporal").at("t_create") == kT0);
  CHECK(particle.at("imprint").at("source") == "service");

  auto fetched = client.Get("/particles/" + particle.at("id").get<std::string>());
  REQUIRE(fetched);
  CHECK(fetched->status == 200);
  CHECK(body_of(fetched) == particle);

  auto defaulted = client.Post("/particles", R"({"raw": "clock stamped", "imprint": {"source": "x", "agent_state": {},
                               "task_tag": null, "user_tag": "u"}})",
                               "application/json");
  REQUIRE(defaulted);
  CHECK(defaulted->status == 201);
  CHECK(body_of(defaulted).at("temporal").at("t_create") == kT0 + 1'000);
}

TEST_CASE("strands, queries, refinement and inspection endpoints") {
  Engine engine(memory_config());
  RunningService svc(engine, ServiceConfig{});
  auto client = svc.client();
  const auto f = twelve_particle_fixture();
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < f.texts.size(); ++i) {
    auto r = client.Post("/particles?now=" + std::to_string(f.times[i]), Json{{"raw", f.texts[i]}}.dump(),
                         "application/json");
    REQUIRE(r);
    ids.push_back(body_of(r).at("id"));
  }
  auto strand = client.Post("/strands", Json{{"src", ids[9]}, {"dst", ids[10]}, {"type", "causes"}, {"confidence", 0.7}}.dump(),
                            "application/json");
  REQUIRE(strand);
  CHECK(strand->status == 201);
  CHECK(body_of(strand).at("type") == "causes");
  auto dup = client.Post("/strands", Json{{"src", ids[9]}, {"dst", ids[9]}, {"type", "causes"}}.dump(), "application/json");
  CHECK(dup->status == 400);

  auto q = client.Post("/query?now=" + std::to_string(kT0 + 10'000'000),
                       Json{{"text", f.texts[0]}, {"k", 2}, {"use_ann", false}}.dump(), "application/json");
  REQUIRE(q);
  CHECK(q->status == 200);
  CHECK(body_of(q).at("hits").size() == 2);
  CHECK(body_of(q).at("hits")[0].at("id") == ids[0]);

  auto refine = client.Post("/refine?now=" + std::to_string(kT0 + 20'000'000), "", "application/json");
  REQUIRE(refine);
  CHECK(body_of(refine).at("ias_created").size() == 3);
  CHECK(body_of(client.Get("/aggregates")).size() == 3);
  CHECK(body_of(client.Get("/stats")).at("ia_count") == 3);
  const auto audit = body_of(client.Get("/audit"));
  CHECK(audit.at("count") == 0);

  auto del = client.Delete("/particles/" + ids[11] + "?cascade=strands_only");
  REQUIRE(del);
  CHECK(del->status == 200);
  CHECK(body_of(del).at("deleted") == ids[11]);
}

TEST_CASE("errors map to status codes with a JSON body") {
  Engine engine(memory_config());
  RunningService svc(engine, ServiceConfig{});
  auto client = svc.client();

  auto missing = client.Get("/particles/" + ParticleId::mint(kT0, 1).str());
  CHECK(missing->status == 404);
  CHECK(body_of(missing).at("error") == "not_found");
  CHECK(client.Get("/particles/not-an-id")->status == 400);
  CHECK(client.Post("/particles", "{broken", "application/json")->status == 400);
  CHECK(client.Post("/particles", R"({"text": "wrong field"})", "application/json")->status == 400);
  CHECK(client.Post("/particles?now=abc", R"({"raw": "x"})", "application/json")->status == 400);
  CHECK(client.Post("/query", R"({"text": "x", "extra": 1})", "application/json")->status == 400);
  auto empty = client.Post("/query", R"({"text": "anything"})", "application/json");
  CHECK(empty->status == 409);
  CHECK(body_of(empty).at("error") == "empty_index");
  CHECK(client.Delete("/particles/" + ParticleId::mint(kT0, 1).str() + "?cascade=nope")->status == 400);
}

TEST_CASE("a configured bearer token is required") {
  Engine engine(memory_config());
  ServiceConfig cfg;
  cfg.bearer_token = "s3cret";
  RunningService svc(engine, cfg);
  CHECK(svc.client().Get("/stats")->status == 401);
  CHECK(svc.client("wrong").Get("/stats")->status == 401);
  CHECK(svc.client("s3cret").Get("/stats")->status == 200);
}

TEST_CASE("writer contention surfaces as 503 with Retry-After") {
  auto embedder = std::make_shared<DeterministicEmbedder>(64);
  auto oracle = std::make_shared<BlockingOracle>(embedder);
  auto cfg = memory_config();
  cfg.write_lock_timeout_ms = 50;
  Engine engine(cfg, oracle, embedder);
  RunningService svc(engine, ServiceConfig{});

  oracle->arm();
  std::thread holder([&] { engine.ingest("holding the writer", imprint(), kT0); });
  oracle->wait_until_entered();
  auto blocked = svc.client().Post("/particles", R"({"raw": "second writer"})", "application/json");
  oracle->release();
  holder.join();
  REQUIRE(blocked);
  CHECK(blocked->status == 503);
  CHECK(blocked->get_header_value("Retry-After") == "1");
  CHECK(body_of(blocked).at("error") == "write_lock_timeout");
  CHECK(engine.stats().particle_count == 1);
}
