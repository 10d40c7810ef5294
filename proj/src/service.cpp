#include "cweave/service.hpp"

#include <chrono>

#include <httplib.h>

namespace cweave {

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::duplicate_id:
    case ErrorCode::conflict:
    case ErrorCode::empty_index: return 409;
    case ErrorCode::oracle_transport:
    case ErrorCode::oracle_status:
    case ErrorCode::oracle_schema:
    case ErrorCode::oracle_rate_limited:
    case ErrorCode::oracle_retry_exhausted: return 502;
    case ErrorCode::write_lock_timeout: return 503;
    case ErrorCode::io:
    case ErrorCode::checksum_mismatch: return 500;
    default: return 400;
  }
}

EpochMs system_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, Json{{"error", std::string(code)}, {"message", std::string(message)}});
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, std::string("request body is not valid JSON: ") + e.what());
  }
}

Json deletion_json(const DeletionReport& r) {
  Json stale = Json::array();
  for (const auto& id : r.ias_marked_stale) stale.push_back(id.str());
  Json removed = Json::array();
  for (const auto& id : r.removed_strands) removed.push_back(id.str());
  return Json{{"deleted", r.deleted.str()},
              {"strands_removed", r.strands_removed},
              {"ias_marked_stale", stale},
              {"removed_strands", removed}};
}

ParticleId path_id(const httplib::Request& req) { return ParticleId::parse_or_throw(req.matches[1].str()); }

}  // namespace

Service::Service(Engine& engine, ServiceConfig config, Clock clock)
    : engine_(engine), config_(std::move(config)), clock_(std::move(clock)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Service::~Service() { stop(); }

int Service::bind() {
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw Error(ErrorCode::config, "cannot bind to " + config_.host);
  } else if (!server_->bind_to_port(config_.host, port)) {
    throw Error(ErrorCode::config, "cannot bind to " + config_.host + ":" + std::to_string(port));
  }
  return port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

void Service::install_routes() {
  auto& srv = *server_;

  // Every route goes through this wrapper: auth, error mapping, and `now`.
  auto wrap = [this](std::function<void(const httplib::Request&, httplib::Response&, EpochMs)> body) -> Handler {
    return [this, body = std::move(body)](const httplib::Request& req, httplib::Response& res) {
      if (config_.bearer_token) {
        if (req.get_header_value("Authorization") != "Bearer " + *config_.bearer_token) {
          send_error(res, 401, "unauthorized", "missing or wrong bearer token");
          return;
        }
      }
      try {
        EpochMs now = clock_();
        if (req.has_param("now")) {
          try {
            now = std::stoll(req.get_param_value("now"));
          } catch (const std::exception&) {
            throw Error(ErrorCode::validation, "now must be an integer");
          }
        }
        body(req, res, now);
      } catch (const Error& e) {
        const int status = http_status(e.code());
        if (status == 503) res.set_header("Retry-After", "1");
        send_error(res, status, to_string(e.code()), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  };

  srv.Post("/particles", wrap([this](const httplib::Request& req, httplib::Response& res, EpochMs now) {
             const Json body = parse_body(req);
             if (!body.is_object() || !body.contains("raw") || !body.at("raw").is_string())
               throw Error(ErrorCode::validation, "body needs a string field 'raw'");
             SituationalImprint imprint;
             imprint.source = "service";
             if (body.contains("imprint")) imprint = body.at("imprint").get<SituationalImprint>();
             std::optional<EventWindow> event;
             if (body.contains("event") && !body.at("event").is_null()) {
               const auto& e = body.at("event");
               try {
                 event = EventWindow{e.at("start").get<EpochMs>(), e.at("end").get<EpochMs>()};
               } catch (const Json::exception&) {
                 throw Error(ErrorCode::validation, "event needs integer start and end");
               }
             }
             const auto id = engine_.ingest(body.at("raw").get<std::string>(), imprint, now, event);
             send_json(res, 201, Json(engine_.get(id)));
           }));

  srv.Get(R"(/particles/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res, EpochMs) {
            send_json(res, 200, Json(engine_.get(path_id(req))));
          }));

  srv.Delete(R"(/particles/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res, EpochMs) {
               Cascade cascade = Cascade::strands_and_flag_ias;
               if (req.has_param("cascade")) {
                 const auto name = req.get_param_value("cascade");
                 if (name == "strands_only")
                   cascade = Cascade::strands_only;
                 else if (name != "strands_and_flag_ias")
                   throw Error(ErrorCode::validation, "unknown cascade '" + name + "'");
               }
               send_json(res, 200, deletion_json(engine_.remove(path_id(req), cascade)));
             }));

  srv.Post("/strands", wrap([this](const httplib::Request& req, httplib::Response& res, EpochMs now) {
             const Json body = parse_body(req);
             if (!body.is_object()) throw Error(ErrorCode::validation, "body must be an object");
             ParticleId src, dst;
             std::string type_name;
             try {
               src = body.at("src").get<ParticleId>();
               dst = body.at("dst").get<ParticleId>();
               type_name = body.at("type").get<std::string>();
             } catch (const Json::exception&) {
               throw Error(ErrorCode::validation, "body needs src, dst and type");
             }
             const auto type = parse_strand_type(type_name);
             if (!type) throw Error(ErrorCode::validation, "unknown strand type '" + type_name + "'");
             RelationalStrand strand;
             if (body.contains("evidence")) {
               strand = engine_.link(src, dst, *type, body.at("evidence").get<StrandEvidence>(), now);
             } else {
               double confidence = 0.0;
               if (body.contains("confidence")) {
                 if (!body.at("confidence").is_number())
                   throw Error(ErrorCode::validation, "confidence must be a number");
                 confidence = body.at("confidence").get<double>();
               }
               strand = engine_.link(src, dst, *type, confidence, now);
             }
             send_json(res, 201, Json(strand));
           }));

  srv.Post("/query", wrap([this](const httplib::Request& req, httplib::Response& res, EpochMs now) {
             send_json(res, 200, engine_.query(QuerySpec::from_json(parse_body(req)), now).to_json());
           }));

  srv.Post("/refine", wrap([this](const httplib::Request&, httplib::Response& res, EpochMs now) {
             send_json(res, 200, to_json(engine_.refine(now)));
           }));

  srv.Get("/aggregates", wrap([this](const httplib::Request&, httplib::Response& res, EpochMs) {
            ScanPredicate pred;
            pred.kind = ParticleKind::IA;
            Json arr = Json::array();
            for (const auto& p : engine_.scan(pred)) arr.push_back(Json(p));
            send_json(res, 200, arr);
          }));

  srv.Get("/stats", wrap([this](const httplib::Request&, httplib::Response& res, EpochMs) {
            send_json(res, 200, engine_.stats().to_json());
          }));

  srv.Get("/audit", wrap([this](const httplib::Request&, httplib::Response& res, EpochMs) {
            const auto violations = engine_.audit();
            send_json(res, 200, Json{{"count", violations.size()}, {"violations", to_json(violations)}});
          }));
}

}  // namespace cweave
