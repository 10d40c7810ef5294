#pragma once

#include <functional>
#include <memory>
#include <string>

#include "cweave/engine.hpp"

namespace httplib {
class Server;
}

namespace cweave {

/// HTTP status for an engine error code.
int http_status(ErrorCode code) noexcept;

using Clock = std::function<EpochMs()>;
EpochMs system_now_ms();

/// JSON-over-HTTP front end for one engine. Request-scoped `now` may be passed
/// as a `now` query parameter; otherwise the clock is used.
class Service {
 public:
  Service(Engine& engine, ServiceConfig config, Clock clock = system_now_ms);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds to the configured host and port (port 0 picks a free one) and
  /// returns the bound port; throws config on bind failure.
  int bind();
  /// Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  void install_routes();

  Engine& engine_;
  ServiceConfig config_;
  Clock clock_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cweave
