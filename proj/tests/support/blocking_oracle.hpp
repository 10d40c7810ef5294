#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>

#include "cweave/semantic_oracle.hpp"

namespace cweave::testing {

/// Wraps a mock oracle; while armed, transform() and synthesize() block until
/// release() is called. Lets tests hold the engine's writer lock on demand.
class BlockingOracle final : public SemanticOracle {
 public:
  explicit BlockingOracle(std::shared_ptr<const Embedder> embedder) : inner_(std::move(embedder)) {}

  void arm() {
    std::lock_guard lock(mu_);
    armed_ = true;
    entered_ = false;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      armed_ = false;
    }
    cv_.notify_all();
  }
  void wait_until_entered() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return entered_; });
  }

  OracleTransformOutput transform(std::string_view raw, const SituationalImprint& imprint) override {
    gate();
    return inner_.transform(raw, imprint);
  }
  SynthesisResult synthesize(const SynthesisRequest& request) override {
    gate();
    return inner_.synthesize(request);
  }
  std::optional<RelationSuggestion> suggest_relation(const ParticleView& a, const ParticleView& b) override {
    return inner_.suggest_relation(a, b);
  }
  [[nodiscard]] std::string name() const override { return inner_.name(); }

 private:
  void gate() {
    std::unique_lock lock(mu_);
    if (!armed_) return;
    entered_ = true;
    cv_.notify_all();
    cv_.wait(lock, [&] { return !armed_; });
  }

  MockOracle inner_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool armed_ = false;
  bool entered_ = false;
};

}  // namespace cweave::testing
