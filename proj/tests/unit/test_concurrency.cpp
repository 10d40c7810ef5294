#include <doctest.h>

#include <atomic>
#include <random>
#include <thread>

#include "blocking_oracle.hpp"
#include "cweave/engine.hpp"
#include "fixtures.hpp"

using namespace cweave;
using namespace cweave::testing;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::validation;
}

}  // namespace

TEST_CASE("queries keep running while a refinement waits on the oracle") {
  auto embedder = std::make_shared<DeterministicEmbedder>(64);
  auto oracle = std::make_shared<BlockingOracle>(embedder);
  Engine engine(memory_config(), oracle, embedder);
  const auto f = twelve_particle_fixture();
  for (std::size_t i = 0; i < f.texts.size(); ++i) engine.ingest(f.texts[i], imprint(), f.times[i]);

  oracle->arm();
  std::thread refiner([&] { engine.refine(kT0 + 3'600'000); });
  oracle->wait_until_entered();

  // The cycle is parked inside synthesis; readers must not be blocked.
  std::atomic<int> completed{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        QuerySpec q;
        q.text = f.texts[static_cast<std::size_t>((t + i) % 12)];
        q.k = 3;
        q.use_ann = false;
        const auto r = engine.query(q, kT0 + 3'600'000);
        if (!r.hits.empty()) ++completed;
        (void)engine.stats();
      }
    });
  }
  for (auto& r : readers) r.join();
  CHECK(completed == 100);
  CHECK(engine.stats().ia_count == 0);  // still the pre-cycle state

  oracle->release();
  refiner.join();
  CHECK(engine.stats().ia_count == 3);
  CHECK(engine.audit().empty());
}

TEST_CASE("a second writer times out while the first holds the lock") {
  auto embedder = std::make_shared<DeterministicEmbedder>(64);
  auto oracle = std::make_shared<BlockingOracle>(embedder);
  auto cfg = memory_config();
  cfg.write_lock_timeout_ms = 30;
  Engine engine(cfg, oracle, embedder);
  const auto a = engine.ingest("first particle", imprint(), kT0);
  const auto b = engine.ingest("second particle", imprint(), kT0);

  oracle->arm();
  std::thread holder([&] { engine.ingest("slow ingest", imprint(), kT0 + 1); });
  oracle->wait_until_entered();
  CHECK(code_of([&] { engine.ingest("blocked", imprint(), kT0 + 2); }) == ErrorCode::write_lock_timeout);
  CHECK(code_of([&] { engine.link(a, b, StrandType::supports, 0.5, kT0); }) == ErrorCode::write_lock_timeout);
  CHECK(code_of([&] { engine.refine(kT0 + 5); }) == ErrorCode::write_lock_timeout);
  CHECK(code_of([&] { engine.remove(a); }) == ErrorCode::write_lock_timeout);
  CHECK(engine.get(a).core_data == "first particle");  // reads still work
  oracle->release();
  holder.join();
  CHECK(engine.stats().particle_count == 3);
  engine.link(a, b, StrandType::supports, 0.5, kT0);
  CHECK(engine.audit().empty());
}

TEST_CASE("concurrent writers and readers leave a consistent engine") {
  Engine engine(memory_config());
  std::atomic<EpochMs> clock{kT0};
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&, t] {
      std::mt19937_64 rng(static_cast<std::uint64_t>(t));
      std::vector<ParticleId> mine;
      for (int i = 0; i < 60; ++i) {
        const EpochMs now = clock.fetch_add(1000);
        const auto roll = rng() % 10;
        if (roll < 5 || mine.size() < 2) {
          mine.push_back(engine.ingest(random_sentence(rng), imprint(), now));
        } else if (roll < 7) {
          try {
            engine.link(mine[rng() % mine.size()], mine[rng() % mine.size()], StrandType::relatedTo, 0.5, now);
          } catch (const Error& e) {
            CHECK((e.code() == ErrorCode::self_loop || e.code() == ErrorCode::not_found));
          }
        } else if (roll < 9) {
          QuerySpec q;
          q.text = random_sentence(rng, 2, 4);
          q.k = 5;
          engine.query(q, now);
        } else if (t == 0) {
          engine.refine(now);
        } else {
          const auto victim = mine.back();
          mine.pop_back();
          engine.remove(victim);
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  CHECK(engine.audit().empty());
}
