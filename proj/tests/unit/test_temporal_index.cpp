#include <doctest.h>

#include <random>

#include "cweave/temporal_index.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

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

TemporalMetadata random_meta(std::mt19937_64& rng) {
  std::uniform_int_distribution<EpochMs> t(0, 1000);
  TemporalMetadata m;
  m.t_create = t(rng);
  m.t_modify = m.t_create + t(rng);
  m.t_access = m.t_modify + t(rng);
  if (rng() % 2) {
    m.t_event_start = t(rng);
    m.t_event_end = *m.t_event_start + t(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("range queries equal a linear filter on every field") {
  std::mt19937_64 rng(3);
  TemporalIndex index;
  std::map<ParticleId, TemporalMetadata> entries;
  for (int i = 0; i < 300; ++i) {
    const auto id = ParticleId::mint(kT0, rng());
    entries[id] = random_meta(rng);
    index.insert(id, entries[id]);
  }
  std::uniform_int_distribution<EpochMs> bound(-50, 3100);
  for (int q = 0; q < 100; ++q) {
    EpochMs lo = bound(rng), hi = bound(rng);
    if (lo > hi) std::swap(lo, hi);
    for (auto f : kAllTemporalFields) CHECK(index.range_query(f, lo, hi) == brute_range(entries, f, lo, hi));
  }
  CHECK(index.range_query(TemporalField::t_create, 5, 5) == brute_range(entries, TemporalField::t_create, 5, 5));
}

TEST_CASE("particles without event times are absent from event trees") {
  TemporalIndex index;
  TemporalMetadata m{10, 10, 10, std::nullopt, std::nullopt};
  index.insert(ParticleId::mint(kT0, 1), m);
  CHECK(index.field_size(TemporalField::t_create) == 1);
  CHECK(index.field_size(TemporalField::t_event_start) == 0);
  CHECK(index.range_query(TemporalField::t_event_end, 0, 1'000'000).empty());
}

TEST_CASE("reindex moves keys and rejects stale expectations") {
  TemporalIndex index;
  const auto id = ParticleId::mint(kT0, 1);
  const TemporalMetadata before{10, 10, 10, std::nullopt, std::nullopt};
  TemporalMetadata after = before;
  after.t_access = 500;
  index.insert(id, before);
  index.reindex(id, before, after);
  CHECK(index.range_query(TemporalField::t_access, 0, 100).empty());
  CHECK(index.range_query(TemporalField::t_access, 400, 600) == std::vector<ParticleId>{id});
  CHECK(code_of([&] { index.reindex(id, before, after); }) == ErrorCode::stale_value);
  CHECK(code_of([&] { index.reindex(ParticleId::mint(kT0, 2), before, after); }) == ErrorCode::not_found);
}

TEST_CASE("temporal index errors") {
  TemporalIndex index;
  const auto id = ParticleId::mint(kT0, 1);
  const TemporalMetadata m{10, 10, 10, std::nullopt, std::nullopt};
  index.insert(id, m);
  CHECK(code_of([&] { index.insert(id, m); }) == ErrorCode::duplicate_id);
  CHECK(code_of([&] { (void)index.range_query(TemporalField::t_create, 5, 4); }) == ErrorCode::inverted_range);
  index.remove(id);
  CHECK(index.size() == 0);
  CHECK(code_of([&] { index.remove(id); }) == ErrorCode::not_found);
}

TEST_CASE("field names round-trip") {
  for (auto f : kAllTemporalFields) CHECK(parse_temporal_field(to_string(f)) == f);
  CHECK_FALSE(parse_temporal_field("t_birth").has_value());
}
