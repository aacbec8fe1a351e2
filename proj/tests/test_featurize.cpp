#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "prismwf/featurize.hpp"
#include "prismwf/rng.hpp"

using namespace prismwf;

namespace {

Trace random_trace(Rng& r, int max_n, double max_t) {
  std::vector<PacketEvent> ev;
  const auto n = r.uniform_int(0, max_n);
  for (std::int64_t i = 0; i < n; ++i) {
    ev.emplace_back(r.uniform(0.0, max_t), r.uniform() < 0.5 ? 1 : -1);
  }
  return Trace(std::move(ev));
}

}  // namespace

TEST_CASE("slot index boundaries") {
  CHECK(slot_index(0.0, 0.02) == 1);
  CHECK(slot_index(0.02, 0.02) == 2);
  CHECK(slot_index(0.0399, 0.02) == 2);
  for (int j = 1; j < 2000; ++j) {
    const double left = (j - 1) * 0.02;
    CHECK(slot_index(left, 0.02) == j);
    CHECK(slot_index(std::nextafter(j * 0.02, 0.0), 0.02) == j);
  }
}

TEST_CASE("slot count") {
  CHECK(slot_count(160.0, 0.02) == 8000);
  CHECK(slot_count(0.04, 0.02) == 2);
  CHECK(slot_count(0.05, 0.02) == 3);
  CHECK(slot_count(10.24, 0.02) == 512);
  CHECK_THROWS_AS(slot_count(0.0, 0.02), Error);
  CHECK_THROWS_AS(slot_count(1.0, 0.0), Error);
  CHECK_THROWS_AS(slot_count(1.0, -1.0), Error);
}

TEST_CASE("worked four-packet example") {
  const Trace t({PacketEvent(0.005, 1), PacketEvent(0.010, -1), PacketEvent(0.015, -1),
                 PacketEvent(0.030, 1)});
  const auto m = featurize(t, 0.02, 0.04).values();
  REQUIRE(m.rows() == 6);
  REQUIRE(m.cols() == 2);
  Eigen::MatrixXd want(6, 2);
  want << 1, 1,
          2, 0,
          1, 0,
          0, 0,
          0.010 - 0.005, 0,
          0, 0;
  CHECK(m == want);
}

TEST_CASE("empty trace gives the all-zero default matrix") {
  const auto m = featurize(Trace(), 0.02, 160.0);
  CHECK(m.slots() == 8000);
  CHECK(m.values().isZero(0.0));
}

TEST_CASE("packets at or past T are dropped") {
  const Trace t({PacketEvent(0.01, 1), PacketEvent(0.04, -1), PacketEvent(0.07, -1)});
  const auto m = featurize(t, 0.02, 0.04).values();
  CHECK(m.row(kOutCount).sum() == 1);
  CHECK(m.row(kInCount).sum() == 0);
}

TEST_CASE("cross-slot transitions are not counted") {
  const Trace t({PacketEvent(0.019, 1), PacketEvent(0.021, -1)});
  const auto m = featurize(t, 0.02, 0.04).values();
  CHECK(m.row(kOutInTransitions).sum() == 0);
  CHECK(m.row(kOutInMeanGap).sum() == 0);
}

TEST_CASE("channel masks zero rows but keep the shape") {
  const Trace t({PacketEvent(0.001, 1), PacketEvent(0.002, -1), PacketEvent(0.003, 1)});
  const auto full = featurize(t, 0.02, 0.04).values();
  const auto counts = featurize(t, 0.02, 0.04, {true, false, false}).values();
  CHECK(counts.rows() == 6);
  CHECK(counts.topRows(2) == full.topRows(2));
  CHECK(counts.bottomRows(4).isZero(0.0));
  const auto gaps = featurize(t, 0.02, 0.04, {false, false, true}).values();
  CHECK(gaps.topRows(4).isZero(0.0));
  CHECK(gaps.bottomRows(2) == full.bottomRows(2));
  CHECK_THROWS_AS(featurize(t, 0.02, 0.04, {false, false, false}), Error);
}

TEST_CASE("matches the naive per-slot scan on random traces") {
  Rng r({2024, 0});
  for (int trial = 0; trial < 200; ++trial) {
    const double dt = r.uniform(0.005, 0.1);
    const double T = r.uniform(0.1, 5.0);
    const Trace t = random_trace(r, 300, T * 1.2);
    const auto got = featurize(t, dt, T).values();
    const auto want = oracle::naive_features(t.events(), dt, T, static_cast<int>(got.cols()));
    REQUIRE(got.topRows(4) == want.topRows(4));
    REQUIRE((got.bottomRows(2) - want.bottomRows(2)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("structural properties on random traces") {
  Rng r({77, 0});
  for (int trial = 0; trial < 100; ++trial) {
    const double dt = r.uniform(0.005, 0.1);
    const double T = r.uniform(0.1, 3.0);
    const Trace t = random_trace(r, 200, T * 1.5);
    const auto m = featurize(t, dt, T).values();
    int kept = 0;
    for (const auto& e : t.events()) kept += e.timestamp() < T ? 1 : 0;
    CHECK(m.topRows(2).sum() == kept);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double n = m(0, j) + m(1, j);
      CHECK(m(2, j) + m(3, j) <= std::max(0.0, n - 1));
      if (m(2, j) == 0) CHECK(m(4, j) == 0);
      if (m(3, j) == 0) CHECK(m(5, j) == 0);
      if (n == 0) CHECK(m.col(j).isZero(0.0));
      CHECK(m.col(j).minCoeff() >= 0);
    }

    // Negating directions swaps the paired rows.
    std::vector<PacketEvent> flipped;
    for (const auto& e : t.events()) flipped.emplace_back(e.timestamp(), -e.direction());
    const auto f = featurize(Trace(flipped), dt, T).values();
    CHECK(f.row(0) == m.row(1));
    CHECK(f.row(1) == m.row(0));
    CHECK(f.row(2) == m.row(3));
    CHECK(f.row(3) == m.row(2));
    CHECK(f.row(4) == m.row(5));
    CHECK(f.row(5) == m.row(4));
  }
}

TEST_CASE("featurize is pure") {
  Rng r({3, 0});
  const Trace t = random_trace(r, 100, 1.0);
  CHECK(featurize(t, 0.01, 1.0) == featurize(t, 0.01, 1.0));
}
