#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>

#include "prismwf/featurize.hpp"
#include "prismwf/synth.hpp"

using namespace prismwf;

namespace {

bool is_subsequence(const std::vector<PacketEvent>& small, const std::vector<PacketEvent>& big) {
  std::size_t i = 0;
  for (const auto& e : big) {
    if (i < small.size() && e == small[i]) ++i;
  }
  return i == small.size();
}

}  // namespace

TEST_CASE("site profiles are deterministic and distinct") {
  const RngHandle seed{10, 0};
  CHECK(gen_site_profile(3, seed) == gen_site_profile(3, seed));
  CHECK_FALSE(gen_site_profile(0, {1, 0}) == gen_site_profile(0, {2, 0}));
  std::vector<SiteProfile> ps;
  for (int c = 0; c < 10; ++c) ps.push_back(gen_site_profile(c, seed));
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) {
      const auto& ra = ps[static_cast<std::size_t>(a)].bursts.front().runs;
      const auto& rb = ps[static_cast<std::size_t>(b)].bursts.front().runs;
      CHECK((ra[0] != rb[0] || ra[1] != rb[1]));
    }
  }
  CHECK_THROWS_AS(gen_site_profile(-1, seed), Error);
}

TEST_CASE("zero jitter reproduces the nominal schedule") {
  SiteProfile p;
  p.class_id = 1;
  p.jitter = 0.0;
  p.bursts = {BurstSpec{{2, -3}, 0.001, 0.1}, BurstSpec{{1, -1}, 0.002, 0.0}};
  const Trace t = gen_trace(p, {1, 0});
  REQUIRE(t.size() == 7);
  const std::vector<double> want{0.0, 0.001, 0.002, 0.003, 0.004, 0.004 + 0.1, 0.004 + 0.1 + 0.002};
  const std::vector<int> dirs{1, 1, -1, -1, -1, 1, -1};
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(t.events()[i].timestamp() == want[i]);
    CHECK(t.events()[i].direction() == dirs[i]);
  }
  CHECK(t.origin_class() == 1);
}

TEST_CASE("generated traces are sorted, start at zero and keep the packet count") {
  for (int c = 0; c < 8; ++c) {
    const auto p = gen_site_profile(c, {5, 0});
    const Trace t = gen_trace(p, {static_cast<std::uint64_t>(c), 1});
    CHECK(t.size() == p.packet_count());
    CHECK(t.events().front().timestamp() == 0.0);
    CHECK(std::is_sorted(t.events().begin(), t.events().end(),
                         [](const auto& a, const auto& b) { return a.timestamp() < b.timestamp(); }));
    CHECK(gen_trace(p, {static_cast<std::uint64_t>(c), 1}) == t);
  }
}

TEST_CASE("mix_tabs") {
  const Trace a({PacketEvent(0.0, 1), PacketEvent(0.5, -1), PacketEvent(1.0, 1)}, 2);
  const Trace b({PacketEvent(0.0, -1), PacketEvent(0.25, 1)}, 4);

  auto [one, y1] = mix_tabs({a}, {0.0}, 5);
  CHECK(one.events() == a.events());
  CHECK(y1.active() == std::vector<int>{2});

  auto [m, y] = mix_tabs({a, b}, {0.0, 0.5}, 5);
  CHECK(m.size() == 5);
  CHECK(y.active() == std::vector<int>{2, 4});
  // a's 0.5 packet and b's shifted 0.0 packet collide; tab order decides.
  CHECK(m.events()[1] == PacketEvent(0.5, -1));
  CHECK(m.events()[2] == PacketEvent(0.5, -1));
  CHECK(m.events()[3] == PacketEvent(0.75, 1));

  const Trace c({PacketEvent(0.0, 1)}, 2);
  try {
    mix_tabs({a, c}, {0.0, 0.0}, 5);
    FAIL("duplicate classes accepted");
  } catch (const Error& e) {
    CHECK(e.code() == "duplicate_class");
  }
  CHECK_THROWS_AS(mix_tabs({a}, {0.0, 1.0}, 5), Error);
  CHECK_THROWS_AS(mix_tabs({a}, {-1.0}, 5), Error);
  CHECK_THROWS_AS(mix_tabs({a}, {0.0}, 2), Error);
}

TEST_CASE("collision order follows tab index") {
  const Trace a({PacketEvent(0.0, 1)}, 0);
  const Trace b({PacketEvent(0.0, -1)}, 1);
  auto [ab, y1] = mix_tabs({a, b}, {0.0, 0.0}, 2);
  auto [ba, y2] = mix_tabs({b, a}, {0.0, 0.0}, 2);
  CHECK(ab.events()[0].direction() == 1);
  CHECK(ba.events()[0].direction() == -1);
}

TEST_CASE("front padding") {
  const auto p = gen_site_profile(1, {3, 0});
  const Trace t = gen_trace(p, {3, 1});

  CHECK(front_pad(t, {0, 0, 0.5, 3.0}, {1, 0}) == t);

  const FrontParams fp;
  const Trace padded = front_pad(t, fp, {8, 0});
  CHECK(front_pad(t, fp, {8, 0}) == padded);
  CHECK(is_subsequence(t.events(), padded.events()));
  CHECK(padded.size() >= t.size());
  CHECK(padded.size() <= t.size() + 300);
  for (const auto& e : padded.events()) {
    CHECK(e.timestamp() >= 0.0);
    CHECK(e.timestamp() <= t.duration());
  }

  // Replaying the draw order gives the expected dummy counts.
  Rng r({8, 0});
  const auto nc = r.uniform_int(0, fp.max_client_dummies);
  const auto ns = r.uniform_int(0, fp.max_server_dummies);
  CHECK(padded.size() == t.size() + static_cast<std::size_t>(nc + ns));
  std::size_t out = 0, orig_out = 0;
  for (const auto& e : padded.events()) out += e.direction() > 0;
  for (const auto& e : t.events()) orig_out += e.direction() > 0;
  CHECK(out == orig_out + static_cast<std::size_t>(nc));

  CHECK_THROWS_AS(front_pad(Trace(), fp, {1, 0}), Error);
  CHECK_THROWS_AS(front_pad(t, {1, 1, 0.0, 1.0}, {1, 0}), Error);
  CHECK_THROWS_AS(front_pad(t, {1, 1, 2.0, 1.0}, {1, 0}), Error);
  CHECK_THROWS_AS(front_pad(t, {-1, 1, 0.5, 1.0}, {1, 0}), Error);
}

TEST_CASE("dataset sizes and label cardinality") {
  DatasetSpec s;
  s.num_classes = 10;
  s.tabs = 2;
  s.instances_per_combination = 5;
  const Dataset ds = build_dataset(s, {1, 0});
  CHECK(ds.train.size() + ds.val.size() + ds.test.size() == 5 * 45);
  std::map<std::vector<int>, int> counts;
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& in : ds.split(sp)) {
      CHECK(in.label.cardinality() == 2);
      ++counts[in.label.active()];
    }
  }
  CHECK(counts.size() == 45);
  for (const auto& [k, v] : counts) CHECK(v == 5);

  s.tabs = 1;
  const Dataset single = build_dataset(s, {1, 0});
  for (const auto& in : single.train) CHECK(in.label.is_single());

  s.tabs = 0;
  const Dataset mixed = build_dataset(s, {1, 0});
  std::set<std::size_t> sizes;
  for (const auto& in : mixed.train) sizes.insert(in.label.cardinality());
  CHECK(*sizes.begin() >= 2);
  CHECK(*sizes.rbegin() <= 5);
  CHECK(sizes.size() > 1);

  s.tabs = 11;
  CHECK_THROWS_AS(build_dataset(s, {1, 0}), Error);
}

TEST_CASE("dataset generation is deterministic") {
  DatasetSpec s;
  s.num_classes = 5;
  s.tabs = 3;
  s.instances_per_combination = 2;
  s.defense = FrontParams{};
  const Dataset a = build_dataset(s, {4, 0});
  const Dataset b = build_dataset(s, {4, 0});
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].trace == b.train[i].trace);
    CHECK(a.train[i].label == b.train[i].label);
  }
}

TEST_CASE("nearest-centroid separability of single-tab features") {
  const int C = 10, per_class = 20;
  const RngHandle root{99, 0};
  std::vector<Eigen::MatrixXd> centroids(C, Eigen::MatrixXd::Zero(6, 8000));
  std::vector<std::vector<Eigen::MatrixXd>> held(C);
  for (int c = 0; c < C; ++c) {
    const auto profile = gen_site_profile(c, rng_fork(root, "profile", static_cast<std::uint64_t>(c)));
    for (int i = 0; i < 2 * per_class; ++i) {
      const Trace t = gen_trace(profile, rng_fork(root, "trace", static_cast<std::uint64_t>(c * 1000 + i)));
      const auto m = featurize(t, 0.02, 160.0).values();
      if (i < per_class) centroids[static_cast<std::size_t>(c)] += m / per_class;
      else held[static_cast<std::size_t>(c)].push_back(m);
    }
  }
  int correct = 0;
  for (int c = 0; c < C; ++c) {
    for (const auto& m : held[static_cast<std::size_t>(c)]) {
      int best = 0;
      double best_d = 1e300;
      for (int k = 0; k < C; ++k) {
        const double d = (m - centroids[static_cast<std::size_t>(k)]).squaredNorm();
        if (d < best_d) { best_d = d; best = k; }
      }
      correct += best == c;
    }
  }
  const double acc = static_cast<double>(correct) / (C * per_class);
  MESSAGE("nearest-centroid accuracy " << acc);
  CHECK(acc >= 0.9);
}
