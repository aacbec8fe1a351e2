#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "fixtures.hpp"
#include "prismwf/featurize.hpp"

using namespace prismwf;

TEST_CASE("reference configuration") {
  const ModelConfig c;
  CHECK(c.branches() == 4);
  CHECK(c.kernels == std::vector<int>{15, 11, 7, 5});
  CHECK(c.d == 256);
  CHECK(c.blocks == 3);
  CHECK(c.heads == 8);
  CHECK(c.w_intra == 5);
  CHECK(c.w_inter == 3);
  CHECK(c.ffn_width == 1024);
  CHECK(c.input_slots == 8000);
  const auto n = c.token_counts();
  CHECK(std::set<int>(n.begin(), n.end()).size() == 4);
  CHECK_NOTHROW(c.validate());
  const PrismModel m(c);
  CHECK(m.layout()[*m.layout().find("head.weight")].cols() == 4 * 256);
}

TEST_CASE("token count recurrence") {
  ModelConfig c = fixture::tiny_config();
  c.kernels = {5};
  c.pools = {2, 2, 2};
  // 64 -> 56 -> 28 -> 20 -> 10 -> 2 -> 1
  CHECK(c.token_counts() == std::vector<int>{1});
  c.pools = {1, 2, 1};
  // 64 -> 60 -> 56 -> 52 -> 48 -> 24 -> 20 -> 16
  CHECK(c.token_counts() == std::vector<int>{16});
  const PrismModel m(c);
  auto p = m.init_params({1, 0});
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 64);
  const auto out = m.branch_forward(p, 0, {&x}, nn::ForwardMode::eval(), nullptr, nullptr, nullptr);
  CHECK(out[0].rows() == 16);
  CHECK(out[0].cols() == 8);
  const auto again = m.branch_forward(p, 0, {&x}, nn::ForwardMode::eval(), nullptr, nullptr, nullptr);
  CHECK(out[0] == again[0]);
}

TEST_CASE("invalid configurations are rejected") {
  auto bad = [](auto edit) {
    ModelConfig c = fixture::tiny_config();
    edit(c);
    CHECK_THROWS_AS(c.validate(), Error);
  };
  bad([](ModelConfig& c) { c.heads = 3; });
  bad([](ModelConfig& c) { c.w_intra = 4; });
  bad([](ModelConfig& c) { c.w_inter = 0; });
  bad([](ModelConfig& c) { c.kernels = {}; });
  bad([](ModelConfig& c) { c.input_slots = 20; });
  bad([](ModelConfig& c) { c.dropout = 1.0; });
  bad([](ModelConfig& c) { c.pools = {3, 3}; });
  bad([](ModelConfig& c) { c.conv_channels = {2, 2, 2, 2, 2, 4}; });
}

TEST_CASE("router injection") {
  const auto c = fixture::tiny_config();
  const PrismModel m(c);
  auto p = m.init_params({2, 0});
  Rng r({2, 0});
  const Eigen::MatrixXd patches = fixture::random_mat(8, 8, r);
  const std::size_t pos = *p.find("branch0.positional");
  p[pos].setZero();
  const TokenSet s = m.inject_router(p, 0, patches);
  CHECK(s.tokens.rows() == 9);
  CHECK(s.patch_rows() == patches);
  CHECK(s.router_row() == p[*p.find("branch0.router")]);
  CHECK_FALSE(p[*p.find("branch0.router")] == p[*p.find("branch1.router")]);
  CHECK_THROWS_AS(m.inject_router(p, 1, patches), Error);
}

TEST_CASE("parameter layout is a function of the config") {
  const auto c = fixture::tiny_config();
  const PrismModel a(c), b(c);
  CHECK(a.layout().same_layout(b.layout()));
  CHECK(a.layout().trainable_count() == b.layout().trainable_count());
  CHECK(a.init_params({3, 0}).same_layout(a.layout()));

  ModelConfig no_gi = c;
  no_gi.inter_granularity = false;
  ModelConfig no_ri = c;
  no_ri.router_interaction = false;
  CHECK_FALSE(PrismModel(no_gi).layout().find("block0.inter0.attn.q.weight"));
  CHECK_FALSE(PrismModel(no_ri).layout().find("block0.router_mix.attn.q.weight"));
  CHECK(a.layout().find("block0.inter0.attn.q.weight"));
}

TEST_CASE("coarse to fine ordering") {
  ModelConfig c = fixture::tiny_config();
  c.kernels = {5, 7};
  const PrismModel m(c);
  CHECK(m.granularity_order() == std::vector<int>{1, 0});
  CHECK(m.blocks()[0].inter[0].coarse == 1);
  CHECK(m.blocks()[0].inter[0].fine == 0);
}

TEST_CASE("forward matches the straight-line oracle") {
  for (int variant = 0; variant < 4; ++variant) {
    ModelConfig c = fixture::tiny_config();
    c.inter_granularity = variant != 2;
    c.router_interaction = variant != 1;
    if (variant == 3) c.kernels = {7, 5, 3};
    CAPTURE(variant);
    const PrismModel m(c);
    Rng r({static_cast<std::uint64_t>(variant), 4});
    auto p = m.init_params({1, 0});
    fixture::randomize(p, r, 0.3);
    for (int trial = 0; trial < 3; ++trial) {
      Eigen::MatrixXd x(6, 64);
      for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = r.uniform(0.0, 3.0);
      const Eigen::VectorXd got = m.forward(p, x);
      const Eigen::RowVectorXd want = oracle::forward(c, p, x);
      REQUIRE(got.size() == 5);
      CHECK((got.transpose() - want).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(m.forward(p, x) == got);
    }
  }
}

TEST_CASE("eval batches agree with single forwards") {
  const auto c = fixture::tiny_config();
  const PrismModel m(c);
  Rng r({8, 0});
  auto p = m.init_params({1, 0});
  fixture::randomize(p, r, 0.3);
  std::vector<Eigen::MatrixXd> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(fixture::random_mat(6, 64, r).cwiseAbs());
  std::vector<const Eigen::MatrixXd*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  const auto batch = m.forward_batch(p, ptrs, nn::ForwardMode::eval(), nullptr, nullptr);
  for (int i = 0; i < 3; ++i) {
    CHECK((batch.row(i) - m.forward(p, xs[static_cast<std::size_t>(i)]).transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("train-mode dropout depends on the stream, eval does not") {
  ModelConfig c = fixture::tiny_config();
  c.dropout = 0.5;
  const PrismModel m(c);
  auto p = m.init_params({1, 0});
  Rng r({9, 0});
  const Eigen::MatrixXd x = fixture::random_mat(6, 64, r).cwiseAbs();
  Rng a({1, 0}), b({1, 0}), other({2, 0});
  const auto ya = m.forward_batch(p, {&x, &x}, nn::ForwardMode::train(), &a, nullptr);
  const auto yb = m.forward_batch(p, {&x, &x}, nn::ForwardMode::train(), &b, nullptr);
  const auto yo = m.forward_batch(p, {&x, &x}, nn::ForwardMode::train(), &other, nullptr);
  CHECK(ya == yb);
  CHECK_FALSE(ya == yo);
  CHECK_THROWS_AS(m.forward_batch(p, {&x}, nn::ForwardMode::train(), nullptr, nullptr), Error);
  const Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(6, 63);
  CHECK_THROWS_AS(m.forward(p, wrong), Error);
}

TEST_CASE("running statistics move toward batch statistics") {
  const auto c = fixture::tiny_config();
  const PrismModel m(c);
  auto p = m.init_params({1, 0});
  Rng r({10, 0});
  const Eigen::MatrixXd x = fixture::random_mat(6, 64, r).cwiseAbs() * 5.0;
  BatchTape tape;
  m.forward_batch(p, {&x, &x}, {true, false}, nullptr, &tape);
  const auto before = p;
  m.update_running_stats(p, tape, 0.1);
  const std::size_t mean = *p.find("branch0.block0.bn1.running_mean");
  CHECK_FALSE(p[mean] == before[mean]);
  CHECK(p[*p.find("head.weight")] == before[*p.find("head.weight")]);
}
