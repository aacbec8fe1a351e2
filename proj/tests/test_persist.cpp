#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "fixtures.hpp"
#include "prismwf/persist.hpp"

using namespace prismwf;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("prismwf_test_persist_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename F>
std::string error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("timestamps keep at least six decimals and round-trip") {
  CHECK(format_timestamp(0.0) == "0.000000");
  CHECK(format_timestamp(1.5) == "1.500000");
  CHECK(format_timestamp(0.1 + 0.2) == "0.30000000000000004");
  CHECK(format_timestamp(1e-9) == "0.000000001");
  Rng r({1, 0});
  for (int i = 0; i < 1000; ++i) {
    const double t = r.uniform(0.0, 200.0) * (i % 3 == 0 ? 1e-6 : 1.0);
    const std::string s = format_timestamp(t);
    CHECK(s.size() - s.find('.') - 1 >= 6);
    CHECK(std::stod(s) == t);
  }
}

TEST_CASE("trace text round-trip") {
  Rng r({2, 0});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PacketEvent> ev;
    for (int i = 0; i < 40; ++i) ev.emplace_back(r.uniform(0.0, 10.0), r.uniform() < 0.5 ? 1 : -1);
    const Trace t(ev, trial % 2 ? std::optional<int>(trial) : std::nullopt);
    CHECK(trace_from_text(trace_to_text(t)) == t);
  }
  CHECK(trace_from_text("").empty());
}

TEST_CASE("trace parsing") {
  const Trace t = trace_from_text("# a comment\n0.5\t-1\n\n0.25\t1\n");
  REQUIRE(t.size() == 2);
  CHECK(t.events()[0] == PacketEvent(0.25, 1));
  CHECK(error_code([] { trace_from_text("# prismwf-trace v2\n0.1\t1\n"); }) == "unsupported_version");
  CHECK(error_code([] { trace_from_text("0.1 1\n"); }) == "parse_error");
  CHECK(error_code([] { trace_from_text("0.1\t0\n"); }) == "parse_error");
  CHECK(error_code([] { trace_from_text("abc\t1\n"); }) == "parse_error");
  CHECK(error_code([] { read_trace("/nonexistent/trace"); }) == "missing_file");
}

TEST_CASE("matrix round-trip and tamper detection") {
  Rng r({3, 0});
  Eigen::MatrixXd v(6, 8);
  for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = r.normal();
  const FeatureMatrix m(v, 0.02, 0.16);
  const std::string bytes = matrix_to_bytes(m);
  CHECK(bytes.rfind("PRISMWF-MATRIX 1 rows=6 cols=8 dt=0.02 T=0.16\n", 0) == 0);
  CHECK(matrix_from_bytes(bytes) == m);

  std::string cut = bytes.substr(0, bytes.size() - 8);
  CHECK(error_code([&] { matrix_from_bytes(cut); }) == "shape_mismatch");
  std::string cols = bytes;
  cols.replace(cols.find("cols=8"), 6, "cols=7");
  CHECK(error_code([&] { matrix_from_bytes(cols); }) == "shape_mismatch");
  std::string ver = bytes;
  ver.replace(ver.find(" 1 "), 3, " 2 ");
  CHECK(error_code([&] { matrix_from_bytes(ver); }) == "unsupported_version");
  CHECK(error_code([] { matrix_from_bytes("garbage\n"); }) == "corrupt_file");
}

TEST_CASE("checkpoint round-trip, checksum and shape checks") {
  const auto cfg = fixture::tiny_config();
  const PrismModel model(cfg);
  Rng r({4, 0});
  auto p = model.init_params({4, 0});
  fixture::randomize(p, r);
  const std::string bytes = checkpoint_to_bytes(cfg, p);
  const Checkpoint ck = checkpoint_from_bytes(bytes);
  CHECK(ck.config == cfg);
  REQUIRE(ck.params.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(ck.params.array(i).name == p.array(i).name);
    CHECK(ck.params.array(i).trainable == p.array(i).trainable);
    CHECK(ck.params[i] == p[i]);
  }
  CHECK(checkpoint_to_bytes(cfg, p) == bytes);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 1;
  CHECK(error_code([&] { checkpoint_from_bytes(flipped); }) == "checksum_mismatch");
  CHECK(error_code([&] { checkpoint_from_bytes("PRISMWFX" + bytes.substr(8)); }) == "corrupt_file");

  const fs::path dir = scratch("ckpt");
  const auto sum = save_checkpoint(dir / "m.ckpt", cfg, p);
  CHECK(sum == ck.checksum);
  CHECK_NOTHROW(load_checkpoint_for(dir / "m.ckpt", model));
  ModelConfig wider = cfg;
  wider.ffn_width = 17;
  CHECK(error_code([&] { load_checkpoint_for(dir / "m.ckpt", PrismModel(wider)); }) == "shape_mismatch");
}

TEST_CASE("model config json round-trip") {
  ModelConfig c;
  c.kernels = {9, 3};
  c.loss_mode = LossMode::kSingle;
  c.router_interaction = false;
  c.conv_channels = {8, 8, 16, 16, 256, 256};
  CHECK(model_config_from_json(model_config_to_json(c)) == c);
}

TEST_CASE("dataset directory and manifest") {
  DatasetSpec s;
  s.num_classes = 4;
  s.tabs = 2;
  s.instances_per_combination = 2;
  s.defense = FrontParams{10, 12, 0.25, 1.5};
  const Dataset ds = build_dataset(s, {5, 0});
  const fs::path dir = scratch("dataset");
  const auto written = write_dataset(dir, ds);
  const auto m = load_manifest(dir);
  CHECK(m.seed == 5);
  CHECK(m.spec.defense == s.defense);
  CHECK(m.spec.generator == s.generator);
  CHECK(m.splits.at(Split::kTrain).size() == ds.train.size());
  const auto train = load_split(dir, m, Split::kTrain);
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].trace == ds.train[i].trace);
    CHECK(train[i].label == ds.train[i].label);
  }
  CHECK(manifest_from_json(manifest_to_json(m)).splits.at(Split::kTest).size() == ds.test.size());

  fs::remove(dir / m.splits.at(Split::kTrain)[0].trace);
  CHECK(error_code([&] { load_manifest(dir); }) == "missing_file");

  std::string text = manifest_to_json(m);
  text.replace(text.find("\"format_version\": 1"), 19, "\"format_version\": 9");
  CHECK(error_code([&] { manifest_from_json(text); }) == "unsupported_version");
}

TEST_CASE("run config parsing") {
  const RunConfig d = run_config_from_text("");
  CHECK(d.slot_seconds == 0.02);
  CHECK(d.max_seconds == 160.0);
  CHECK(d.model.input_slots == 8000);
  CHECK(d.model.d == 256);
  CHECK(d.model.loss_mode == LossMode::kMulti);
  CHECK_FALSE(d.data.defense);
  CHECK_NOTHROW(d.validate());

  const RunConfig rc = run_config_from_text(
      "[data]\nclasses = 6\ntabs = 1\n"
      "[defense]\nwindow_max = 2.5\n"
      "[features]\nmax_seconds = 10.24\n"
      "[model]\nd = 64\nkernels = 15, 11, 7, 5\nblocks = 2\nheads = 4\n"
      "[train]\nepochs = 3\ntarget_train_precision = 0.9\n"
      "[eval]\nk = 1,3\nk_policy = per-instance\nsplit = val\n"
      "[gradcheck]\ntolerance = 1e-5\n");
  CHECK(rc.data.num_classes == 6);
  CHECK(rc.model.num_classes == 6);
  CHECK(rc.model.input_slots == 512);
  CHECK(rc.model.loss_mode == LossMode::kSingle);
  CHECK(rc.train.loss_mode == LossMode::kSingle);
  CHECK(rc.data.defense->window_max == 2.5);
  CHECK(rc.data.defense->max_client_dummies == 150);
  CHECK(rc.model.kernels == std::vector<int>{15, 11, 7, 5});
  CHECK(rc.ks == std::vector<int>{1, 3});
  CHECK(rc.k_policy == KPolicy::kPerInstance);
  CHECK(rc.eval_split == Split::kVal);
  CHECK(rc.train.target_train_precision == 0.9);
  CHECK(rc.gradcheck.tolerance == 1e-5);

  CHECK(error_code([] { run_config_from_text("[model]\nwidth = 3\n"); }) == "invalid_config");
  CHECK(error_code([] { run_config_from_text("[nope]\nx = 1\n"); }) == "invalid_config");
  CHECK(error_code([] { run_config_from_text("[model]\nd = abc\n"); }) == "parse_error");
  CHECK_THROWS_AS(run_config_from_text("[model]\nheads = 7\n").validate(), Error);
}

TEST_CASE("train report lines") {
  TrainReport r;
  EpochRecord e;
  e.epoch = 1;
  e.loss = 0.5;
  e.val_map = 0.25;
  r.epochs = {e};
  r.checkpoint_path = "model.ckpt";
  const std::string text = train_report_jsonl(r);
  CHECK(text == "{\"epoch\":1,\"loss\":0.5,\"type\":\"epoch\",\"val_map\":0.25}\n"
                "{\"checkpoint\":\"model.ckpt\",\"epochs\":1,\"stopped_early\":false,\"type\":\"summary\"}\n");
}
