// prismwf: synth | featurize | train | eval | gradcheck

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "prismwf/pipeline.hpp"

using namespace prismwf;

namespace {

struct Flags {
  std::string config;
  std::string out_dir;
  std::string data;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::vector<int> ks;
  std::string k_policy;
  std::string split;
  std::optional<int> epochs;
};

RunConfig resolve(const Flags& f) {
  RunConfig rc = f.config.empty() ? run_config_from_text("") : load_run_config(f.config);
  if (!f.ks.empty()) rc.ks = f.ks;
  if (!f.k_policy.empty()) rc.k_policy = parse_k_policy(f.k_policy);
  if (!f.split.empty()) rc.eval_split = parse_split(f.split);
  if (f.epochs) rc.train.epochs = *f.epochs;
  rc.finalize();
  return rc;
}

std::uint64_t require_seed(const Flags& f, const char* cmd) {
  if (!f.seed) throw Error("missing_seed", std::string(cmd) + " requires --seed");
  return *f.seed;
}

void require(const std::string& v, const char* flag) {
  if (v.empty()) throw Error("missing_argument", std::string(flag) + " is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity website fingerprinting on packet traces"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "run configuration file (INI)");
    sub->add_option("--out-dir", f.out_dir, "output directory");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  common(synth);
  synth->add_option("--seed", f.seed, "dataset seed");

  auto* feat = app.add_subcommand("featurize", "write feature matrices beside every trace");
  common(feat);
  feat->add_option("--data", f.data, "dataset directory (defaults to --out-dir)");

  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  train->add_option("--data", f.data, "dataset directory")->required();
  train->add_option("--seed", f.seed, "training seed");
  train->add_option("--epochs", f.epochs, "override the epoch count");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval);
  eval->add_option("--data", f.data, "dataset directory")->required();
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  eval->add_option("--k", f.ks, "cutoffs for the fixed policy")->delimiter(',');
  eval->add_option("--k-policy", f.k_policy, "fixed or per-instance");
  eval->add_option("--split", f.split, "train, val or test");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (*synth) {
      const auto seed = require_seed(f, "synth");
      require(f.out_dir, "--out-dir");
      const RunConfig rc = resolve(f);
      const auto m = cmd_synth(rc, seed, f.out_dir);
      std::size_t n = 0;
      for (const auto& [s, e] : m.splits) n += e.size();
      std::printf("wrote %zu traces to %s\n", n, f.out_dir.c_str());
    } else if (*feat) {
      const std::string dir = f.data.empty() ? f.out_dir : f.data;
      require(dir, "--data");
      const auto n = cmd_featurize(dir, resolve(f));
      std::printf("wrote %zu feature matrices\n", n);
    } else if (*train) {
      const auto seed = require_seed(f, "train");
      require(f.out_dir, "--out-dir");
      const auto out = cmd_train(f.data, resolve(f), seed, f.out_dir, [](const EpochRecord& r) {
        std::printf("%s\n", epoch_record_json(r).c_str());
        std::fflush(stdout);
      });
      std::printf("checkpoint %s checksum %s\n", out.checkpoint.string().c_str(),
                  hex64(out.checksum).c_str());
    } else if (*eval) {
      std::fputs(cmd_eval(f.checkpoint, f.data, resolve(f), f.out_dir).c_str(), stdout);
    } else if (*gc) {
      GradCheckReport r;
      std::fputs(cmd_gradcheck(resolve(f), &r).c_str(), stdout);
      if (!r.passed()) {
        std::cerr << "error: gradcheck_failed: max relative error " << r.max_rel_error
                  << " exceeds " << r.tolerance << "\n";
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
