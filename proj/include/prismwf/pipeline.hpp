#pragma once

// The five command-line operations as library calls.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prismwf/persist.hpp"

namespace prismwf {

// Generates a dataset from `rc.data` and writes it under `out_dir`.
DatasetManifest cmd_synth(const RunConfig& rc, std::uint64_t seed, const fs::path& out_dir);

// Writes a matrix file beside every trace; returns how many were written.
std::size_t cmd_featurize(const fs::path& data_dir, const RunConfig& rc);

// Feature matrices for one split. Uses matrix files written by
// cmd_featurize when their dt/T agree with `rc`, else featurizes traces.
std::vector<Example> load_examples(const fs::path& data_dir, const DatasetManifest& m, Split s,
                                   const RunConfig& rc);

struct TrainOutcome {
  TrainReport report;
  std::uint64_t checksum = 0;
  fs::path checkpoint;
  fs::path report_path;
};

// Trains on the train split (val split for monitoring); writes
// model.ckpt and train_report.jsonl under `out_dir`.
TrainOutcome cmd_train(const fs::path& data_dir, RunConfig rc, std::uint64_t seed,
                       const fs::path& out_dir, const EpochCallback& on_epoch = {});

// Evaluates a checkpoint on `rc.eval_split`; writes eval.tsv under
// `out_dir` when it is non-empty. Returns the table text.
std::string cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const RunConfig& rc,
                     const fs::path& out_dir, EvalResult* result = nullptr);

// Evaluation of an in-memory model on prepared examples.
EvalResult evaluate(const PrismModel& model, const nn::ParamStore& params,
                    const std::vector<Example>& examples, KPolicy policy,
                    const std::vector<int>& ks);

// Runs the gradient check on `rc.model`; returns a per-array report.
std::string cmd_gradcheck(const RunConfig& rc, GradCheckReport* result = nullptr);

}  // namespace prismwf
