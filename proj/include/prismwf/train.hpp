#pragma once

// Losses, the optimization loop, and the finite-difference gradient check.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prismwf/core.hpp"
#include "prismwf/model.hpp"

namespace prismwf {

// -log softmax(logits)[y] for a single active class.
double loss_single(std::span<const double> logits, const LabelVector& label);
// Mean over classes of binary cross-entropy with logits.
double loss_multi(std::span<const double> logits, const LabelVector& label);
// Loss for `mode` plus its gradient w.r.t. the logits.
double loss_with_grad(LossMode mode, std::span<const double> logits,
                      const LabelVector& label, Eigen::RowVectorXd* grad);

struct Example {
  nn::Mat features;  // (6 x L)
  LabelVector label;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::kMulti;
  // Validation (and optional training-set) metrics every this many epochs.
  int report_every = 1;
  // Stop once training-set P@K (per-instance K) reaches this value.
  std::optional<double> target_train_precision;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  std::optional<double> val_precision;
  std::optional<double> val_map;
  std::optional<double> train_precision;
  std::optional<double> train_map;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  bool stopped_early = false;
  std::string checkpoint_path;
};

struct TrainResult {
  nn::ParamStore params;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam with bias correction, global-norm clipping and deterministic
// shuffling. Starts from `init` when given, else from a seed-derived init.
TrainResult train_loop(const PrismModel& model, const std::vector<Example>& train,
                       const std::vector<Example>& val, const TrainConfig& config,
                       std::optional<nn::ParamStore> init = std::nullopt,
                       const EpochCallback& on_epoch = {});

// Eval-mode logits for each example.
std::vector<std::vector<double>> predict(const PrismModel& model, const nn::ParamStore& params,
                                         const std::vector<Example>& examples);

struct ArrayGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Eigen::Index entries = 0;
};

struct GradCheckReport {
  std::vector<ArrayGradError> arrays;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-6;
  std::uint64_t seed = 7;
  int batch = 1;
  // Train-mode batch statistics instead of frozen running estimates.
  bool batch_stats = false;
  // Only arrays whose name contains this substring are checked.
  std::string array_filter;
  // Test hook: modifies the analytic gradient before comparison.
  std::function<void(nn::ParamStore&)> corrupt;
};

GradCheckReport grad_check(const ModelConfig& config, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace prismwf
