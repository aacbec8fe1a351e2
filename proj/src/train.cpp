#include "prismwf/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "prismwf/featurize.hpp"
#include "prismwf/metrics.hpp"

namespace prismwf {

using nn::Mat;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_logits(std::span<const double> logits, const LabelVector& label) {
  if (logits.size() != static_cast<std::size_t>(label.num_classes())) {
    throw Error("shape_mismatch", "logit count differs from class count");
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double loss_single(std::span<const double> logits, const LabelVector& label) {
  return loss_with_grad(LossMode::kSingle, logits, label, nullptr);
}

double loss_multi(std::span<const double> logits, const LabelVector& label) {
  return loss_with_grad(LossMode::kMulti, logits, label, nullptr);
}

double loss_with_grad(LossMode mode, std::span<const double> logits, const LabelVector& label,
                      Eigen::RowVectorXd* grad) {
  check_logits(logits, label);
  const auto C = static_cast<Eigen::Index>(logits.size());
  if (grad) grad->resize(C);
  if (mode == LossMode::kSingle) {
    if (!label.is_single()) {
      throw Error("invalid_label", "single-tab loss needs exactly one active class");
    }
    const int y = label.active().front();
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    if (grad) {
      for (Eigen::Index c = 0; c < C; ++c) {
        (*grad)(c) = std::exp(logits[static_cast<std::size_t>(c)] - lse) - (c == y ? 1.0 : 0.0);
      }
    }
    return lse - logits[static_cast<std::size_t>(y)];
  }
  double total = 0.0;
  for (Eigen::Index c = 0; c < C; ++c) {
    const double o = logits[static_cast<std::size_t>(c)];
    const bool active = label.contains(static_cast<int>(c));
    total += active ? softplus(-o) : softplus(o);
    if (grad) (*grad)(c) = (sigmoid(o) - (active ? 1.0 : 0.0)) / static_cast<double>(C);
  }
  return total / static_cast<double>(C);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error("invalid_config", m); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (learning_rate < 0) fail("learning_rate must be >= 0");
  if (clip_norm <= 0) fail("clip_norm must be positive");
  if (report_every < 1) fail("report_every must be >= 1");
}

std::vector<std::vector<double>> predict(const PrismModel& model, const nn::ParamStore& params,
                                         const std::vector<Example>& examples) {
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const Eigen::VectorXd logits = model.forward(params, ex.features);
    out.emplace_back(logits.data(), logits.data() + logits.size());
  }
  return out;
}

namespace {

struct Adam {
  nn::ParamStore m, v;
  long step = 0;
};

double global_norm(const nn::ParamStore& g) {
  double sq = 0.0;
  for (const auto& a : g.arrays()) {
    if (a.trainable) sq += a.value.squaredNorm();
  }
  return std::sqrt(sq);
}

void adam_update(nn::ParamStore& p, const nn::ParamStore& g, Adam& state,
                 const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p.array(i).trainable) continue;
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i].cwiseAbs2();
    p[i].array() -= cfg.learning_rate * (m.array() / bc1) /
                    ((v.array() / bc2).sqrt() + cfg.adam_eps);
  }
}

std::pair<double, double> per_instance_metrics(const PrismModel& model, const nn::ParamStore& p,
                                               const std::vector<Example>& examples) {
  std::vector<LabelVector> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) labels.push_back(ex.label);
  const auto r = evaluate_scores(predict(model, p, examples), labels, KPolicy::kPerInstance, {});
  return {r.primary().precision, r.primary().map};
}

}  // namespace

TrainResult train_loop(const PrismModel& model, const std::vector<Example>& train,
                       const std::vector<Example>& val, const TrainConfig& cfg,
                       std::optional<nn::ParamStore> init, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.loss_mode != model.config().loss_mode) {
    throw Error("invalid_config", "train loss mode differs from the model's loss mode");
  }
  const auto start = std::chrono::steady_clock::now();
  const RngHandle root{cfg.seed, 0};
  nn::ParamStore params = init ? std::move(*init) : model.init_params(rng_fork(root, "init"));
  if (!params.same_layout(model.layout())) {
    throw Error("shape_mismatch", "initial parameters do not match the model layout");
  }
  TrainResult result{params, {}};
  if (cfg.epochs == 0) return result;
  if (train.empty()) throw Error("invalid_argument", "training split is empty");
  for (const auto& ex : train) {
    if (ex.label.num_classes() != model.config().num_classes) {
      throw Error("shape_mismatch", "label class count differs from the model");
    }
    if (cfg.loss_mode == LossMode::kSingle && !ex.label.is_single()) {
      throw Error("invalid_config", "single-tab loss requires single-class labels");
    }
  }

  Adam adam{params.zeros_like(), params.zeros_like(), 0};
  nn::ParamStore grads = params.zeros_like();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    Rng shuffle(rng_fork(root, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Mat*> inputs;
      for (std::size_t i = begin; i < end; ++i) inputs.push_back(&train[order[i]].features);
      Rng dropout(rng_fork(root, "dropout",
                           static_cast<std::uint64_t>(epoch) * 1000003ULL + batch_index));
      BatchTape tape;
      const Mat logits =
          model.forward_batch(params, inputs, nn::ForwardMode::train(), &dropout, &tape);
      const auto B = static_cast<double>(inputs.size());
      Mat dlogits(logits.rows(), logits.cols());
      for (Eigen::Index s = 0; s < logits.rows(); ++s) {
        const Eigen::RowVectorXd row = logits.row(s);
        Eigen::RowVectorXd g;
        const double l = loss_with_grad(cfg.loss_mode, std::span<const double>(row.data(), row.size()),
                                        train[order[begin + static_cast<std::size_t>(s)]].label, &g);
        if (!std::isfinite(l)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << " batch " << batch_index << " sample "
              << order[begin + static_cast<std::size_t>(s)];
          throw Error("non_finite_loss", msg.str());
        }
        loss_sum += l;
        dlogits.row(s) = g / B;
      }
      grads.set_zero();
      model.backward_batch(params, tape, dlogits, grads);
      const double norm = global_norm(grads);
      if (norm > cfg.clip_norm) {
        const double scale = cfg.clip_norm / norm;
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] *= scale;
      }
      adam_update(params, grads, adam, cfg);
      model.update_running_stats(params, tape, cfg.bn_momentum);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train.size());
    const bool report = epoch % cfg.report_every == 0 || epoch == cfg.epochs;
    bool stop = false;
    if (report && !val.empty()) {
      std::tie(rec.val_precision, rec.val_map) = per_instance_metrics(model, params, val);
    }
    if (report && cfg.target_train_precision) {
      std::tie(rec.train_precision, rec.train_map) = per_instance_metrics(model, params, train);
      stop = *rec.train_precision >= *cfg.target_train_precision;
    }
    rec.seconds = seconds_since(epoch_start);
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stop) {
      result.report.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  result.params = std::move(params);
  result.report.wall_seconds = seconds_since(start);
  return result;
}

// ------------------------------------------------------------ grad check

namespace {

LabelVector random_label(int classes, LossMode mode, Rng& rng) {
  if (mode == LossMode::kSingle || classes == 1) {
    return LabelVector(classes, {static_cast<int>(rng.uniform_int(0, classes - 1))});
  }
  std::vector<int> active;
  for (int c = 0; c < classes; ++c) {
    if (rng.uniform() < 0.4) active.push_back(c);
  }
  if (active.empty()) active.push_back(static_cast<int>(rng.uniform_int(0, classes - 1)));
  return LabelVector(classes, active);
}

}  // namespace

GradCheckReport grad_check(const ModelConfig& config, double tolerance,
                           const GradCheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  const PrismModel model(config);
  const RngHandle root{opt.seed, 0};
  nn::ParamStore params = model.init_params(rng_fork(root, "init"));
  // Move every array off its structured init (unit gains, zero offsets) so
  // each term of the gradient is exercised.
  Rng jitter(rng_fork(root, "jitter"));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& a = params.array(i);
    const bool is_var = a.name.ends_with("running_var");
    for (Eigen::Index k = 0; k < a.value.size(); ++k) {
      if (is_var) {
        a.value.data()[k] = jitter.uniform(0.5, 2.0);
      } else {
        a.value.data()[k] += 0.1 * jitter.normal();
      }
    }
  }

  Rng data(rng_fork(root, "data"));
  std::vector<Mat> inputs;
  std::vector<LabelVector> labels;
  for (int b = 0; b < opt.batch; ++b) {
    Mat x(kFeatureRows, config.input_slots);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = data.uniform(0.0, 3.0);
    inputs.push_back(std::move(x));
    labels.push_back(random_label(config.num_classes, config.loss_mode, data));
  }
  std::vector<const Mat*> ptrs;
  for (const auto& x : inputs) ptrs.push_back(&x);
  const nn::ForwardMode mode{opt.batch_stats, false};

  auto loss_of = [&](const Mat& logits, Mat* dlogits) {
    double total = 0.0;
    const auto B = static_cast<double>(logits.rows());
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
      const Eigen::RowVectorXd row = logits.row(s);
      Eigen::RowVectorXd g;
      total += loss_with_grad(config.loss_mode, std::span<const double>(row.data(), row.size()),
                              labels[static_cast<std::size_t>(s)], dlogits ? &g : nullptr);
      if (dlogits) dlogits->row(s) = g / B;
    }
    return total / B;
  };

  BatchTape tape;
  Mat dlogits;
  loss_of(model.forward_batch(params, ptrs, mode, nullptr, &tape), &dlogits);
  nn::ParamStore grads = params.zeros_like();
  model.backward_batch(params, tape, dlogits, grads);
  if (opt.corrupt) opt.corrupt(grads);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& arr = params.array(i);
    if (!arr.trainable) continue;
    if (!opt.array_filter.empty() && arr.name.find(opt.array_filter) == std::string::npos) continue;
    ArrayGradError err{arr.name, 0.0, 0.0, arr.value.size()};
    for (Eigen::Index k = 0; k < arr.value.size(); ++k) {
      double& w = params[i].data()[k];
      const double saved = w;
      w = saved + opt.step;
      const double up = loss_of(model.forward_batch(params, ptrs, mode, nullptr, nullptr), nullptr);
      w = saved - opt.step;
      const double down = loss_of(model.forward_batch(params, ptrs, mode, nullptr, nullptr), nullptr);
      w = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = grads[i].data()[k];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.denominator_floor});
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      err.max_rel_error = std::max(err.max_rel_error, abs_err / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.arrays.push_back(std::move(err));
  }
  report.seconds = seconds_since(start);
  return report;
}

}  // namespace prismwf
