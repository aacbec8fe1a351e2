#include "prismwf/pipeline.hpp"

#include <cstdio>

namespace prismwf {

DatasetManifest cmd_synth(const RunConfig& rc, std::uint64_t seed, const fs::path& out_dir) {
  rc.validate();
  const Dataset ds = build_dataset(rc.data, RngHandle{seed, 0});
  return write_dataset(out_dir, ds);
}

std::size_t cmd_featurize(const fs::path& data_dir, const RunConfig& rc) {
  rc.validate();
  const DatasetManifest m = load_manifest(data_dir);
  std::size_t written = 0;
  for (const auto& [split, entries] : m.splits) {
    for (const auto& e : entries) {
      const Trace t = read_trace(data_dir / e.trace);
      write_matrix(matrix_path_for(data_dir / e.trace),
                   featurize(t, rc.slot_seconds, rc.max_seconds));
      ++written;
    }
  }
  return written;
}

std::vector<Example> load_examples(const fs::path& data_dir, const DatasetManifest& m, Split s,
                                   const RunConfig& rc) {
  std::vector<Example> out;
  const auto it = m.splits.find(s);
  if (it == m.splits.end()) return out;
  for (const auto& e : it->second) {
    const fs::path trace_path = data_dir / e.trace;
    const fs::path matrix_path = matrix_path_for(trace_path);
    LabelVector label(m.num_classes(), e.labels);
    if (fs::is_regular_file(matrix_path)) {
      FeatureMatrix fm = read_matrix(matrix_path);
      if (fm.slot_seconds() == rc.slot_seconds && fm.max_seconds() == rc.max_seconds) {
        out.push_back({fm.values(), std::move(label)});
        continue;
      }
    }
    out.push_back({featurize(read_trace(trace_path), rc.slot_seconds, rc.max_seconds).values(),
                   std::move(label)});
  }
  return out;
}

TrainOutcome cmd_train(const fs::path& data_dir, RunConfig rc, std::uint64_t seed,
                       const fs::path& out_dir, const EpochCallback& on_epoch) {
  const DatasetManifest m = load_manifest(data_dir);
  rc.data.num_classes = m.num_classes();
  rc.data.tabs = m.spec.tabs;
  rc.finalize();
  rc.train.seed = seed;
  rc.validate();
  const PrismModel model(rc.model);
  const auto train = load_examples(data_dir, m, Split::kTrain, rc);
  const auto val = load_examples(data_dir, m, Split::kVal, rc);
  TrainResult r = train_loop(model, train, val, rc.train, std::nullopt, on_epoch);
  TrainOutcome out;
  out.checkpoint = out_dir / "model.ckpt";
  out.report_path = out_dir / "train_report.jsonl";
  out.checksum = save_checkpoint(out.checkpoint, rc.model, r.params);
  r.report.checkpoint_path = "model.ckpt";
  write_train_report(out.report_path, r.report);
  out.report = std::move(r.report);
  return out;
}

EvalResult evaluate(const PrismModel& model, const nn::ParamStore& params,
                    const std::vector<Example>& examples, KPolicy policy,
                    const std::vector<int>& ks) {
  std::vector<LabelVector> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(e.label);
  return evaluate_scores(predict(model, params, examples), labels, policy, ks);
}

std::string cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const RunConfig& rc,
                     const fs::path& out_dir, EvalResult* result) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const DatasetManifest m = load_manifest(data_dir);
  if (ck.config.num_classes != m.num_classes()) {
    throw Error("config_mismatch", "checkpoint has C=" + std::to_string(ck.config.num_classes) +
                                       " but the dataset has C=" + std::to_string(m.num_classes()));
  }
  const auto slots = slot_count(rc.max_seconds, rc.slot_seconds);
  if (ck.config.input_slots != slots) {
    throw Error("config_mismatch", "checkpoint expects L=" + std::to_string(ck.config.input_slots) +
                                       " but the feature settings give L=" + std::to_string(slots));
  }
  const PrismModel model(ck.config);
  load_checkpoint_for(checkpoint, model);
  const auto examples = load_examples(data_dir, m, rc.eval_split, rc);
  const EvalResult r = evaluate(model, ck.params, examples, rc.k_policy, rc.ks);
  const std::string table = format_eval_table(r);
  if (!out_dir.empty()) write_file(out_dir / "eval.tsv", table);
  if (result) *result = r;
  return table;
}

std::string cmd_gradcheck(const RunConfig& rc, GradCheckReport* result) {
  rc.model.validate();
  const GradCheckReport r = grad_check(rc.model, rc.gradcheck.tolerance, rc.gradcheck.options);
  std::string out = "array\tentries\tmax_rel_error\tmax_abs_error\n";
  char buf[256];
  for (const auto& a : r.arrays) {
    std::snprintf(buf, sizeof buf, "%s\t%lld\t%.3e\t%.3e\n", a.name.c_str(),
                  static_cast<long long>(a.entries), a.max_rel_error, a.max_abs_error);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "# max_rel_error=%.3e tolerance=%.1e %s\n", r.max_rel_error,
                r.tolerance, r.passed() ? "PASS" : "FAIL");
  out += buf;
  if (result) *result = r;
  return out;
}

}  // namespace prismwf
