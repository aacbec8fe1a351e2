#include "prismwf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace prismwf {

namespace {

void check_k(std::size_t classes, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > classes) {
    throw Error("invalid_argument", "K must lie in [1, C], got " + std::to_string(k));
  }
}

}  // namespace

std::vector<int> top_k(std::span<const double> scores, int k) {
  check_k(scores.size(), k);
  std::vector<int> ids(scores.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  });
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

double precision_at_k(std::span<const double> scores, const LabelVector& label, int k) {
  if (scores.size() != static_cast<std::size_t>(label.num_classes())) {
    throw Error("shape_mismatch", "score vector length differs from class count");
  }
  int hits = 0;
  for (int c : top_k(scores, k)) hits += label.contains(c) ? 1 : 0;
  return static_cast<double>(hits) / k;
}

double map_at_k(std::span<const double> scores, const LabelVector& label, int k) {
  if (scores.size() != static_cast<std::size_t>(label.num_classes())) {
    throw Error("shape_mismatch", "score vector length differs from class count");
  }
  const auto ranking = top_k(scores, k);
  int hits = 0;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    hits += label.contains(ranking[static_cast<std::size_t>(i)]) ? 1 : 0;
    sum += static_cast<double>(hits) / (i + 1);
  }
  return sum / k;
}

KPolicy parse_k_policy(const std::string& text) {
  if (text == "fixed") return KPolicy::kFixed;
  if (text == "per-instance") return KPolicy::kPerInstance;
  throw Error("invalid_argument", "k policy must be fixed or per-instance, got " + text);
}

const char* k_policy_name(KPolicy policy) {
  return policy == KPolicy::kFixed ? "fixed" : "per-instance";
}

EvalResult evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const std::vector<LabelVector>& labels, KPolicy policy,
                           const std::vector<int>& ks) {
  if (scores.size() != labels.size()) {
    throw Error("shape_mismatch", "one score vector per label required");
  }
  if (scores.empty()) throw Error("invalid_argument", "cannot evaluate an empty split");
  EvalResult result;
  result.policy = policy;
  result.instances = scores.size();
  const auto n = static_cast<double>(scores.size());
  if (policy == KPolicy::kPerInstance) {
    MetricRow row;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const int k = static_cast<int>(labels[i].cardinality());
      row.precision += precision_at_k(scores[i], labels[i], k);
      row.map += map_at_k(scores[i], labels[i], k);
    }
    row.precision /= n;
    row.map /= n;
    result.rows.push_back(row);
    return result;
  }
  if (ks.empty()) throw Error("invalid_argument", "fixed K policy needs at least one K");
  for (int k : ks) {
    MetricRow row{k, 0.0, 0.0};
    for (std::size_t i = 0; i < scores.size(); ++i) {
      row.precision += precision_at_k(scores[i], labels[i], k);
      row.map += map_at_k(scores[i], labels[i], k);
    }
    row.precision /= n;
    row.map /= n;
    result.rows.push_back(row);
  }
  return result;
}

std::string format_eval_table(const EvalResult& result) {
  std::string out = "# prismwf-eval v1\tpolicy=" + std::string(k_policy_name(result.policy)) +
                    "\tinstances=" + std::to_string(result.instances) + "\n";
  out += "metric\tK\tvalue\n";
  char buf[96];
  for (const auto& row : result.rows) {
    const std::string k = row.k == 0 ? "|y|" : std::to_string(row.k);
    std::snprintf(buf, sizeof buf, "P@K\t%s\t%.6f\n", k.c_str(), row.precision);
    out += buf;
    std::snprintf(buf, sizeof buf, "MAP@K\t%s\t%.6f\n", k.c_str(), row.map);
    out += buf;
  }
  return out;
}

}  // namespace prismwf
