#pragma once

// Ranking metrics for multi-label website identification.

#include <span>
#include <string>
#include <vector>

#include "prismwf/core.hpp"

namespace prismwf {

// K largest scores, descending; ties go to the smaller class id.
std::vector<int> top_k(std::span<const double> scores, int k);

// (1/K) * |top-K ∩ active|.
double precision_at_k(std::span<const double> scores, const LabelVector& label, int k);

// (1/K) * sum_{i=1..K} P@i over one ranking.
double map_at_k(std::span<const double> scores, const LabelVector& label, int k);

enum class KPolicy { kFixed, kPerInstance };

KPolicy parse_k_policy(const std::string& text);
const char* k_policy_name(KPolicy policy);

struct MetricRow {
  int k = 0;  // 0 for the per-instance policy
  double precision = 0.0;
  double map = 0.0;
};

struct EvalResult {
  KPolicy policy = KPolicy::kFixed;
  std::vector<MetricRow> rows;
  std::size_t instances = 0;

  // First row, the common single-K case.
  const MetricRow& primary() const { return rows.at(0); }
};

// Mean metrics over instances. For kFixed one row per entry of `ks`; for
// kPerInstance a single row with K = |active| per instance.
EvalResult evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const std::vector<LabelVector>& labels,
                           KPolicy policy, const std::vector<int>& ks);

// Tab-separated table: header then one line per (metric, K).
std::string format_eval_table(const EvalResult& result);

}  // namespace prismwf
