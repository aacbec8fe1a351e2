#pragma once

// Synthetic labeled website traffic, multi-tab mixing and a simplified
// Front-style padding defense.

#include <optional>
#include <utility>
#include <vector>

#include "prismwf/core.hpp"
#include "prismwf/rng.hpp"

namespace prismwf {

// One burst: signed run lengths (+a = a outgoing packets, -b = b incoming).
struct BurstSpec {
  std::vector<int> runs;
  double packet_gap = 0.0;  // nominal spacing inside the burst
  double gap_after = 0.0;   // idle time before the next burst

  friend bool operator==(const BurstSpec&, const BurstSpec&) = default;
};

struct SiteProfile {
  int class_id = 0;
  std::vector<BurstSpec> bursts;
  double jitter = 0.0;  // per-packet timing noise scale, seconds

  std::size_t burst_count() const { return bursts.size(); }
  std::size_t packet_count() const;

  friend bool operator==(const SiteProfile&, const SiteProfile&) = default;
};

// Ranges the profile generator samples from.
struct GeneratorParams {
  int min_bursts = 4;
  int max_bursts = 9;
  int min_runs = 2;
  int max_runs = 6;
  int max_out_run = 4;
  int max_in_run = 24;
  double min_packet_gap = 0.0005;
  double max_packet_gap = 0.004;
  double min_burst_gap = 0.02;
  double max_burst_gap = 0.35;
  double jitter = 0.002;
  // Burst start drift, as a multiple of `jitter`.
  double burst_drift = 8.0;

  friend bool operator==(const GeneratorParams&,
                         const GeneratorParams&) = default;
};

struct FrontParams {
  int max_client_dummies = 150;
  int max_server_dummies = 150;
  double window_min = 0.5;
  double window_max = 3.0;

  void validate() const;
  friend bool operator==(const FrontParams&, const FrontParams&) = default;
};

SiteProfile gen_site_profile(int class_id, const RngHandle& rng,
                             const GeneratorParams& params = {});

Trace gen_trace(const SiteProfile& profile, const RngHandle& rng,
                const GeneratorParams& params = {});

std::pair<Trace, LabelVector> mix_tabs(const std::vector<Trace>& traces,
                                       const std::vector<double>& offsets,
                                       int num_classes);

Trace front_pad(const Trace& trace, const FrontParams& params,
                const RngHandle& rng);

struct Instance {
  Trace trace;
  LabelVector label;
};

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split split);

struct DatasetSpec {
  int num_classes = 10;
  int tabs = 2;  // 0 means mixed: 2..5 tabs drawn per instance
  int instances_per_combination = 5;
  double offset_max = 5.0;
  std::optional<FrontParams> defense;
  GeneratorParams generator;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  // Above this many class combinations, combinations are sampled.
  int max_combinations = 5000;

  bool mixed() const { return tabs == 0; }
  void validate() const;
};

struct Dataset {
  DatasetSpec spec;
  RngHandle seed;
  std::vector<Instance> train;
  std::vector<Instance> val;
  std::vector<Instance> test;

  const std::vector<Instance>& split(Split s) const;
  std::vector<Instance>& split(Split s);
};

Dataset build_dataset(const DatasetSpec& spec, const RngHandle& rng);

// Applies front_pad to every trace of a split, one forked stream each.
std::vector<Instance> pad_split(const std::vector<Instance>& instances,
                                const FrontParams& params,
                                const RngHandle& rng);

}  // namespace prismwf
