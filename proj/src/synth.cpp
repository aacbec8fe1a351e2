#include "prismwf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prismwf {

std::size_t SiteProfile::packet_count() const {
  std::size_t n = 0;
  for (const auto& b : bursts) {
    for (int r : b.runs) n += static_cast<std::size_t>(std::abs(r));
  }
  return n;
}

void FrontParams::validate() const {
  if (max_client_dummies < 0 || max_server_dummies < 0) {
    throw Error("invalid_config", "front dummy maxima must be >= 0");
  }
  if (!(window_min > 0.0) || !(window_min <= window_max)) {
    throw Error("invalid_config", "front needs 0 < window_min <= window_max");
  }
}

SiteProfile gen_site_profile(int class_id, const RngHandle& handle,
                             const GeneratorParams& p) {
  if (class_id < 0) throw Error("invalid_argument", "class id must be >= 0");
  Rng rng(handle);
  SiteProfile profile;
  profile.class_id = class_id;
  profile.jitter = p.jitter;
  const auto bursts = rng.uniform_int(p.min_bursts, p.max_bursts);
  for (std::int64_t b = 0; b < bursts; ++b) {
    BurstSpec burst;
    const auto runs = rng.uniform_int(p.min_runs, p.max_runs);
    for (std::int64_t r = 0; r < runs; ++r) {
      // Runs alternate, starting with a client request.
      if (r % 2 == 0) {
        burst.runs.push_back(static_cast<int>(rng.uniform_int(1, p.max_out_run)));
      } else {
        burst.runs.push_back(
            -static_cast<int>(rng.uniform_int(2, p.max_in_run)));
      }
    }
    burst.packet_gap = rng.uniform(p.min_packet_gap, p.max_packet_gap);
    burst.gap_after = rng.uniform(p.min_burst_gap, p.max_burst_gap);
    profile.bursts.push_back(std::move(burst));
  }
  // The opening exchange encodes the class id, so two classes never share
  // a run-length signature.
  auto& opening = profile.bursts.front().runs;
  opening[0] = 1 + class_id % 4;
  opening[1] = -(2 + class_id / 4);
  return profile;
}

Trace gen_trace(const SiteProfile& profile, const RngHandle& handle,
                const GeneratorParams& p) {
  Rng rng(handle);
  std::vector<PacketEvent> events;
  events.reserve(profile.packet_count());
  const double jitter = profile.jitter;
  double burst_start = 0.0;
  for (std::size_t b = 0; b < profile.bursts.size(); ++b) {
    const auto& burst = profile.bursts[b];
    if (b > 0 && jitter > 0.0) {
      burst_start = std::max(0.0, burst_start + rng.normal(0.0, p.burst_drift * jitter));
    }
    double t = burst_start;
    for (int run : burst.runs) {
      const int dir = run > 0 ? 1 : -1;
      for (int k = 0; k < std::abs(run); ++k) {
        double ts = t;
        if (jitter > 0.0) ts = std::max(0.0, ts + jitter * std::abs(rng.normal()));
        events.emplace_back(ts, dir);
        t += burst.packet_gap;
      }
    }
    burst_start = t - burst.packet_gap + burst.gap_after;
  }
  return validate_trace(std::move(events), profile.class_id);
}

std::pair<Trace, LabelVector> mix_tabs(const std::vector<Trace>& traces,
                                       const std::vector<double>& offsets,
                                       int num_classes) {
  if (traces.empty() || traces.size() != offsets.size()) {
    throw Error("invalid_argument",
                "mix_tabs needs one offset per trace and at least one trace");
  }
  std::vector<int> classes;
  std::size_t total = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto origin = traces[i].origin_class();
    if (!origin || *origin < 0 || *origin >= num_classes) {
      throw Error("invalid_argument", "tab trace lacks a valid origin class");
    }
    if (std::find(classes.begin(), classes.end(), *origin) != classes.end()) {
      throw Error("duplicate_class",
                  "tabs must be distinct websites, class " +
                      std::to_string(*origin) + " repeated");
    }
    if (!(offsets[i] >= 0.0) || !std::isfinite(offsets[i])) {
      throw Error("invalid_argument", "tab offsets must be finite and >= 0");
    }
    classes.push_back(*origin);
    total += traces[i].size();
  }
  std::vector<PacketEvent> merged;
  merged.reserve(total);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    for (const auto& e : traces[i].events()) {
      merged.emplace_back(e.timestamp() + offsets[i], e.direction());
    }
  }
  // Stable sort: equal timestamps keep tab order.
  return {Trace(std::move(merged)), LabelVector(num_classes, std::move(classes))};
}

Trace front_pad(const Trace& trace, const FrontParams& params,
                const RngHandle& handle) {
  params.validate();
  if (trace.empty()) throw Error("invalid_argument", "cannot pad an empty trace");
  Rng rng(handle);
  const auto n_client = rng.uniform_int(0, params.max_client_dummies);
  const auto n_server = rng.uniform_int(0, params.max_server_dummies);
  const double window = rng.uniform(params.window_min, params.window_max);
  const double end = trace.duration();

  std::vector<PacketEvent> events = trace.events();
  events.reserve(events.size() + static_cast<std::size_t>(n_client + n_server));
  auto inject = [&](std::int64_t count, int dir) {
    for (std::int64_t k = 0; k < count; ++k) {
      events.emplace_back(std::min(rng.rayleigh(window), end), dir);
    }
  };
  inject(n_client, 1);
  inject(n_server, -1);
  return Trace(std::move(events), trace.origin_class());
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw Error("invalid_config", "need at least 2 classes");
  if (tabs < 0) throw Error("invalid_config", "tabs must be >= 1 or mixed");
  if (tabs > num_classes) {
    throw Error("invalid_config", "tabs (" + std::to_string(tabs) +
                                      ") exceeds class count");
  }
  if (mixed() && num_classes < 2) {
    throw Error("invalid_config", "mixed tabs need at least 2 classes");
  }
  if (instances_per_combination < 1) {
    throw Error("invalid_config", "instances_per_combination must be >= 1");
  }
  if (!(offset_max >= 0.0)) throw Error("invalid_config", "offset_max < 0");
  if (train_fraction < 0 || val_fraction < 0 ||
      train_fraction + val_fraction > 1.0) {
    throw Error("invalid_config", "split fractions must sum to <= 1");
  }
  if (defense) defense->validate();
}

const std::vector<Instance>& Dataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    default: return test;
  }
}

std::vector<Instance>& Dataset::split(Split s) {
  return const_cast<std::vector<Instance>&>(std::as_const(*this).split(s));
}

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// k distinct classes out of n, ascending.
std::vector<int> sample_combination(int n, int k, Rng& rng) {
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = rng.uniform_int(i, n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
  }
  std::vector<int> out(all.begin(), all.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<int>> enumerate_combinations(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(k));
  std::iota(cur.begin(), cur.end(), 0);
  while (true) {
    out.push_back(cur);
    int i = k - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++cur[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) {
      cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return out;
}

}  // namespace

Dataset build_dataset(const DatasetSpec& spec, const RngHandle& root) {
  spec.validate();
  const int C = spec.num_classes;

  std::vector<SiteProfile> profiles;
  const RngHandle profile_root = rng_fork(root, "profiles");
  for (int c = 0; c < C; ++c) {
    profiles.push_back(gen_site_profile(
        c, rng_fork(profile_root, "class", static_cast<std::uint64_t>(c)),
        spec.generator));
  }

  // Class sets, one entry per instance.
  std::vector<std::vector<int>> tab_sets;
  const int base_tabs = spec.mixed() ? 2 : spec.tabs;
  const double n_comb = binomial(C, base_tabs);
  if (!spec.mixed() && n_comb <= spec.max_combinations) {
    for (const auto& comb : enumerate_combinations(C, spec.tabs)) {
      for (int r = 0; r < spec.instances_per_combination; ++r) tab_sets.push_back(comb);
    }
  } else {
    Rng comb_rng(rng_fork(root, "combinations"));
    const auto combos = static_cast<int>(
        std::min<double>(n_comb, static_cast<double>(spec.max_combinations)));
    const int max_mixed = std::min(5, C);
    for (int i = 0; i < combos; ++i) {
      for (int r = 0; r < spec.instances_per_combination; ++r) {
        const int k = spec.mixed()
                          ? static_cast<int>(comb_rng.uniform_int(2, max_mixed))
                          : spec.tabs;
        tab_sets.push_back(sample_combination(C, k, comb_rng));
      }
    }
  }

  std::vector<Instance> instances;
  instances.reserve(tab_sets.size());
  const RngHandle inst_root = rng_fork(root, "instance");
  for (std::size_t idx = 0; idx < tab_sets.size(); ++idx) {
    const RngHandle inst = rng_fork(inst_root, "i", idx);
    Rng offset_rng(rng_fork(inst, "offsets"));
    std::vector<Trace> tabs;
    std::vector<double> offsets;
    for (std::size_t t = 0; t < tab_sets[idx].size(); ++t) {
      const int c = tab_sets[idx][t];
      tabs.push_back(gen_trace(profiles[static_cast<std::size_t>(c)],
                               rng_fork(inst, "tab", t), spec.generator));
      offsets.push_back(tab_sets[idx].size() == 1
                            ? 0.0
                            : offset_rng.uniform(0.0, spec.offset_max));
    }
    auto [merged, label] = mix_tabs(tabs, offsets, C);
    Trace trace = validate_trace(merged);
    if (spec.defense && !trace.empty()) {
      trace = front_pad(trace, *spec.defense, rng_fork(inst, "front"));
    }
    instances.push_back(Instance{std::move(trace), std::move(label)});
  }

  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(rng_fork(root, "split"));
  split_rng.shuffle(order.begin(), order.end());
  const auto n = order.size();
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * n));

  Dataset ds{spec, root, {}, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? ds.train : (i < n_train + n_val ? ds.val : ds.test);
    dst.push_back(instances[order[i]]);
  }
  return ds;
}

std::vector<Instance> pad_split(const std::vector<Instance>& instances,
                                const FrontParams& params,
                                const RngHandle& rng) {
  std::vector<Instance> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& in = instances[i];
    out.push_back(Instance{
        in.trace.empty() ? in.trace : front_pad(in.trace, params, rng_fork(rng, "pad", i)),
        in.label});
  }
  return out;
}

}  // namespace prismwf
