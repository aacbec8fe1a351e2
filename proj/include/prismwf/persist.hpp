#pragma once

// On-disk formats: traces, feature matrices, dataset manifests, checkpoints,
// run configuration and training reports. Every format carries a version and
// readers reject versions they do not know.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prismwf/featurize.hpp"
#include "prismwf/metrics.hpp"
#include "prismwf/model.hpp"
#include "prismwf/synth.hpp"
#include "prismwf/train.hpp"

namespace prismwf {

namespace fs = std::filesystem;

inline constexpr int kTraceFormatVersion = 1;
inline constexpr int kMatrixFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Shortest round-trip fixed notation with at least six fractional digits.
std::string format_timestamp(double t);

std::string trace_to_text(const Trace& trace);
Trace trace_from_text(const std::string& text, const std::string& origin = "<memory>");
void write_trace(const fs::path& path, const Trace& trace);
Trace read_trace(const fs::path& path);

std::string matrix_to_bytes(const FeatureMatrix& m);
FeatureMatrix matrix_from_bytes(const std::string& bytes, const std::string& origin = "<memory>");
void write_matrix(const fs::path& path, const FeatureMatrix& m);
FeatureMatrix read_matrix(const fs::path& path);

struct ManifestEntry {
  std::string trace;  // relative to the dataset directory
  std::vector<int> labels;
};

struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::map<Split, std::vector<ManifestEntry>> splits;

  int num_classes() const { return spec.num_classes; }
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

// Writes traces under `dir`/traces/<split>/ and `dir`/manifest.json.
DatasetManifest write_dataset(const fs::path& dir, const Dataset& ds);
// Parses the manifest and checks that every referenced file exists.
DatasetManifest load_manifest(const fs::path& dir);
std::vector<Instance> load_split(const fs::path& dir, const DatasetManifest& m, Split s);
Split parse_split(const std::string& text);

// Path of the feature matrix that sits beside a trace file.
fs::path matrix_path_for(const fs::path& trace_path);

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

struct Checkpoint {
  ModelConfig config;
  nn::ParamStore params;
  std::uint64_t checksum = 0;
};

std::string checkpoint_to_bytes(const ModelConfig& config, const nn::ParamStore& params);
Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin = "<memory>");
// Returns the checksum written into the file.
std::uint64_t save_checkpoint(const fs::path& path, const ModelConfig& config,
                              const nn::ParamStore& params);
Checkpoint load_checkpoint(const fs::path& path);
// Loads and verifies that every array matches `model`'s layout.
Checkpoint load_checkpoint_for(const fs::path& path, const PrismModel& model);

struct GradCheckSettings {
  double tolerance = 1e-4;
  GradCheckOptions options;
};

struct RunConfig {
  DatasetSpec data;
  double slot_seconds = 0.02;
  double max_seconds = 160.0;
  ModelConfig model;
  TrainConfig train;
  KPolicy k_policy = KPolicy::kFixed;
  std::vector<int> ks{1, 2};
  Split eval_split = Split::kTest;
  GradCheckSettings gradcheck;

  // Propagates shared settings (L, C, loss) into the model and train parts.
  void finalize();
  void validate() const;
};

// INI-style text with [data] [defense] [features] [model] [train] [eval]
// [gradcheck] sections; unknown sections or keys are rejected.
RunConfig run_config_from_text(const std::string& text);
RunConfig load_run_config(const fs::path& path);

std::string epoch_record_json(const EpochRecord& r);
std::string train_report_jsonl(const TrainReport& report);
void write_train_report(const fs::path& path, const TrainReport& report);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

std::string hex64(std::uint64_t v);

}  // namespace prismwf
