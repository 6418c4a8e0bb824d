#pragma once

#include "moco/metrics.hpp"
#include "moco/motion.hpp"
#include "moco/nn/network.hpp"
#include "moco/nn/train.hpp"
#include "moco/phantom.hpp"
#include "moco/preprocess.hpp"
#include "moco/volume.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace moco::pipeline {

namespace fs = std::filesystem;

struct DatasetConfig {
  Dims dims{64, 64, 64};
  Spacing spacing{4.0, 4.0, 4.0};
  int n_train = 20;
  int n_test = 5;
  int motions_per_phantom = 5;
  PhantomConfig phantom;
  TrajectoryConfig trajectory;
  ForegroundConfig foreground;
  int slice_axis = 1;                  // slices contain the phase-encode axis
  double min_slice_foreground = 0.05;  // fraction of slice pixels
  int train_slice_stride = 1;
  std::uint64_t seed = 0;
  void validate() const;
};

nlohmann::json dataset_config_to_json(DatasetConfig const &cfg);
DatasetConfig dataset_config_from_json(nlohmann::json const &j, DatasetConfig base = {});

// One corrupted acquisition of one phantom. Paths are relative to the
// dataset root.
struct SampleEntry {
  std::string id;
  std::string phantom_id;
  int motion_index = 0;
  std::uint64_t phantom_seed = 0;
  std::uint64_t trajectory_seed = 0;
  std::string phantom_spec;
  std::string clean_volume;
  std::string clean_mask;
  std::string trajectory;
  std::string corrupted_volume;
  std::string corrupted_mask;
  NormalizationRecord clean_record;
  NormalizationRecord corrupted_record;
  std::vector<int> slices;
  TrajectoryStats stats;
  int events = 0;
};

struct DatasetManifest {
  std::string split; // "train" or "test"
  fs::path root;     // not serialized; set when loading
  DatasetConfig config;
  std::vector<SampleEntry> entries;
  void validate() const;
};

struct DatasetPair {
  DatasetManifest train;
  DatasetManifest test;
};

// Seeds per phantom and per trajectory come from derive_seed on the master
// seed with (split, phantom index, motion index) counters.
std::uint64_t phantom_seed(std::uint64_t master, std::string const &split, int phantom_index);
std::uint64_t trajectory_seed(std::uint64_t master, std::string const &split, int phantom_index, int motion_index);

// Writes <root>/<split>/... artifacts and <root>/<split>_manifest.json.
DatasetPair build_dataset(fs::path const &root, DatasetConfig const &cfg);

nlohmann::json manifest_to_json(DatasetManifest const &m);
DatasetManifest manifest_from_json(nlohmann::json const &j, fs::path root);
void write_manifest(fs::path const &path, DatasetManifest const &m);
// Checks every referenced file exists and matches the recorded dims.
DatasetManifest load_manifest(fs::path const &path);

// Normalized slice pair of one sample: corrupted input (own mask and record)
// and clean target (clean mask and record).
struct SlicePair {
  Image2D input;
  Image2D target;
  Mask2D input_mask;
  Mask2D target_mask;
};

struct LoadedSample {
  Volume clean;
  Volume corrupted;
  ForegroundMask clean_mask;
  ForegroundMask corrupted_mask;
  Volume clean_normalized;
  Volume corrupted_normalized;
};

LoadedSample load_sample(DatasetManifest const &m, SampleEntry const &e);
SlicePair slice_pair(LoadedSample const &s, int axis, int index);

nn::SliceDataset load_training_slices(DatasetManifest const &m);

// Writes weights.json/.bin and loss.csv ("iteration,loss") into out_dir.
nn::TrainResult run_training(DatasetManifest const &m, nn::NetworkConfig const &net_cfg,
                             nn::TrainConfig const &train_cfg, fs::path const &out_dir);

// Pristine model from the clean slices of every training phantom (each
// phantom once), foreground-restricted and sharpness-selected.
metrics::MvgModel fit_pristine(DatasetManifest const &m, metrics::NiqeConfig const &cfg);

struct EvaluationRow {
  std::string sample_id;
  std::string phantom_id;
  int motion_index = 0;
  int events = 0;
  int slices = 0;
  double mean_abs_translation = 0.0;
  double mean_abs_rotation = 0.0;
  double mean_center_distance = 0.0;
  double error_input = 0.0;            // mean of per-slice percentage errors
  double error_corrected = 0.0;
  double error_input_volume = 0.0;     // pooled over the evaluated slices
  double error_corrected_volume = 0.0;
  double niqe_before = 0.0;
  double niqe_after = 0.0;
  bool flagged = false;
};

struct Aggregate {
  std::vector<double> mean;
  std::vector<double> std; // sample standard deviation (n - 1)
};

struct SampleFailure {
  std::string sample_id;
  std::string message;
};

struct EvaluationReport {
  std::vector<EvaluationRow> rows; // ascending mean_center_distance
  Aggregate aggregate;
  metrics::ImprovementSummary niqe;
  std::vector<SampleFailure> failures;
};

// Numeric report columns, in CSV order after the identifying columns.
std::vector<std::string> numeric_columns();
std::vector<double> numeric_values(EvaluationRow const &r);
Aggregate aggregate_rows(std::vector<EvaluationRow> const &rows);

// Runs correction and scoring on every test sample and writes report.csv,
// niqe_scores.csv, failures.json and error images under out_dir.
EvaluationReport run_evaluation(DatasetManifest const &m, nn::NetworkParameters const &net,
                                metrics::MvgModel const &pristine, metrics::NiqeConfig const &cfg,
                                fs::path const &out_dir);

std::string report_csv(EvaluationReport const &r);
std::string niqe_csv(EvaluationReport const &r);

// Foreground, normalization, slice-wise correction along `axis`, then
// renormalization to the input statistics. Slices below the foreground
// threshold are passed through.
Volume correct_volume(nn::NetworkParameters const &net, Volume const &v, ForegroundConfig const &fg, int axis,
                      double min_slice_foreground = 0.05);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<double const> a, std::span<double const> b);

// Locale-independent shortest round-trip formatting.
std::string format_number(double x);

} // namespace moco::pipeline
