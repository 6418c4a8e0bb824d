#pragma once

#include "moco/volume.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace moco::metrics {

// 100 * sum_fg |out - ref| / sum_fg |ref|.
double percentage_error(std::span<double const> out, std::span<double const> ref, std::span<std::uint8_t const> mask);
double percentage_error(Volume const &out, Volume const &ref, ForegroundMask const &mask);
double percentage_error(Image2D const &out, Image2D const &ref, Mask2D const &mask);

double gamma_fn(double x);

// rho(alpha) = Gamma(2/alpha)^2 / (Gamma(1/alpha) Gamma(3/alpha)), the value
// of E[|x|]^2 / E[x^2] for a zero-mean generalized Gaussian of shape alpha.
// Monotone increasing in alpha.
double ggd_moment_ratio(double alpha);

struct GgdFit {
  double alpha = 2.0;
  double variance = 1.0;
};

struct AggdFit {
  double alpha = 2.0;
  double mean = 0.0;
  double left_variance = 1.0;
  double right_variance = 1.0;
};

constexpr double kShapeMin = 0.05;
constexpr double kShapeMax = 10.0;

// Moment matching; shape by bisection on ggd_moment_ratio over
// [kShapeMin, kShapeMax] (tolerance 1e-6).
GgdFit fit_ggd(std::span<double const> samples, std::size_t min_samples = 100);
AggdFit fit_aggd(std::span<double const> samples, std::size_t min_samples = 100);

struct NiqeConfig {
  int window = 7;
  double window_sigma = 7.0 / 6.0;
  double stabilizer = 1.0;   // C
  int patch_size = 16;
  double sharpness_fraction = 0.75;
  int scales = 2;
  double min_foreground_fraction = 0.75;
  double intensity_scale = 255.0; // applied to normalized images before scoring
  std::size_t min_patch_samples = 16;

  int feature_length() const { return 18 * scales; }
};

nlohmann::json niqe_config_to_json(NiqeConfig const &cfg);
NiqeConfig niqe_config_from_json(nlohmann::json const &j, NiqeConfig base = {});

// 7x7 Gaussian weights, normalized to unit sum, row-major.
std::vector<double> gaussian_window(NiqeConfig const &cfg);

struct MscnResult {
  Image2D coefficients;
  Image2D local_std; // sigma map, used for patch sharpness
};

// (I - mu) / (sigma + C) with Gaussian-weighted local moments and symmetric
// (half-sample) reflection at the border.
MscnResult mscn(Image2D const &img, NiqeConfig const &cfg);

// 2x2 mean-pool downsampling (odd trailing row/column dropped).
Image2D downsample2(Image2D const &img);

struct FeatureOptions {
  bool select_sharp = false;         // keep only patches above sharpness_fraction * max
  Mask2D const *foreground = nullptr; // drop patches below min_foreground_fraction
};

// One row per surviving patch, feature_length() columns: per scale the GGD
// fit of the MSCN map (alpha, variance) then the AGGD fits (alpha, mean, left
// variance, right variance) of the horizontal, vertical, main-diagonal and
// anti-diagonal paired products. Patches whose fits are degenerate are
// skipped; no survivors raises DegenerateInputError.
Eigen::MatrixXd niqe_features(Image2D const &img, NiqeConfig const &cfg, FeatureOptions const &opt = {});

struct MvgModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::string corpus_id;
  std::size_t patch_count = 0;
  double ridge = 0.0;
};

MvgModel fit_mvg(Eigen::MatrixXd const &features, std::string corpus_id = {});

// sqrt(d^T ((S1 + S2)/2)^-1 d), d = mu1 - mu2, via a Cholesky solve.
double niqe_score(MvgModel const &test, MvgModel const &pristine);

// Stacks features of several images (with optional masks) and scores them
// as one sample.
Eigen::MatrixXd stack_features(std::vector<Eigen::MatrixXd> const &parts);

struct ImprovementSummary {
  double mean_before = 0.0;
  double mean_after = 0.0;
  double mean_percent_improvement = 0.0;
  std::vector<double> percent_improvement; // per row
};

ImprovementSummary aggregate_improvement(std::span<double const> before, std::span<double const> after);

// Pristine model file: JSON header plus ".bin" payload of float64
// little-endian values (mean, then covariance row-major).
void save_model(std::filesystem::path const &header, MvgModel const &m, NiqeConfig const &cfg);
MvgModel load_model(std::filesystem::path const &header, NiqeConfig *cfg_out = nullptr);

} // namespace moco::metrics
