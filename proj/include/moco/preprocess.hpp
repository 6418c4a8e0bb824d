#pragma once

#include "moco/volume.hpp"

#include <json.hpp>

namespace moco {

struct ForegroundConfig {
  double fraction = 0.1;   // of the 99th-percentile intensity
  int iterations = 2;      // dilations, then the same number of erosions (3x3x3)
};

struct NormalizationRecord {
  double original_mean = 0.0; // over foreground
  double original_std = 1.0;  // population std over foreground
  double target_mean = 0.5;
  double target_std = 1.0 / 6.0;
};

// Linear-interpolated percentile, p in [0, 100].
double percentile(std::span<double const> values, double p);

ForegroundMask estimate_foreground(Volume const &v, ForegroundConfig const &cfg = {});

// Affine map of the foreground onto mean 0.5 and std 1/6; background set to 0.
std::pair<Volume, NormalizationRecord> normalize(Volume const &v, ForegroundMask const &m);
// Same map with a known record; used to bring slices into network range.
Volume apply_normalization(Volume const &v, NormalizationRecord const &r, ForegroundMask const &m);
Volume denormalize(Volume const &v, NormalizationRecord const &r, ForegroundMask const &m);

// 2D counterparts used around the network.
Image2D apply_normalization(Image2D const &img, NormalizationRecord const &r, Mask2D const &m);
Image2D denormalize(Image2D const &img, NormalizationRecord const &r, Mask2D const &m);

nlohmann::json record_to_json(NormalizationRecord const &r);
NormalizationRecord record_from_json(nlohmann::json const &j);
nlohmann::json foreground_config_to_json(ForegroundConfig const &c);

} // namespace moco
