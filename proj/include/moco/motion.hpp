#pragma once

#include "moco/volume.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace moco {

// Rigid pose. Rotations are applied about the volume center as intrinsic
// x, then y, then z rotations (R = Rx * Ry * Rz), followed by translation.
struct RigidMotion {
  std::array<double, 3> translation_mm{};
  std::array<double, 3> rotation_deg{};

  bool is_identity() const;
  void validate() const;
  bool operator==(RigidMotion const &) const = default;
};

struct MotionBounds {
  double translation_mm = 5.0;
  double rotation_deg = 5.0;
};

struct TrajectorySegment {
  int start_index = 0; // first phase-encode line acquired in this pose
  RigidMotion pose;
  bool operator==(TrajectorySegment const &) const = default;
};

// Piecewise-constant pose over the phase-encode lines. Segment 0 starts at
// line 0 in the identity pose; every later segment is one motion event.
struct MotionTrajectory {
  int n_pe = 0;
  std::vector<TrajectorySegment> segments;
  std::string pe_label = "AP";
  std::uint64_t seed = 0;
  MotionBounds bounds;

  int event_count() const { return int(segments.size()) - 1; }
  void validate() const;
  bool operator==(MotionTrajectory const &o) const { return n_pe == o.n_pe && segments == o.segments; }
};

struct TrajectoryConfig {
  MotionBounds bounds;
};

// Indicator over phase-encode lines (length n_pe), values 0 or 1.
using SamplingMask = std::vector<std::uint8_t>;

struct TrajectoryStats {
  double mean_abs_translation = 0.0; // mm
  double mean_abs_rotation = 0.0;    // degrees
  double mean_center_distance = 0.0; // phase-encode lines from n_pe/2
};

MotionTrajectory identity_trajectory(int n_pe);

// Resamples v under m (trilinear, zero outside the field of view).
Volume apply_rigid(Volume const &v, RigidMotion const &m);

std::vector<SamplingMask> segment_masks(MotionTrajectory const &t);

// h_t: inverse centered 1D DFT of a sampling mask, direct summation. Tap x
// is the circular shift x, so an all-ones mask gives a delta at tap 0.
std::vector<Complex> mask_kernel(SamplingMask const &mask);

struct Corruption {
  KSpace kspace;
  Volume image;
};

// Gathers the phase-encode lines of each segment from the k-space of the
// correspondingly moved volume and reconstructs the magnitude image.
Corruption corrupt(Volume const &v, MotionTrajectory const &t);

constexpr int kConvolutionRouteMaxExtent = 16;

// Literal image-domain evaluation of I_m = sum_t (M_t I_0) conv h_t with
// circular convolution along the phase-encode axis. O(N * n_pe), so it
// refuses grids larger than `max_extent` per axis.
Volume convolution_route(Volume const &v, MotionTrajectory const &t, int max_extent = kConvolutionRouteMaxExtent);

// One or two events (equal odds) at distinct lines drawn uniformly from
// [1, n_pe - 1]; each pose component uniform within +-bounds.
MotionTrajectory random_trajectory(std::uint64_t seed, int n_pe, TrajectoryConfig const &cfg = {});

TrajectoryStats trajectory_stats(MotionTrajectory const &t);

nlohmann::json trajectory_to_json(MotionTrajectory const &t);
MotionTrajectory trajectory_from_json(nlohmann::json const &j);

} // namespace moco
