#pragma once

#include "moco/volume.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <vector>

namespace moco {

struct Ellipsoid {
  std::array<double, 3> center{0.5, 0.5, 0.5};    // fractional field-of-view coordinates
  std::array<double, 3> semi_axes{0.25, 0.25, 0.25}; // fractions of the field of view, in (0, 0.5]
  double rotation_deg = 0.0;                       // about z
  double intensity = 1.0;                          // additive

  bool operator==(Ellipsoid const &) const = default;
};

struct PhantomSpec {
  std::vector<Ellipsoid> ellipsoids;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(PhantomSpec const &) const = default;
};

struct PhantomConfig {
  int min_structures = 3;
  int max_structures = 8;
  double min_intensity = 0.1; // magnitude range of interior structures
  double max_intensity = 0.5;
  double noise_sigma = 0.02;
};

// Voxel value is the sum of the intensities of every ellipsoid containing the
// voxel center, plus seeded Gaussian noise inside the ellipsoid union, then
// clamped at zero. Background voxels stay exactly zero.
Volume generate_phantom(PhantomSpec const &spec, Dims dims, Spacing spacing = {});

// Head-like spec: one enclosing ellipsoid plus 3-8 interior structures, all
// kept inside [0.06, 0.94] of the field of view so the outer shell is empty.
PhantomSpec random_phantom_spec(std::uint64_t seed, PhantomConfig const &cfg = {});

// Fixed reference phantom: the 3D modified Shepp-Logan ellipsoids (in-plane
// rotations only), scaled by 0.9 about the center, no noise.
PhantomSpec standard_phantom_spec();

// Mirror across the x mid-plane.
PhantomSpec mirror_x(PhantomSpec spec);

nlohmann::json phantom_to_json(PhantomSpec const &spec);
PhantomSpec phantom_from_json(nlohmann::json const &j);

} // namespace moco
