#include "moco/phantom.hpp"

#include "moco/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace moco {

void PhantomSpec::validate() const {
  if (ellipsoids.empty()) {
    throw ValidationError("phantom spec needs at least one ellipsoid");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ValidationError("phantom noise sigma must be finite and non-negative");
  }
  for (std::size_t e = 0; e < ellipsoids.size(); ++e) {
    auto const &el = ellipsoids[e];
    for (std::size_t a = 0; a < 3; ++a) {
      if (!(el.semi_axes[a] > 0.0 && el.semi_axes[a] <= 0.5)) {
        throw ValidationError(fmt::format("ellipsoid {} semi-axis {} = {} outside (0, 0.5]", e, a, el.semi_axes[a]));
      }
      if (!(el.center[a] >= 0.0 && el.center[a] <= 1.0)) {
        throw ValidationError(fmt::format("ellipsoid {} center {} = {} outside [0, 1]", e, a, el.center[a]));
      }
    }
    if (!std::isfinite(el.intensity) || !std::isfinite(el.rotation_deg)) {
      throw ValidationError(fmt::format("ellipsoid {} has non-finite intensity or rotation", e));
    }
  }
}

Volume generate_phantom(PhantomSpec const &spec, Dims dims, Spacing spacing) {
  spec.validate();
  Volume v(make_geometry(dims, spacing));
  std::vector<std::uint8_t> inside(dims.size(), 0);

  std::array<int, 3> const n{dims.nx, dims.ny, dims.nz};
  for (auto const &el : spec.ellipsoids) {
    double const r = el.rotation_deg * std::numbers::pi / 180.0;
    double const c = std::cos(r), s = std::sin(r);
    std::array<double, 3> nc{};
    for (std::size_t a = 0; a < 3; ++a) nc[a] = n[a] * el.center[a];
    for (int k = 0; k < dims.nz; ++k) {
      double const dz = ((k + 0.5) - nc[2]) / n[2];
      double const qz = dz / el.semi_axes[2];
      if (qz * qz > 1.0) continue;
      for (int j = 0; j < dims.ny; ++j) {
        double const dy = ((j + 0.5) - nc[1]) / n[1];
        for (int i = 0; i < dims.nx; ++i) {
          double const dx = ((i + 0.5) - nc[0]) / n[0];
          // Coordinates in the ellipsoid frame (rotated by -theta about z).
          double const lx = c * dx + s * dy;
          double const ly = -s * dx + c * dy;
          double const qx = lx / el.semi_axes[0], qy = ly / el.semi_axes[1];
          if (qx * qx + qy * qy + qz * qz <= 1.0) {
            auto const idx = v.geom.index(i, j, k);
            v.data[idx] += el.intensity;
            inside[idx] = 1;
          }
        }
      }
    }
  }

  Rng rng(spec.seed);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (!inside[i]) continue;
    if (spec.noise_sigma > 0.0) {
      v.data[i] += spec.noise_sigma * rng.normal();
    }
    v.data[i] = std::max(v.data[i], 0.0);
  }
  return v;
}

PhantomSpec random_phantom_spec(std::uint64_t seed, PhantomConfig const &cfg) {
  if (cfg.min_structures < 0 || cfg.max_structures < cfg.min_structures) {
    throw ValidationError("phantom structure count range is empty");
  }
  if (!(cfg.min_intensity >= 0.0) || cfg.max_intensity < cfg.min_intensity) {
    throw ValidationError("phantom intensity range is empty");
  }
  Rng rng(seed);
  PhantomSpec spec;
  spec.seed = derive_seed(seed, 0x6e6f697365); // noise stream
  spec.noise_sigma = cfg.noise_sigma;

  Ellipsoid head;
  head.center = {rng.uniform(0.48, 0.52), rng.uniform(0.48, 0.52), rng.uniform(0.48, 0.52)};
  head.semi_axes = {rng.uniform(0.34, 0.40), rng.uniform(0.36, 0.42), rng.uniform(0.38, 0.42)};
  head.rotation_deg = rng.uniform(-10.0, 10.0);
  head.intensity = 1.0;
  spec.ellipsoids.push_back(head);

  // Bright rim, Shepp-Logan style: a slightly smaller negative shell.
  Ellipsoid brain = head;
  for (auto &a : brain.semi_axes) a *= rng.uniform(0.86, 0.92);
  brain.intensity = -rng.uniform(0.2, 0.4);
  spec.ellipsoids.push_back(brain);

  int const count = static_cast<int>(rng.uniform_int(cfg.min_structures, cfg.max_structures));
  for (int s = 0; s < count; ++s) {
    Ellipsoid e;
    for (std::size_t a = 0; a < 3; ++a) {
      e.semi_axes[a] = rng.uniform(0.03, 0.13);
      // Keep structures within the inner 55% of the head extent.
      double const reach = 0.55 * brain.semi_axes[a];
      e.center[a] = head.center[a] + rng.uniform(-reach, reach);
    }
    e.rotation_deg = rng.uniform(-90.0, 90.0);
    double const mag = rng.uniform(cfg.min_intensity, cfg.max_intensity);
    e.intensity = rng.bernoulli(0.5) ? mag : -mag;
    spec.ellipsoids.push_back(e);
  }
  spec.validate();
  return spec;
}

PhantomSpec standard_phantom_spec() {
  // intensity, semi-axes (a, b, c) and center (x0, y0, z0) in [-1, 1] coordinates, rotation about z
  struct Row {
    double intensity, a, b, c, x0, y0, z0, phi;
  };
  static constexpr Row rows[] = {
      {1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0.0},
      {-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0.0},
      {-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18.0},
      {-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18.0},
      {0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0.0},
      {0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0.0},
      {0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0.0},
      {0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0.0},
      {0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0.0},
      {0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0.0},
  };
  constexpr double scale = 0.9;
  PhantomSpec spec;
  for (auto const &r : rows) {
    Ellipsoid e;
    e.center = {0.5 + 0.5 * scale * r.x0, 0.5 + 0.5 * scale * r.y0, 0.5 + 0.5 * scale * r.z0};
    e.semi_axes = {0.5 * scale * r.a, 0.5 * scale * r.b, 0.5 * scale * r.c};
    e.rotation_deg = r.phi;
    e.intensity = r.intensity;
    spec.ellipsoids.push_back(e);
  }
  return spec;
}

PhantomSpec mirror_x(PhantomSpec spec) {
  for (auto &e : spec.ellipsoids) {
    e.center[0] = 1.0 - e.center[0];
    e.rotation_deg = -e.rotation_deg;
  }
  return spec;
}

nlohmann::json phantom_to_json(PhantomSpec const &spec) {
  nlohmann::json els = nlohmann::json::array();
  for (auto const &e : spec.ellipsoids) {
    els.push_back({{"center", e.center}, {"semi_axes", e.semi_axes}, {"rotation_deg", e.rotation_deg}, {"intensity", e.intensity}});
  }
  return {{"ellipsoids", els}, {"noise_sigma", spec.noise_sigma}, {"seed", spec.seed}};
}

PhantomSpec phantom_from_json(nlohmann::json const &j) {
  try {
    PhantomSpec spec;
    for (auto const &e : j.at("ellipsoids")) {
      Ellipsoid el;
      el.center = e.at("center").get<std::array<double, 3>>();
      el.semi_axes = e.at("semi_axes").get<std::array<double, 3>>();
      el.rotation_deg = e.at("rotation_deg").get<double>();
      el.intensity = e.at("intensity").get<double>();
      spec.ellipsoids.push_back(el);
    }
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed phantom spec: {}", e.what()));
  }
}

} // namespace moco
