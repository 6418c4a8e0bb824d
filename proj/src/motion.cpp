#include "moco/motion.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "moco/random.hpp"

namespace moco {

namespace {

// Exact values at multiples of 90 degrees so quarter turns resample without
// interpolation error.
std::pair<double, double> cos_sin_deg(double deg) {
  double const q = deg / 90.0;
  if (q == std::floor(q) && std::abs(q) < 1e6) {
    switch (((static_cast<long>(q) % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
    }
  }
  double const r = deg * std::numbers::pi / 180.0;
  return {std::cos(r), std::sin(r)};
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(Mat3 const &a, Mat3 const &b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat3 rotation_matrix(std::array<double, 3> const &deg) {
  auto const [cx, sx] = cos_sin_deg(deg[0]);
  auto const [cy, sy] = cos_sin_deg(deg[1]);
  auto const [cz, sz] = cos_sin_deg(deg[2]);
  Mat3 const rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  Mat3 const ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  Mat3 const rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  return multiply(multiply(rx, ry), rz);
}

void check_volume_matches(Volume const &v, MotionTrajectory const &t) {
  validate(v);
  t.validate();
  if (t.n_pe != v.geom.pe_extent()) {
    throw DimensionError(fmt::format("trajectory has n_pe = {} but the volume's phase-encode axis ({}) has extent {}",
                                     t.n_pe, v.geom.labels[std::size_t(v.geom.pe_axis)], v.geom.pe_extent()));
  }
}

} // namespace

bool RigidMotion::is_identity() const {
  return std::all_of(translation_mm.begin(), translation_mm.end(), [](double x) { return x == 0.0; }) &&
         std::all_of(rotation_deg.begin(), rotation_deg.end(), [](double x) { return x == 0.0; });
}

void RigidMotion::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(translation_mm[std::size_t(a)]) || !std::isfinite(rotation_deg[std::size_t(a)])) {
      throw ValidationError("rigid motion components must be finite");
    }
  }
}

void MotionTrajectory::validate() const {
  if (n_pe < 1) {
    throw ValidationError(fmt::format("trajectory n_pe must be positive, got {}", n_pe));
  }
  if (segments.empty() || segments.front().start_index != 0 || !segments.front().pose.is_identity()) {
    throw ValidationError("trajectory must start at line 0 in the identity pose");
  }
  for (std::size_t s = 0; s < segments.size(); ++s) {
    segments[s].pose.validate();
    if (segments[s].start_index < 0 || segments[s].start_index >= n_pe) {
      throw ValidationError(fmt::format("segment {} starts at line {} outside [0, {})", s, segments[s].start_index, n_pe));
    }
    if (s > 0 && segments[s].start_index <= segments[s - 1].start_index) {
      throw ValidationError("segment start indices must be strictly increasing");
    }
  }
}

MotionTrajectory identity_trajectory(int n_pe) {
  MotionTrajectory t;
  t.n_pe = n_pe;
  t.segments.push_back({});
  return t;
}

Volume apply_rigid(Volume const &v, RigidMotion const &m) {
  validate(v);
  m.validate();
  if (m.is_identity()) {
    return v;
  }
  Dims const d = v.geom.dims;
  Spacing const s = v.geom.spacing;
  Mat3 const r = rotation_matrix(m.rotation_deg);
  std::array<double, 3> const c{(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, (d.nz - 1) / 2.0};
  std::array<double, 3> const sp{s.sx, s.sy, s.sz};
  std::array<int, 3> const n{d.nx, d.ny, d.nz};

  auto sample = [&](int i, int j, int k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= d.nx || j >= d.ny || k >= d.nz) {
      return 0.0;
    }
    return v(i, j, k);
  };

  Volume out(v.geom);
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        // Output position in mm relative to the center, minus translation,
        // mapped back through R^T to the source position.
        std::array<double, 3> const p{(i - c[0]) * sp[0] - m.translation_mm[0], (j - c[1]) * sp[1] - m.translation_mm[1],
                                      (k - c[2]) * sp[2] - m.translation_mm[2]};
        std::array<double, 3> q{};
        for (int a = 0; a < 3; ++a) {
          q[std::size_t(a)] = (r[0][a] * p[0] + r[1][a] * p[1] + r[2][a] * p[2]) / sp[std::size_t(a)] + c[std::size_t(a)];
        }
        std::array<int, 3> base{};
        std::array<double, 3> frac{};
        bool outside = false;
        for (std::size_t a = 0; a < 3; ++a) {
          double const fl = std::floor(q[a]);
          if (fl < -1.0 || fl > n[a]) {
            outside = true;
            break;
          }
          base[a] = static_cast<int>(fl);
          frac[a] = q[a] - fl;
        }
        if (outside) {
          continue;
        }
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          double const wz = dz ? frac[2] : 1.0 - frac[2];
          if (wz == 0.0) continue;
          for (int dy = 0; dy < 2; ++dy) {
            double const wy = dy ? frac[1] : 1.0 - frac[1];
            if (wy == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
              double const wx = dx ? frac[0] : 1.0 - frac[0];
              if (wx == 0.0) continue;
              acc += wx * wy * wz * sample(base[0] + dx, base[1] + dy, base[2] + dz);
            }
          }
        }
        out(i, j, k) = acc;
      }
    }
  }
  return out;
}

std::vector<SamplingMask> segment_masks(MotionTrajectory const &t) {
  t.validate();
  std::vector<SamplingMask> masks;
  masks.reserve(t.segments.size());
  for (std::size_t s = 0; s < t.segments.size(); ++s) {
    int const begin = t.segments[s].start_index;
    int const end = s + 1 < t.segments.size() ? t.segments[s + 1].start_index : t.n_pe;
    SamplingMask m(std::size_t(t.n_pe), 0);
    std::fill(m.begin() + begin, m.begin() + end, std::uint8_t{1});
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<Complex> mask_kernel(SamplingMask const &mask) {
  auto const n = static_cast<long>(mask.size());
  if (n == 0) {
    throw ValidationError("sampling mask is empty");
  }
  long const c = n / 2;
  std::vector<Complex> h(static_cast<std::size_t>(n));
  for (long x = 0; x < n; ++x) {
    Complex acc{0.0, 0.0};
    for (long k = 0; k < n; ++k) {
      if (!mask[std::size_t(k)]) continue;
      // Reduce the phase index modulo n before scaling for accuracy.
      long const ph = (((k - c) * x) % n + n) % n;
      double const angle = 2.0 * std::numbers::pi * static_cast<double>(ph) / static_cast<double>(n);
      acc += Complex{std::cos(angle), std::sin(angle)};
    }
    h[std::size_t(x)] = acc / static_cast<double>(n);
  }
  return h;
}

Corruption corrupt(Volume const &v, MotionTrajectory const &t) {
  check_volume_matches(v, t);
  Geometry const &g = v.geom;
  auto const masks = segment_masks(t);
  KSpace gathered(g, Complex{0.0, 0.0});
  KSpace identity_k;
  bool have_identity = false;

  int const pe = g.pe_axis;
  auto const [ua, va] = in_plane_axes(pe);
  std::size_t const spe = g.stride(pe), su = g.stride(ua), sv = g.stride(va);
  int const nu = g.dims[ua], nv = g.dims[va];

  for (std::size_t s = 0; s < t.segments.size(); ++s) {
    auto const &pose = t.segments[s].pose;
    KSpace moved_k;
    KSpace const *src = nullptr;
    if (pose.is_identity()) {
      if (!have_identity) {
        identity_k = fft3_centered(v);
        have_identity = true;
      }
      src = &identity_k;
    } else {
      moved_k = fft3_centered(apply_rigid(v, pose));
      src = &moved_k;
    }
    for (int line = 0; line < t.n_pe; ++line) {
      if (!masks[s][std::size_t(line)]) continue;
      for (int b = 0; b < nv; ++b) {
        for (int a = 0; a < nu; ++a) {
          std::size_t const idx = std::size_t(line) * spe + std::size_t(a) * su + std::size_t(b) * sv;
          gathered.data[idx] = src->data[idx];
        }
      }
    }
  }
  auto image = magnitude(ifft3_centered(gathered));
  return {std::move(gathered), std::move(image)};
}

Volume convolution_route(Volume const &v, MotionTrajectory const &t, int max_extent) {
  check_volume_matches(v, t);
  Geometry const &g = v.geom;
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] > max_extent) {
      throw ValidationError(fmt::format("convolution route is an O(N * n_pe) oracle limited to {} voxels per axis; axis {} has {}",
                                        max_extent, a, g.dims[a]));
    }
  }
  auto const masks = segment_masks(t);
  int const pe = g.pe_axis;
  auto const [ua, va] = in_plane_axes(pe);
  std::size_t const spe = g.stride(pe), su = g.stride(ua), sv = g.stride(va);
  int const nu = g.dims[ua], nv = g.dims[va], n = t.n_pe;

  ComplexVolume sum(g, Complex{0.0, 0.0});
  for (std::size_t s = 0; s < t.segments.size(); ++s) {
    auto const h = mask_kernel(masks[s]);
    auto const moved = apply_rigid(v, t.segments[s].pose);
    for (int b = 0; b < nv; ++b) {
      for (int a = 0; a < nu; ++a) {
        std::size_t const base = std::size_t(a) * su + std::size_t(b) * sv;
        for (int x = 0; x < n; ++x) {
          Complex acc{0.0, 0.0};
          for (int y = 0; y < n; ++y) {
            acc += moved.data[base + std::size_t(y) * spe] * h[std::size_t(((x - y) % n + n) % n)];
          }
          sum.data[base + std::size_t(x) * spe] += acc;
        }
      }
    }
  }
  return magnitude(sum);
}

MotionTrajectory random_trajectory(std::uint64_t seed, int n_pe, TrajectoryConfig const &cfg) {
  if (n_pe < 4) {
    throw ValidationError(fmt::format("random trajectories need at least 4 phase-encode lines, got {}", n_pe));
  }
  if (!(cfg.bounds.translation_mm > 0.0) || !(cfg.bounds.rotation_deg > 0.0)) {
    throw ValidationError("motion bounds must be positive");
  }
  Rng rng(seed);
  int const events = rng.bernoulli(0.5) ? 2 : 1;
  std::vector<int> lines;
  while (int(lines.size()) < events) {
    int const line = static_cast<int>(rng.uniform_int(1, n_pe - 1));
    if (std::find(lines.begin(), lines.end(), line) == lines.end()) {
      lines.push_back(line);
    }
  }
  std::sort(lines.begin(), lines.end());

  MotionTrajectory t = identity_trajectory(n_pe);
  t.seed = seed;
  t.bounds = cfg.bounds;
  for (int line : lines) {
    TrajectorySegment seg;
    seg.start_index = line;
    for (auto &x : seg.pose.translation_mm) x = rng.uniform(-cfg.bounds.translation_mm, cfg.bounds.translation_mm);
    for (auto &x : seg.pose.rotation_deg) x = rng.uniform(-cfg.bounds.rotation_deg, cfg.bounds.rotation_deg);
    t.segments.push_back(seg);
  }
  return t;
}

TrajectoryStats trajectory_stats(MotionTrajectory const &t) {
  t.validate();
  TrajectoryStats st;
  int const events = t.event_count();
  if (events == 0) {
    return st;
  }
  int const c = t.n_pe / 2;
  for (std::size_t s = 1; s < t.segments.size(); ++s) {
    auto const &p = t.segments[s].pose;
    for (int a = 0; a < 3; ++a) {
      st.mean_abs_translation += std::abs(p.translation_mm[std::size_t(a)]);
      st.mean_abs_rotation += std::abs(p.rotation_deg[std::size_t(a)]);
    }
    st.mean_center_distance += std::abs(t.segments[s].start_index - c);
  }
  st.mean_abs_translation /= 3.0 * events;
  st.mean_abs_rotation /= 3.0 * events;
  st.mean_center_distance /= events;
  return st;
}

nlohmann::json trajectory_to_json(MotionTrajectory const &t) {
  nlohmann::json segs = nlohmann::json::array();
  for (auto const &s : t.segments) {
    auto const &tr = s.pose.translation_mm;
    auto const &ro = s.pose.rotation_deg;
    segs.push_back({{"start_index", s.start_index},
                    {"tx", tr[0]}, {"ty", tr[1]}, {"tz", tr[2]},
                    {"rx", ro[0]}, {"ry", ro[1]}, {"rz", ro[2]}});
  }
  return {{"n_pe", t.n_pe},
          {"axis_label", t.pe_label},
          {"seed", t.seed},
          {"bounds", {{"translation_mm", t.bounds.translation_mm}, {"rotation_deg", t.bounds.rotation_deg}}},
          {"event_distribution", "event count 1 or 2 with equal probability; lines uniform on [1, n_pe-1]"},
          {"rotation_convention", "intrinsic x-y-z about the volume center, degrees"},
          {"segments", segs}};
}

MotionTrajectory trajectory_from_json(nlohmann::json const &j) {
  try {
    MotionTrajectory t;
    t.n_pe = j.at("n_pe").get<int>();
    t.pe_label = j.value("axis_label", std::string("AP"));
    t.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("bounds")) {
      t.bounds.translation_mm = j["bounds"].value("translation_mm", 5.0);
      t.bounds.rotation_deg = j["bounds"].value("rotation_deg", 5.0);
    }
    for (auto const &s : j.at("segments")) {
      TrajectorySegment seg;
      seg.start_index = s.at("start_index").get<int>();
      seg.pose.translation_mm = {s.at("tx").get<double>(), s.at("ty").get<double>(), s.at("tz").get<double>()};
      seg.pose.rotation_deg = {s.at("rx").get<double>(), s.at("ry").get<double>(), s.at("rz").get<double>()};
      t.segments.push_back(seg);
    }
    t.validate();
    return t;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed trajectory manifest: {}", e.what()));
  }
}

} // namespace moco
