#include "moco/motion.hpp"
#include "moco/phantom.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <set>

using namespace moco;

namespace {

MotionTrajectory one_event(int n_pe, int line, RigidMotion pose) {
  auto t = identity_trajectory(n_pe);
  t.segments.push_back({line, pose});
  return t;
}

RigidMotion pose(double tx, double ty, double tz, double rx, double ry, double rz) {
  RigidMotion m;
  m.translation_mm = {tx, ty, tz};
  m.rotation_deg = {rx, ry, rz};
  return m;
}

double rel_max_diff(Volume const &a, Volume const &b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    num = std::max(num, std::abs(a.data[i] - b.data[i]));
    den = std::max(den, std::abs(b.data[i]));
  }
  return num / den;
}

} // namespace

TEST_CASE("identity pose returns a bitwise copy") {
  auto const v = oracle::random_volume({7, 6, 5}, 1);
  CHECK(apply_rigid(v, RigidMotion{}).data == v.data);
}

TEST_CASE("one-voxel translation along x is an integer shift with a zero plane") {
  auto v = oracle::random_volume({6, 5, 4}, 2);
  v.geom.spacing = {2.0, 1.0, 3.0};
  auto const out = apply_rigid(v, pose(2.0, 0, 0, 0, 0, 0));
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 5; ++j) {
      CHECK(out(0, j, k) == 0.0);
      for (int i = 1; i < 6; ++i) CHECK(out(i, j, k) == v(i - 1, j, k));
    }
}

TEST_CASE("integer translations along every axis are exact") {
  auto const v = oracle::random_volume({5, 6, 7}, 3);
  auto const out = apply_rigid(v, pose(-1.0, 2.0, 1.0, 0, 0, 0));
  for (int k = 0; k < 7; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 5; ++i) {
        int const si = i + 1, sj = j - 2, sk = k - 1;
        bool const in = si >= 0 && si < 5 && sj >= 0 && sj < 6 && sk >= 0 && sk < 7;
        CHECK(out(i, j, k) == (in ? v(si, sj, sk) : 0.0));
      }
}

TEST_CASE("quarter turn about z equals the index permutation oracle") {
  int const n = 7;
  auto const v = oracle::random_volume({n, n, n}, 4);
  auto const out = apply_rigid(v, pose(0, 0, 0, 0, 0, 90.0));
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) CHECK(out(i, j, k) == v(j, n - 1 - i, k));
}

TEST_CASE("quarter turns about x and y are index permutations") {
  int const n = 5;
  auto const v = oracle::random_volume({n, n, n}, 5);
  auto const rx = apply_rigid(v, pose(0, 0, 0, 90.0, 0, 0));
  auto const ry = apply_rigid(v, pose(0, 0, 0, 0, 90.0, 0));
  std::set<double> values(v.data.begin(), v.data.end());
  for (double x : rx.data) CHECK(values.count(x) == 1);
  for (double x : ry.data) CHECK(values.count(x) == 1);
  // Four quarter turns about x give the identity.
  auto r = v;
  for (int q = 0; q < 4; ++q) r = apply_rigid(r, pose(0, 0, 0, 90.0, 0, 0));
  CHECK(r.data == v.data);
}

TEST_CASE("segment masks") {
  SUBCASE("single event at line 100 of 256") {
    auto const m = segment_masks(one_event(256, 100, pose(1, 0, 0, 0, 0, 0)));
    REQUIRE(m.size() == 2);
    for (int i = 0; i < 256; ++i) {
      CHECK(m[0][std::size_t(i)] == (i < 100 ? 1 : 0));
      CHECK(m[1][std::size_t(i)] == (i >= 100 ? 1 : 0));
    }
  }
  SUBCASE("initial segment only") {
    auto const m = segment_masks(identity_trajectory(16));
    REQUIRE(m.size() == 1);
    for (auto x : m[0]) CHECK(x == 1);
  }
  SUBCASE("events at 64 and 192 of 256") {
    auto t = one_event(256, 64, pose(1, 0, 0, 0, 0, 0));
    t.segments.push_back({192, pose(0, 1, 0, 0, 0, 0)});
    auto const m = segment_masks(t);
    REQUIRE(m.size() == 3);
    int sizes[3] = {0, 0, 0};
    for (int i = 0; i < 256; ++i) {
      int sum = 0;
      for (int s = 0; s < 3; ++s) {
        sizes[s] += m[std::size_t(s)][std::size_t(i)];
        sum += m[std::size_t(s)][std::size_t(i)];
      }
      CHECK(sum == 1);
    }
    CHECK(sizes[0] == 64);
    CHECK(sizes[1] == 128);
    CHECK(sizes[2] == 64);
  }
}

TEST_CASE("trajectory validation") {
  auto t = one_event(16, 4, pose(1, 0, 0, 0, 0, 0));
  CHECK_NOTHROW(t.validate());
  auto bad = t;
  bad.segments[1].start_index = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = t;
  bad.segments[1].start_index = 16;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = t;
  bad.segments[0].pose = pose(1, 0, 0, 0, 0, 0);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = t;
  bad.segments.push_back({3, RigidMotion{}});
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("mask kernels") {
  SUBCASE("all-ones mask is a delta") {
    auto const h = mask_kernel(SamplingMask(8, 1));
    CHECK(std::abs(h[0] - Complex(1.0, 0.0)) < 1e-12);
    for (std::size_t i = 1; i < 8; ++i) CHECK(std::abs(h[i]) < 1e-12);
  }
  SUBCASE("partition kernels sum to a delta") {
    for (int n : {7, 8, 16}) {
      auto t = one_event(n, 2, pose(1, 0, 0, 0, 0, 0));
      t.segments.push_back({5, pose(0, 1, 0, 0, 0, 0)});
      std::vector<Complex> sum(std::size_t(n), 0.0);
      for (auto const &m : segment_masks(t)) {
        auto const h = mask_kernel(m);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += h[i];
      }
      CHECK(std::abs(sum[0] - Complex(1.0, 0.0)) < 1e-12);
      for (std::size_t i = 1; i < sum.size(); ++i) CHECK(std::abs(sum[i]) < 1e-12);
    }
  }
  SUBCASE("half-open mask matches the inverse DFT oracle") {
    SamplingMask m(8, 0);
    for (int i = 0; i < 4; ++i) m[std::size_t(i)] = 1;
    auto const h = mask_kernel(m);
    auto const ref = oracle::idft1_centered(std::vector<Complex>(m.begin(), m.end()));
    CHECK(oracle::max_abs_diff(h, ref) < 1e-12);
  }
  CHECK_THROWS_AS(mask_kernel(SamplingMask{}), ValidationError);
}

TEST_CASE("corruption fixed points") {
  auto const v = oracle::random_volume({8, 8, 8}, 6, 0.0, 1.0);
  auto const c0 = corrupt(v, identity_trajectory(8));
  CHECK(rel_max_diff(c0.image, v) < 1e-10);

  auto t = one_event(8, 3, RigidMotion{});
  t.segments.push_back({6, RigidMotion{}});
  CHECK(rel_max_diff(corrupt(v, t).image, v) < 1e-10);

  CHECK(rel_max_diff(convolution_route(v, identity_trajectory(8)), v) < 1e-10);
  CHECK(rel_max_diff(convolution_route(v, t), v) < 1e-10);
}

TEST_CASE("corruption gathers phase-encode lines from the moved k-space") {
  auto const v = oracle::random_volume({6, 6, 8}, 7, 0.0, 1.0);
  auto const p = pose(1.0, -0.5, 0.5, 2.0, -3.0, 4.0);
  auto const c = corrupt(v, one_event(8, 5, p));
  auto const k0 = fft3_centered(v);
  auto const k1 = fft3_centered(apply_rigid(v, p));
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) CHECK(c.kspace(x, y, z) == (z < 5 ? k0(x, y, z) : k1(x, y, z)));
}

TEST_CASE("one event at line 4 on 8^3 matches the convolution route") {
  auto const v = oracle::random_volume({8, 8, 8}, 8, 0.0, 1.0);
  auto const t = one_event(8, 4, pose(1.5, -2.0, 0.7, 3.0, -1.0, 2.5));
  CHECK(oracle::max_abs_diff(corrupt(v, t).image.data, convolution_route(v, t).data) < 1e-10);
}

TEST_CASE("route equivalence over 100 random trajectories") {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(99, s));
    Dims const d{int(rng.uniform_int(4, 16)), int(rng.uniform_int(4, 16)), int(rng.uniform_int(4, 16))};
    auto const v = oracle::random_volume(d, derive_seed(98, s), 0.0, 1.0);
    auto const t = random_trajectory(derive_seed(97, s), d.nz);
    worst = std::max(worst, oracle::max_abs_diff(corrupt(v, t).image.data, convolution_route(v, t).data));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("phase-encode extent mismatch and oracle size limit") {
  auto const v = oracle::random_volume({8, 8, 8}, 9);
  CHECK_THROWS_AS(corrupt(v, identity_trajectory(9)), DimensionError);
  CHECK_THROWS_AS(convolution_route(v, identity_trajectory(9)), DimensionError);
  auto const big = oracle::random_volume({17, 4, 4}, 10);
  CHECK_THROWS_AS(convolution_route(big, identity_trajectory(4)), ValidationError);
}

TEST_CASE("random trajectories respect bounds, count and determinism") {
  std::set<int> counts;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto const t = random_trajectory(s, 64);
    CHECK_NOTHROW(t.validate());
    CHECK(t.n_pe == 64);
    counts.insert(t.event_count());
    CHECK((t.event_count() == 1 || t.event_count() == 2));
    for (std::size_t i = 1; i < t.segments.size(); ++i) {
      auto const &seg = t.segments[i];
      CHECK(seg.start_index >= 1);
      CHECK(seg.start_index <= 63);
      for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(seg.pose.translation_mm[std::size_t(a)]) <= 5.0);
        CHECK(std::abs(seg.pose.rotation_deg[std::size_t(a)]) <= 5.0);
      }
    }
    auto const m = segment_masks(t);
    for (int i = 0; i < 64; ++i) {
      int sum = 0;
      for (auto const &mask : m) sum += mask[std::size_t(i)];
      CHECK(sum == 1);
    }
  }
  CHECK(counts == std::set<int>{1, 2});
  CHECK(random_trajectory(42, 32) == random_trajectory(42, 32));
  CHECK_FALSE(random_trajectory(42, 32) == random_trajectory(43, 32));

  TrajectoryConfig cfg;
  cfg.bounds = {1.0, 0.5};
  auto const t = random_trajectory(7, 32, cfg);
  for (std::size_t i = 1; i < t.segments.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(t.segments[i].pose.translation_mm[std::size_t(a)]) <= 1.0);
      CHECK(std::abs(t.segments[i].pose.rotation_deg[std::size_t(a)]) <= 0.5);
    }
  }
  CHECK_THROWS_AS(random_trajectory(1, 3), ValidationError);
  cfg.bounds = {0.0, 1.0};
  CHECK_THROWS_AS(random_trajectory(1, 32, cfg), ValidationError);
}

TEST_CASE("trajectory statistics") {
  auto const s0 = trajectory_stats(one_event(64, 32, pose(1, -2, 3, -4, 5, -6)));
  CHECK(s0.mean_center_distance == 0.0);
  CHECK(s0.mean_abs_translation == doctest::Approx(2.0));
  CHECK(s0.mean_abs_rotation == doctest::Approx(5.0));

  auto t = one_event(256, 96, pose(1, 0, 0, 0, 0, 0));
  t.segments.push_back({160, pose(0, 1, 0, 0, 0, 0)});
  CHECK(trajectory_stats(t).mean_center_distance == 32.0);

  auto const z = trajectory_stats(one_event(64, 10, RigidMotion{}));
  CHECK(z.mean_abs_translation == 0.0);
  CHECK(z.mean_abs_rotation == 0.0);
}

TEST_CASE("trajectory manifests round trip") {
  auto const t = random_trajectory(5, 48);
  auto const back = trajectory_from_json(trajectory_to_json(t));
  CHECK(back == t);
  CHECK(back.seed == t.seed);
  CHECK(back.pe_label == t.pe_label);
  CHECK(back.bounds.translation_mm == t.bounds.translation_mm);
  CHECK_THROWS_AS(trajectory_from_json(nlohmann::json{{"n_pe", 4}}), ValidationError);
}

namespace {
// Shares of |dK|^2 in the central half (|k - c| < n/4) and the outer half of
// phase-encode lines.
std::pair<double, double> band_shares(Volume const &v, int line, RigidMotion const &p) {
  auto const t = one_event(v.geom.pe_extent(), line, p);
  auto const k = corrupt(v, t).kspace;
  auto const k0 = fft3_centered(v);
  int const n = v.geom.pe_extent(), c = n / 2;
  double low = 0.0, high = 0.0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < v.geom.dims.ny; ++y)
      for (int x = 0; x < v.geom.dims.nx; ++x) {
        double const e = std::norm(k(x, y, z) - k0(x, y, z));
        (std::abs(z - c) < n / 4 ? low : high) += e;
      }
  return {low / (low + high), high / (low + high)};
}
} // namespace

TEST_CASE("late event rings, early event blurs") {
  int const n = 48;
  auto const v = generate_phantom(standard_phantom_spec(), {n, n, n}, {4.0, 4.0, 4.0});
  auto const p = pose(3.0, -2.0, 1.5, 2.0, -2.0, 3.0);
  int const c = n / 2;
  auto const far = band_shares(v, c + int(0.4 * n), p);
  auto const near = band_shares(v, c + int(0.05 * n), p);
  CHECK(far.second > 0.5);
  CHECK(near.first > 0.5);
}
