#include "moco/io.hpp"
#include "moco/volume.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace moco;

namespace {
std::vector<Complex> to_complex(std::vector<double> const &v) { return {v.begin(), v.end()}; }

double rel_diff(std::vector<double> const &a, std::vector<double> const &b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}
} // namespace

TEST_CASE("constant volume has a DC-only spectrum at the center") {
  Volume v(make_geometry({4, 4, 4}), 1.0);
  auto const k = fft3_centered(v);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        auto const expect = (x == 2 && y == 2 && z == 2) ? Complex(64.0, 0.0) : Complex(0.0, 0.0);
        CHECK(std::abs(k(x, y, z) - expect) < 1e-12);
      }
}

TEST_CASE("DC-only spectrum inverts to a constant volume") {
  KSpace k(make_geometry({4, 4, 4}));
  k(2, 2, 2) = 64.0;
  auto const v = ifft3_centered(k);
  for (auto const &x : v.data) CHECK(std::abs(x - Complex(1.0, 0.0)) < 1e-12);
}

TEST_CASE("zero k-space inverts to a zero volume") {
  KSpace k(make_geometry({4, 5, 3}));
  for (auto const &x : ifft3_centered(k).data) CHECK(x == Complex(0.0, 0.0));
}

TEST_CASE("round trip is the identity on 8x8x8") {
  auto const v = oracle::random_volume({8, 8, 8}, 1);
  auto const back = ifft3_centered(fft3_centered(v));
  std::vector<double> re;
  for (auto const &c : back.data) re.push_back(c.real());
  CHECK(rel_diff(re, v.data) < 1e-12);
}

TEST_CASE("round trip is the identity up to 64^3") {
  for (Dims d : {Dims{16, 12, 9}, Dims{64, 64, 64}}) {
    auto const v = oracle::random_volume(d, 2);
    auto const back = ifft3_centered(fft3_centered(v));
    std::vector<double> re;
    for (auto const &c : back.data) re.push_back(c.real());
    CHECK(rel_diff(re, v.data) < 1e-12);
  }
}

TEST_CASE("forward transform matches the brute-force DFT on 4x4x4") {
  auto const v = oracle::random_volume({4, 4, 4}, 3);
  auto const k = fft3_centered(v);
  CHECK(oracle::max_abs_diff(k.data, oracle::dft3_centered(to_complex(v.data), 4, 4, 4, false)) < 1e-10);
}

TEST_CASE("inverse transform matches the brute-force inverse DFT on 4x4x4") {
  Rng rng(4);
  KSpace k(make_geometry({4, 4, 4}));
  for (auto &x : k.data) x = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  auto const v = ifft3_centered(k);
  CHECK(oracle::max_abs_diff(v.data, oracle::dft3_centered(k.data, 4, 4, 4, true)) < 1e-10);
}

TEST_CASE("forward transform matches the brute-force DFT on every shape up to 8 per axis") {
  double worst = 0.0;
  std::uint64_t seed = 100;
  for (int nz = 1; nz <= 8; ++nz)
    for (int ny = 1; ny <= 8; ++ny)
      for (int nx = 1; nx <= 8; ++nx) {
        auto const v = oracle::random_volume({nx, ny, nz}, seed++);
        auto const k = fft3_centered(v);
        worst = std::max(worst, oracle::max_abs_diff(k.data, oracle::dft3_centered(to_complex(v.data), nx, ny, nz, false)));
      }
  CHECK(worst < 1e-10);
}

TEST_CASE("Parseval holds on 64^3") {
  auto const v = oracle::random_volume({64, 64, 64}, 5);
  auto const k = fft3_centered(v);
  double ev = 0.0, ek = 0.0;
  for (double x : v.data) ev += x * x;
  for (auto const &x : k.data) ek += std::norm(x);
  ek /= double(v.data.size());
  CHECK(std::abs(ev - ek) / ev < 1e-9);
}

TEST_CASE("Parseval holds on odd dims") {
  auto const v = oracle::random_volume({7, 5, 3}, 6);
  auto const k = fft3_centered(v);
  double ev = 0.0, ek = 0.0;
  for (double x : v.data) ev += x * x;
  for (auto const &x : k.data) ek += std::norm(x);
  CHECK(std::abs(ev - ek / double(v.data.size())) / ev < 1e-9);
}

TEST_CASE("forward transform is linear") {
  auto const u = oracle::random_volume({8, 6, 5}, 7);
  auto const w = oracle::random_volume({8, 6, 5}, 8);
  double const a = 1.7, b = -0.3;
  Volume s(u.geom);
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = a * u.data[i] + b * w.data[i];
  auto const ks = fft3_centered(s), ku = fft3_centered(u), kw = fft3_centered(w);
  std::vector<Complex> comb(ks.data.size());
  for (std::size_t i = 0; i < comb.size(); ++i) comb[i] = a * ku.data[i] + b * kw.data[i];
  CHECK(oracle::max_abs_diff(ks.data, comb) / oracle::max_abs(comb) < 1e-10);
}

TEST_CASE("non-finite input is rejected") {
  Volume v(make_geometry({2, 2, 2}), 0.0);
  v.data[3] = std::nan("");
  CHECK_THROWS_AS(fft3_centered(v), ValidationError);
  KSpace k(make_geometry({2, 2, 2}));
  k.data[1] = {std::numeric_limits<double>::infinity(), 0.0};
  CHECK_THROWS_AS(ifft3_centered(k), ValidationError);
}

TEST_CASE("magnitude") {
  ComplexVolume c(make_geometry({1, 1, 2}));
  c.data = {{3.0, 4.0}, {2.5, 0.0}};
  auto const m = magnitude(c);
  CHECK(m.data[0] == 5.0);
  CHECK(m.data[1] == 2.5);

  auto const v = oracle::random_volume({6, 6, 6}, 9, 0.0, 2.0);
  auto const back = magnitude(ifft3_centered(fft3_centered(v)));
  CHECK(rel_diff(back.data, v.data) < 1e-12);
}

TEST_CASE("geometry validation") {
  CHECK_THROWS_AS(make_geometry({0, 2, 2}).validate(), ValidationError);
  CHECK_THROWS_AS(make_geometry({2, 2, 2}, {1.0, -1.0, 1.0}).validate(), ValidationError);
  CHECK_THROWS_AS(Volume(make_geometry({2, 2, 2}), std::vector<double>(7)), DimensionError);
}

TEST_CASE("constant volume gives constant slices") {
  Volume v(make_geometry({3, 4, 5}), 2.5);
  for (int axis = 0; axis < 3; ++axis) {
    auto const s = extract_slice(v, axis, 1, "c");
    for (double x : s.data) CHECK(x == 2.5);
    CHECK(s.provenance.axis == axis);
    CHECK(s.provenance.index == 1);
    CHECK(s.provenance.source == "c");
  }
}

TEST_CASE("axis-z slice maps voxel (i,j,k) to pixel (i,j)") {
  auto const v = oracle::random_volume({5, 4, 3}, 10);
  for (int k = 0; k < 3; ++k) {
    auto const s = extract_slice(v, 2, k);
    CHECK(s.width == 5);
    CHECK(s.height == 4);
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 5; ++i) CHECK(s(i, j) == v(i, j, k));
  }
  auto const sy = extract_slice(v, 1, 2);
  CHECK(sy.width == 5);
  CHECK(sy.height == 3);
  CHECK(sy(4, 1) == v(4, 2, 1));
}

TEST_CASE("slice re-inserted into a zero volume matches only on that plane") {
  auto const v = oracle::random_volume({4, 5, 6}, 11, 1.0, 2.0);
  for (int axis = 0; axis < 3; ++axis) {
    Volume z(v.geom, 0.0);
    insert_slice(z, extract_slice(v, axis, 2), axis, 2);
    for (int k = 0; k < 6; ++k)
      for (int j = 0; j < 5; ++j)
        for (int i = 0; i < 4; ++i) {
          int const c = axis == 0 ? i : axis == 1 ? j : k;
          CHECK(z(i, j, k) == (c == 2 ? v(i, j, k) : 0.0));
        }
  }
}

TEST_CASE("out-of-range slice index names the axis and extent") {
  Volume v(make_geometry({3, 4, 5}));
  try {
    extract_slice(v, 2, 5);
    FAIL("no throw");
  } catch (ValidationError const &e) {
    std::string const msg = e.what();
    CHECK(msg.find("axis 2") != std::string::npos);
    CHECK(msg.find("extent 5") != std::string::npos);
  }
  CHECK_THROWS_AS(extract_slice(v, 0, -1), ValidationError);
  CHECK_THROWS_AS(extract_slice(v, 3, 0), ValidationError);
}

TEST_CASE("raw volume files round trip and follow the documented layout") {
  namespace fs = std::filesystem;
  auto const dir = fs::temp_directory_path() / "moco_test_volume_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto v = oracle::random_volume({3, 4, 5}, 12);
  for (auto &x : v.data) x = double(float(x));
  v.geom.spacing = {1.5, 2.0, 2.5};
  io::write_volume(dir / "v.json", v);
  auto const back = io::read_volume(dir / "v.json");
  CHECK(back.geom == v.geom);
  CHECK(back.data == v.data);
  CHECK(fs::file_size(dir / "v.raw") == 3 * 4 * 5 * 4);

  auto const h = io::read_json(dir / "v.json");
  CHECK(h.at("value_type").get<std::string>() == "float32 little-endian");
  CHECK(h.at("dims") == nlohmann::json{3, 4, 5});

  std::ifstream raw(dir / "v.raw", std::ios::binary);
  float first = 0.0f;
  raw.read(reinterpret_cast<char *>(&first), 4);
  CHECK(double(first) == v(0, 0, 0));

  fs::resize_file(dir / "v.raw", 16);
  CHECK_THROWS_AS(io::read_volume(dir / "v.json"), ValidationError);
  CHECK_THROWS_AS(io::read_volume(dir / "missing.json"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("PGM export rescales min..max to the 16-bit range") {
  namespace fs = std::filesystem;
  auto const dir = fs::temp_directory_path() / "moco_test_pgm";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Image2D img(3, 2);
  img.data = {-1.0, 0.0, 1.0, 0.5, -0.5, 1.0};
  io::write_pgm16(dir / "s.pgm", img);
  std::ifstream f(dir / "s.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  f.get();
  CHECK(magic == "P5");
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(maxv == 65535);
  std::vector<unsigned char> px(12);
  f.read(reinterpret_cast<char *>(px.data()), 12);
  auto at = [&](int i) { return (int(px[std::size_t(2 * i)]) << 8) | int(px[std::size_t(2 * i + 1)]); };
  CHECK(at(0) == 0);
  CHECK(at(2) == 65535);
  CHECK(std::abs(at(1) - 32768) <= 1);
  auto const side = io::read_json(dir / "s.json");
  CHECK(side.at("min").get<double>() == -1.0);
  CHECK(side.at("max").get<double>() == 1.0);
  fs::remove_all(dir);
}
