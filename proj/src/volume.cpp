#include "moco/volume.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace moco {

void Geometry::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw ValidationError(fmt::format("dims must be positive, got {}x{}x{}", dims.nx, dims.ny, dims.nz));
  }
  for (int a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw ValidationError(fmt::format("spacing along axis {} must be positive, got {}", a, spacing[a]));
    }
  }
  if (pe_axis < 0 || pe_axis > 2) {
    throw ValidationError(fmt::format("phase-encode axis must be 0, 1 or 2, got {}", pe_axis));
  }
}

Geometry make_geometry(Dims dims, Spacing spacing) {
  Geometry g{dims, spacing};
  g.validate();
  return g;
}

namespace {

template <class T> void check_length(Grid<T> const &v) {
  v.geom.validate();
  if (v.data.size() != v.geom.dims.size()) {
    throw DimensionError(fmt::format("grid data length {} does not match dims product {}", v.data.size(), v.geom.dims.size()));
  }
}

// FFTW plans are cached per (dims, direction). Planning is not thread-safe,
// execution on fresh aligned arrays is.
class PlanCache {
public:
  static PlanCache &instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(Dims d, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(d.nx, d.ny, d.nz, sign);
    if (auto it = plans_.find(key); it != plans_.end()) {
      return it->second;
    }
    auto *buf = fftw_alloc_complex(d.size());
    // FFTW is row-major with the last index fastest, so z comes first.
    fftw_plan p = fftw_plan_dft_3d(d.nz, d.ny, d.nx, buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    plans_.emplace(key, p);
    return p;
  }

  ~PlanCache() {
    for (auto &[k, p] : plans_) {
      fftw_destroy_plan(p);
    }
  }

private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int, int>, fftw_plan> plans_;
};

struct FftwDeleter {
  void operator()(fftw_complex *p) const { fftw_free(p); }
};

// out[(k + n/2) mod n] = in[k] along every axis; `inverse` undoes it.
void shift_copy(Complex const *in, Complex *out, Dims d, bool inverse) {
  int const cx = d.nx / 2, cy = d.ny / 2, cz = d.nz / 2;
  for (int k = 0; k < d.nz; ++k) {
    int const ks = inverse ? (k + d.nz - cz) % d.nz : (k + cz) % d.nz;
    for (int j = 0; j < d.ny; ++j) {
      int const js = inverse ? (j + d.ny - cy) % d.ny : (j + cy) % d.ny;
      std::size_t const src_row = std::size_t(d.nx) * (std::size_t(j) + std::size_t(d.ny) * std::size_t(k));
      std::size_t const dst_row = std::size_t(d.nx) * (std::size_t(js) + std::size_t(d.ny) * std::size_t(ks));
      for (int i = 0; i < d.nx; ++i) {
        int const is = inverse ? (i + d.nx - cx) % d.nx : (i + cx) % d.nx;
        out[dst_row + std::size_t(is)] = in[src_row + std::size_t(i)];
      }
    }
  }
}

KSpace forward(Geometry const &g, std::vector<Complex> const &values) {
  Dims const d = g.dims;
  std::unique_ptr<fftw_complex, FftwDeleter> buf(fftw_alloc_complex(d.size()));
  auto *c = reinterpret_cast<Complex *>(buf.get());
  std::copy(values.begin(), values.end(), c);
  fftw_execute_dft(PlanCache::instance().get(d, FFTW_FORWARD), buf.get(), buf.get());
  KSpace out(g);
  shift_copy(c, out.data.data(), d, false);
  return out;
}

} // namespace

void validate(Volume const &v) {
  check_length(v);
  for (double x : v.data) {
    if (!std::isfinite(x)) {
      throw ValidationError("volume contains non-finite values");
    }
  }
}

void validate(ComplexVolume const &v) {
  check_length(v);
  for (auto const &x : v.data) {
    if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) {
      throw ValidationError("complex grid contains non-finite values");
    }
  }
}

void validate(Image2D const &img) {
  if (img.width <= 0 || img.height <= 0 || img.data.size() != std::size_t(img.width) * std::size_t(img.height)) {
    throw DimensionError(fmt::format("image data length {} does not match {}x{}", img.data.size(), img.width, img.height));
  }
  for (double x : img.data) {
    if (!std::isfinite(x)) {
      throw ValidationError("image contains non-finite values");
    }
  }
}

KSpace fft3_centered(Volume const &v) {
  validate(v);
  std::vector<Complex> values(v.data.begin(), v.data.end());
  return forward(v.geom, values);
}

KSpace fft3_centered(ComplexVolume const &v) {
  validate(v);
  return forward(v.geom, v.data);
}

ComplexVolume ifft3_centered(KSpace const &k) {
  validate(k);
  Dims const d = k.geom.dims;
  std::unique_ptr<fftw_complex, FftwDeleter> buf(fftw_alloc_complex(d.size()));
  auto *c = reinterpret_cast<Complex *>(buf.get());
  shift_copy(k.data.data(), c, d, true);
  fftw_execute_dft(PlanCache::instance().get(d, FFTW_BACKWARD), buf.get(), buf.get());
  double const scale = 1.0 / static_cast<double>(d.size());
  ComplexVolume out(k.geom);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.data[i] = c[i] * scale;
  }
  return out;
}

Volume magnitude(ComplexVolume const &c) {
  validate(c);
  Volume out(c.geom);
  std::transform(c.data.begin(), c.data.end(), out.data.begin(), [](Complex const &z) { return std::abs(z); });
  return out;
}

std::array<int, 2> in_plane_axes(int axis) {
  switch (axis) {
  case 0: return {1, 2};
  case 1: return {0, 2};
  case 2: return {0, 1};
  default: throw ValidationError(fmt::format("slice axis must be 0, 1 or 2, got {}", axis));
  }
}

namespace {
template <class T> void check_slice_index(Grid<T> const &v, int axis, int index) {
  if (axis < 0 || axis > 2) {
    throw ValidationError(fmt::format("slice axis must be 0, 1 or 2, got {}", axis));
  }
  int const extent = v.geom.dims[axis];
  if (index < 0 || index >= extent) {
    throw ValidationError(fmt::format("slice index {} out of range for axis {} ({}) with extent {}", index, axis,
                                      v.geom.labels[std::size_t(axis)], extent));
  }
}
} // namespace

template <class T> Plane<T> extract_slice(Grid<T> const &v, int axis, int index, std::string source) {
  check_slice_index(v, axis, index);
  auto const [ua, va] = in_plane_axes(axis);
  Plane<T> p(v.geom.dims[ua], v.geom.dims[va]);
  p.provenance = {std::move(source), axis, index};
  std::size_t const base = std::size_t(index) * v.geom.stride(axis);
  std::size_t const su = v.geom.stride(ua), sv = v.geom.stride(va);
  for (int b = 0; b < p.height; ++b) {
    for (int a = 0; a < p.width; ++a) {
      p(a, b) = v.data[base + std::size_t(a) * su + std::size_t(b) * sv];
    }
  }
  return p;
}

template <class T> void insert_slice(Grid<T> &v, Plane<T> const &plane, int axis, int index) {
  check_slice_index(v, axis, index);
  auto const [ua, va] = in_plane_axes(axis);
  if (plane.width != v.geom.dims[ua] || plane.height != v.geom.dims[va]) {
    throw DimensionError(fmt::format("slice {}x{} does not fit volume plane {}x{}", plane.width, plane.height,
                                     v.geom.dims[ua], v.geom.dims[va]));
  }
  std::size_t const base = std::size_t(index) * v.geom.stride(axis);
  std::size_t const su = v.geom.stride(ua), sv = v.geom.stride(va);
  for (int b = 0; b < plane.height; ++b) {
    for (int a = 0; a < plane.width; ++a) {
      v.data[base + std::size_t(a) * su + std::size_t(b) * sv] = plane(a, b);
    }
  }
}

template Plane<double> extract_slice(Grid<double> const &, int, int, std::string);
template Plane<std::uint8_t> extract_slice(Grid<std::uint8_t> const &, int, int, std::string);
template void insert_slice(Grid<double> &, Plane<double> const &, int, int);
template void insert_slice(Grid<std::uint8_t> &, Plane<std::uint8_t> const &, int, int);

} // namespace moco
