#pragma once

#include "moco/error.hpp"

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace moco {

using Complex = std::complex<double>;

struct Dims {
  int nx = 0, ny = 0, nz = 0;

  int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  std::size_t size() const { return std::size_t(nx) * std::size_t(ny) * std::size_t(nz); }
  bool operator==(Dims const &) const = default;
};

struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;

  double operator[](int axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  bool operator==(Spacing const &) const = default;
};

// Axis 0 (x) is left-right, axis 1 (y) superior-inferior and axis 2 (z)
// anterior-posterior. The phase-encode axis is z unless stated otherwise.
using AxisLabels = std::array<std::string, 3>;
inline AxisLabels default_axis_labels() { return {"LR", "SI", "AP"}; }
constexpr int kDefaultPhaseEncodeAxis = 2;

// Geometry shared by every 3D grid. Flat index order is x fastest, z slowest:
//   index(i, j, k) = i + nx * (j + ny * k)
// so with the default layout the phase-encode axis is the slowest one.
struct Geometry {
  Dims dims;
  Spacing spacing;
  AxisLabels labels = default_axis_labels();
  int pe_axis = kDefaultPhaseEncodeAxis;

  std::size_t index(int i, int j, int k) const {
    return std::size_t(i) + std::size_t(dims.nx) * (std::size_t(j) + std::size_t(dims.ny) * std::size_t(k));
  }
  std::size_t stride(int axis) const {
    return axis == 0 ? 1 : axis == 1 ? std::size_t(dims.nx) : std::size_t(dims.nx) * std::size_t(dims.ny);
  }
  int pe_extent() const { return dims[pe_axis]; }

  void validate() const;
  bool operator==(Geometry const &) const = default;
};

template <class T> struct Grid {
  Geometry geom;
  std::vector<T> data;

  Grid() = default;
  explicit Grid(Geometry g, T fill = T{}) : geom(std::move(g)), data(geom.dims.size(), fill) {}
  Grid(Geometry g, std::vector<T> values) : geom(std::move(g)), data(std::move(values)) {
    if (data.size() != geom.dims.size()) {
      throw DimensionError("grid data length " + std::to_string(data.size()) + " does not match dims product " +
                           std::to_string(geom.dims.size()));
    }
  }

  Dims const &dims() const { return geom.dims; }
  T &operator()(int i, int j, int k) { return data[geom.index(i, j, k)]; }
  T const &operator()(int i, int j, int k) const { return data[geom.index(i, j, k)]; }
};

// Real intensity volume (I_0, I_t and every image-domain result).
using Volume = Grid<double>;
// Complex image-domain grid, the raw output of the inverse transform.
using ComplexVolume = Grid<Complex>;
// Fourier-domain grid with DC stored at (nx/2, ny/2, nz/2), integer division.
using KSpace = Grid<Complex>;
// Binary grid, values 0 or 1.
using ForegroundMask = Grid<std::uint8_t>;

Geometry make_geometry(Dims dims, Spacing spacing = {});

struct SliceProvenance {
  std::string source;
  int axis = 2;
  int index = 0;
};

// 2D cross-section. Pixel (u, v) is stored at u + width * v, where u runs
// along the lower-numbered in-plane axis of the source volume.
template <class T> struct Plane {
  int width = 0;  // extent of the fast in-plane axis
  int height = 0; // extent of the slow in-plane axis
  std::vector<T> data;
  SliceProvenance provenance;

  Plane() = default;
  Plane(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {}

  T &operator()(int u, int v) { return data[std::size_t(u) + std::size_t(width) * std::size_t(v)]; }
  T const &operator()(int u, int v) const { return data[std::size_t(u) + std::size_t(width) * std::size_t(v)]; }
  std::size_t size() const { return data.size(); }
};

using Image2D = Plane<double>;
using Mask2D = Plane<std::uint8_t>;

void validate(Volume const &v);
void validate(ComplexVolume const &v);
void validate(Image2D const &img);

// Unnormalized forward DFT with DC shifted to the center index.
KSpace fft3_centered(Volume const &v);
KSpace fft3_centered(ComplexVolume const &v);
// Exact inverse of fft3_centered, including the 1/N factor.
ComplexVolume ifft3_centered(KSpace const &k);

Volume magnitude(ComplexVolume const &c);

// The two in-plane axes of a slice taken perpendicular to `axis`, lower first.
std::array<int, 2> in_plane_axes(int axis);

template <class T> Plane<T> extract_slice(Grid<T> const &v, int axis, int index, std::string source = {});
template <class T> void insert_slice(Grid<T> &v, Plane<T> const &plane, int axis, int index);

} // namespace moco
