#pragma once

#include "moco/error.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace moco::nn {

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return std::size_t(n) * std::size_t(c) * std::size_t(h) * std::size_t(w); }
  std::size_t plane() const { return std::size_t(h) * std::size_t(w); }
  bool operator==(Shape4 const &) const = default;
  std::string str() const;
};

// (batch, channels, height, width), row-major with width fastest.
struct Tensor4 {
  Shape4 shape;
  std::vector<double> data;

  Tensor4() = default;
  explicit Tensor4(Shape4 s, double fill = 0.0) : shape(s), data(s.size(), fill) {}

  double &operator()(int n, int c, int y, int x) { return data[offset(n, c, y, x)]; }
  double operator()(int n, int c, int y, int x) const { return data[offset(n, c, y, x)]; }
  std::size_t offset(int n, int c, int y, int x) const {
    return ((std::size_t(n) * std::size_t(shape.c) + std::size_t(c)) * std::size_t(shape.h) + std::size_t(y)) * std::size_t(shape.w) +
           std::size_t(x);
  }
  double *sample(int n) { return data.data() + std::size_t(n) * std::size_t(shape.c) * shape.plane(); }
  double const *sample(int n) const { return data.data() + std::size_t(n) * std::size_t(shape.c) * shape.plane(); }

  void validate() const;
};

} // namespace moco::nn
