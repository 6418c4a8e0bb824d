#include "moco/nn/layers.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace moco::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<RowMat const>;

std::string Shape4::str() const { return fmt::format("({}, {}, {}, {})", n, c, h, w); }

void Tensor4::validate() const {
  if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0 || data.size() != shape.size()) {
    throw DimensionError(fmt::format("tensor shape {} does not match data length {}", shape.str(), data.size()));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw ValidationError("tensor contains non-finite values");
  }
}

namespace {

// col[(ci*9 + ky*3 + kx), y*w + x] = src[ci, y + ky - 1, x + kx - 1], zero outside.
void im2col(double const *src, int c, int h, int w, double *col) {
  std::size_t const hw = std::size_t(h) * std::size_t(w);
  for (int ci = 0; ci < c; ++ci) {
    double const *plane = src + std::size_t(ci) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double *row = col + (std::size_t(ci) * 9 + std::size_t(ky) * 3 + std::size_t(kx)) * hw;
        for (int y = 0; y < h; ++y) {
          int const sy = y + ky - 1;
          double *dst = row + std::size_t(y) * std::size_t(w);
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          double const *srow = plane + std::size_t(sy) * std::size_t(w);
          int const dx = kx - 1;
          int const x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          std::fill(dst, dst + x0, 0.0);
          std::copy(srow + x0 + dx, srow + x1 + dx, dst + x0);
          std::fill(dst + x1, dst + w, 0.0);
        }
      }
    }
  }
}

void col2im_add(double const *col, int c, int h, int w, double *dst) {
  std::size_t const hw = std::size_t(h) * std::size_t(w);
  for (int ci = 0; ci < c; ++ci) {
    double *plane = dst + std::size_t(ci) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double const *row = col + (std::size_t(ci) * 9 + std::size_t(ky) * 3 + std::size_t(kx)) * hw;
        for (int y = 0; y < h; ++y) {
          int const sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          double const *src = row + std::size_t(y) * std::size_t(w);
          double *drow = plane + std::size_t(sy) * std::size_t(w);
          int const dx = kx - 1;
          int const x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int x = x0; x < x1; ++x) drow[x + dx] += src[x];
        }
      }
    }
  }
}

void check_conv(Tensor4 const &x, ConvBlock const &p) {
  if (x.shape.c != p.in_ch) {
    throw DimensionError(fmt::format("conv expects {} input channels, got tensor {}", p.in_ch, x.shape.str()));
  }
}

} // namespace

Tensor4 conv3x3_forward(Tensor4 const &x, ConvBlock const &p) {
  check_conv(x, p);
  Shape4 const s = x.shape;
  int const hw = s.h * s.w;
  Tensor4 y({s.n, p.out_ch, s.h, s.w});
  // GEMM operands live in Eigen-owned aligned storage so results do not
  // depend on the alignment of the tensor buffers.
  RowMat col(p.in_ch * 9, hw);
  RowMat out(p.out_ch, hw);
  RowMat const wm = ConstMapMat(p.weights.data(), p.out_ch, p.in_ch * 9);
  Eigen::Map<Eigen::VectorXd const> const b(p.bias.data(), p.out_ch);
  for (int n = 0; n < s.n; ++n) {
    im2col(x.sample(n), s.c, s.h, s.w, col.data());
    out.noalias() = wm * col;
    out.colwise() += b;
    MapMat(y.sample(n), p.out_ch, hw) = out;
  }
  return y;
}

Tensor4 conv3x3_backward(Tensor4 const &x, ConvBlock const &p, Tensor4 const &dy, ConvBlock &grad) {
  check_conv(x, p);
  Shape4 const s = x.shape;
  if (dy.shape != Shape4{s.n, p.out_ch, s.h, s.w}) {
    throw DimensionError(fmt::format("conv backward: gradient shape {} does not match output", dy.shape.str()));
  }
  int const hw = s.h * s.w;
  Tensor4 dx(s);
  RowMat col(p.in_ch * 9, hw);
  RowMat dcol(p.in_ch * 9, hw);
  RowMat dym(p.out_ch, hw);
  RowMat const wm = ConstMapMat(p.weights.data(), p.out_ch, p.in_ch * 9);
  RowMat dw = RowMat::Zero(p.out_ch, p.in_ch * 9);
  Eigen::VectorXd db = Eigen::VectorXd::Zero(p.out_ch);
  for (int n = 0; n < s.n; ++n) {
    im2col(x.sample(n), s.c, s.h, s.w, col.data());
    dym = ConstMapMat(dy.sample(n), p.out_ch, hw);
    dw.noalias() += dym * col.transpose();
    db += dym.rowwise().sum();
    dcol.noalias() = wm.transpose() * dym;
    col2im_add(dcol.data(), s.c, s.h, s.w, dx.sample(n));
  }
  MapMat(grad.weights.data(), p.out_ch, p.in_ch * 9) += dw;
  Eigen::Map<Eigen::VectorXd>(grad.bias.data(), p.out_ch) += db;
  return dx;
}

Tensor4 relu_forward(Tensor4 x) {
  for (auto &v : x.data) v = v > 0.0 ? v : 0.0;
  return x;
}

Tensor4 relu_backward(Tensor4 const &y, Tensor4 dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (!(y.data[i] > 0.0)) dy.data[i] = 0.0;
  }
  return dy;
}

PoolResult maxpool2_forward(Tensor4 const &x) {
  Shape4 const s = x.shape;
  if (s.h % 2 || s.w % 2) {
    throw DimensionError(fmt::format("max pool needs even spatial dims, got {}", s.str()));
  }
  PoolResult r{Tensor4({s.n, s.c, s.h / 2, s.w / 2}), {}};
  r.argmax.resize(r.y.data.size());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h / 2; ++y) {
        for (int xx = 0; xx < s.w / 2; ++xx, ++o) {
          std::size_t best = x.offset(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              std::size_t const idx = x.offset(n, c, 2 * y + dy, 2 * xx + dx);
              if (x.data[idx] > x.data[best]) best = idx;
            }
          }
          r.y.data[o] = x.data[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

Tensor4 maxpool2_backward(Shape4 const &x_shape, std::vector<std::uint32_t> const &argmax, Tensor4 const &dy) {
  if (argmax.size() != dy.data.size()) {
    throw DimensionError("max pool backward: cache does not match gradient");
  }
  Tensor4 dx(x_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

Tensor4 upsample2_forward(Tensor4 const &x) {
  Shape4 const s = x.shape;
  Tensor4 y({s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < 2 * s.h; ++yy)
        for (int xx = 0; xx < 2 * s.w; ++xx) y(n, c, yy, xx) = x(n, c, yy / 2, xx / 2);
  return y;
}

Tensor4 upsample2_backward(Tensor4 const &dy) {
  Shape4 const s = dy.shape;
  if (s.h % 2 || s.w % 2) {
    throw DimensionError(fmt::format("upsample backward needs even dims, got {}", s.str()));
  }
  Tensor4 dx({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < s.h; ++yy)
        for (int xx = 0; xx < s.w; ++xx) dx(n, c, yy / 2, xx / 2) += dy(n, c, yy, xx);
  return dx;
}

Tensor4 concat_forward(Tensor4 const &a, Tensor4 const &b) {
  if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w) {
    throw DimensionError(fmt::format("cannot concatenate {} and {}", a.shape.str(), b.shape.str()));
  }
  Tensor4 y({a.shape.n, a.shape.c + b.shape.c, a.shape.h, a.shape.w});
  std::size_t const pa = std::size_t(a.shape.c) * a.shape.plane(), pb = std::size_t(b.shape.c) * b.shape.plane();
  for (int n = 0; n < a.shape.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + pa, y.sample(n));
    std::copy(b.sample(n), b.sample(n) + pb, y.sample(n) + pa);
  }
  return y;
}

std::pair<Tensor4, Tensor4> concat_backward(Tensor4 const &dy, int a_channels) {
  Shape4 const s = dy.shape;
  if (a_channels <= 0 || a_channels >= s.c) {
    throw DimensionError(fmt::format("concat backward: split {} invalid for {}", a_channels, s.str()));
  }
  Tensor4 da({s.n, a_channels, s.h, s.w}), db({s.n, s.c - a_channels, s.h, s.w});
  std::size_t const pa = std::size_t(a_channels) * s.plane(), pb = std::size_t(s.c - a_channels) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::copy(dy.sample(n), dy.sample(n) + pa, da.sample(n));
    std::copy(dy.sample(n) + pa, dy.sample(n) + pa + pb, db.sample(n));
  }
  return {std::move(da), std::move(db)};
}

std::vector<std::uint8_t> dropout_mask(std::size_t count, double rate, Rng &rng) {
  std::vector<std::uint8_t> keep(count);
  for (auto &k : keep) k = rng.bernoulli(rate) ? 0 : 1;
  return keep;
}

Tensor4 dropout_forward(Tensor4 x, std::vector<std::uint8_t> const &keep, double rate) {
  if (keep.size() != x.data.size()) throw DimensionError("dropout mask does not match activation");
  double const scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = keep[i] ? x.data[i] * scale : 0.0;
  return x;
}

Tensor4 dropout_backward(Tensor4 dy, std::vector<std::uint8_t> const &keep, double rate) {
  return dropout_forward(std::move(dy), keep, rate);
}

double mse_loss(Tensor4 const &out, Tensor4 const &target) {
  if (out.shape != target.shape) {
    throw DimensionError(fmt::format("loss: output {} vs target {}", out.shape.str(), target.shape.str()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double const d = out.data[i] - target.data[i];
    acc += d * d;
  }
  return acc / double(out.data.size());
}

Tensor4 mse_gradient(Tensor4 const &out, Tensor4 const &target) {
  if (out.shape != target.shape) {
    throw DimensionError(fmt::format("loss: output {} vs target {}", out.shape.str(), target.shape.str()));
  }
  Tensor4 g(out.shape);
  double const scale = 2.0 / double(out.data.size());
  for (std::size_t i = 0; i < out.data.size(); ++i) g.data[i] = scale * (out.data[i] - target.data[i]);
  return g;
}

} // namespace moco::nn
