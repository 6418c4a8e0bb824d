#pragma once

#include "moco/nn/tensor.hpp"
#include "moco/random.hpp"

#include <cstdint>
#include <vector>

namespace moco::nn {

// 3x3 convolution, stride 1, zero padding 1.
struct ConvBlock {
  int out_ch = 0;
  int in_ch = 0;
  std::vector<double> weights; // (out_ch, in_ch, 3, 3)
  std::vector<double> bias;    // (out_ch)

  ConvBlock() = default;
  ConvBlock(int out, int in) : out_ch(out), in_ch(in), weights(std::size_t(out) * std::size_t(in) * 9, 0.0), bias(std::size_t(out), 0.0) {}
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

Tensor4 conv3x3_forward(Tensor4 const &x, ConvBlock const &p);
// Accumulates into grad (same layout as p) and returns dL/dx.
Tensor4 conv3x3_backward(Tensor4 const &x, ConvBlock const &p, Tensor4 const &dy, ConvBlock &grad);

Tensor4 relu_forward(Tensor4 x);
// `y` is the forward output.
Tensor4 relu_backward(Tensor4 const &y, Tensor4 dy);

struct PoolResult {
  Tensor4 y;
  std::vector<std::uint32_t> argmax; // flat offset into x for every output element
};
// 2x2 max pool, stride 2. Ties resolve to the first element in raster order.
PoolResult maxpool2_forward(Tensor4 const &x);
Tensor4 maxpool2_backward(Shape4 const &x_shape, std::vector<std::uint32_t> const &argmax, Tensor4 const &dy);

// Nearest-neighbour x2.
Tensor4 upsample2_forward(Tensor4 const &x);
Tensor4 upsample2_backward(Tensor4 const &dy);

// Channel concatenation [a, b].
Tensor4 concat_forward(Tensor4 const &a, Tensor4 const &b);
std::pair<Tensor4, Tensor4> concat_backward(Tensor4 const &dy, int a_channels);

// Inverted dropout: kept elements are scaled by 1/(1-rate).
std::vector<std::uint8_t> dropout_mask(std::size_t count, double rate, Rng &rng);
Tensor4 dropout_forward(Tensor4 x, std::vector<std::uint8_t> const &keep, double rate);
Tensor4 dropout_backward(Tensor4 dy, std::vector<std::uint8_t> const &keep, double rate);

double mse_loss(Tensor4 const &out, Tensor4 const &target);
Tensor4 mse_gradient(Tensor4 const &out, Tensor4 const &target);

} // namespace moco::nn
