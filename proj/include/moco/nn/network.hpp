#pragma once

#include "moco/nn/layers.hpp"
#include "moco/volume.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moco::nn {

// Encoder-decoder with skip connections:
//   encoder level i: 3 x (conv + ReLU) at width channels[i], then 2x2 max pool
//   decoder level i (deepest first): 3 x (conv + ReLU + dropout) at width
//     channels[i], nearest x2 upsample, concatenate encoder level i output
//   head: one linear 3x3 conv to a single channel
struct NetworkConfig {
  int levels = 3;
  std::vector<int> channels{16, 32, 64};
  int convs_per_level = 3;
  bool skip_connections = true;
  double decoder_dropout = 0.2;
  // Adds the (single-channel) input to the head output.
  bool residual_output = false;
  int in_channels = 1;

  void validate() const;
  // Spatial dims must be divisible by this.
  int divisor() const { return 1 << levels; }
};

struct LayerInfo {
  std::string name;
  int out_ch = 0;
  int in_ch = 0;
  bool relu = true;
  bool dropout = false;
};

// Ordered conv blocks in forward order with names such as "enc0.conv2",
// "dec1.conv0" and "head".
std::vector<LayerInfo> layer_layout(NetworkConfig const &cfg);

struct NetworkParameters {
  NetworkConfig config;
  std::vector<ConvBlock> blocks;
  std::vector<LayerInfo> layout;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const;
};

using Gradients = std::vector<ConvBlock>;
Gradients zero_gradients(NetworkParameters const &p);

// He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.
NetworkParameters build_network(NetworkConfig const &cfg, std::uint64_t seed);

enum class Mode { Train, Infer };

struct ForwardOptions {
  Mode mode = Mode::Infer;
  std::uint64_t dropout_seed = 0;
  // Reuse the dropout masks of an earlier train-mode pass (gradient checks).
  std::vector<std::vector<std::uint8_t>> const *fixed_masks = nullptr;
  // Layer-level taps: "enc<i>" / "dec<i>" return the last activation of that
  // level; a block name returns that block's activation.
  std::vector<std::string> taps;
};

struct ForwardCache {
  Mode mode = Mode::Infer;
  Tensor4 input;
  std::vector<Tensor4> block_inputs;              // per conv block
  std::vector<Tensor4> block_outputs;             // post-activation, pre-dropout
  std::vector<std::vector<std::uint8_t>> masks;   // per conv block, empty when unused
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<Shape4> pool_input_shapes;
  Tensor4 output;
};

struct ForwardResult {
  Tensor4 output;
  ForwardCache cache;
  std::map<std::string, Tensor4> taps;
};

ForwardResult forward(NetworkParameters const &p, Tensor4 const &x, ForwardOptions const &opt = {});

// Exact gradients of mse_loss(cache.output, target).
Gradients backward(NetworkParameters const &p, ForwardCache const &cache, Tensor4 const &target);

// Infer-mode pass on one image.
Image2D correct(NetworkParameters const &p, Image2D const &img);

nlohmann::json config_to_json(NetworkConfig const &cfg);
NetworkConfig config_from_json(nlohmann::json const &j);

// Weight file: JSON manifest at `header` plus float32 little-endian payload
// (".bin" next to it), blocks in manifest order, weights then bias.
void save_weights(std::filesystem::path const &header, NetworkParameters const &p);
NetworkParameters load_weights(std::filesystem::path const &header);

} // namespace moco::nn
