#pragma once

#include "moco/nn/network.hpp"

#include <cstdint>
#include <vector>

namespace moco::nn {

struct TrainConfig {
  double learning_rate = 0.001;
  double rho = 0.9;
  double decay = 0.0;
  double epsilon = 1e-8;
  int batch_size = 4;
  int iterations = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

// Squared-gradient accumulators, same layout as the parameters.
struct RmsState {
  Gradients accum;
  long step = 0;
};

RmsState init_rms_state(NetworkParameters const &p);

// v <- rho v + (1 - rho) g^2;  w <- w - lr_t g / (sqrt(v) + eps),
// lr_t = lr / (1 + decay * step).
void rmsprop_step(NetworkParameters &p, Gradients const &g, RmsState &s, TrainConfig const &cfg);

// Single-channel training pairs stored compactly.
struct SliceDataset {
  int height = 0;
  int width = 0;
  std::vector<float> inputs;
  std::vector<float> targets;

  std::size_t size() const { return height && width ? inputs.size() / (std::size_t(height) * std::size_t(width)) : 0; }
  void add(Image2D const &input, Image2D const &target);
};

struct TrainResult {
  NetworkParameters params;
  std::vector<double> loss_history; // batch loss before each update
};

// Shuffled mini-batches (reshuffled every epoch), fully determined by
// train_cfg.seed. Throws NumericalError naming the iteration on divergence.
TrainResult train(SliceDataset const &data, NetworkConfig const &net_cfg, TrainConfig const &train_cfg);

nlohmann::json train_config_to_json(TrainConfig const &cfg);
TrainConfig train_config_from_json(nlohmann::json const &j, TrainConfig base = {});

} // namespace moco::nn
