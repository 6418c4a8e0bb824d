#include "moco/nn/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moco::nn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("rho must lie in (0, 1)");
  if (!(decay >= 0.0)) throw ValidationError("decay must be non-negative");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (iterations < 0) throw ValidationError("iterations must be non-negative");
}

RmsState init_rms_state(NetworkParameters const &p) { return {zero_gradients(p), 0}; }

void rmsprop_step(NetworkParameters &p, Gradients const &g, RmsState &s, TrainConfig const &cfg) {
  if (g.size() != p.blocks.size() || s.accum.size() != p.blocks.size()) {
    throw DimensionError("optimizer: gradient or state layout does not match the parameters");
  }
  for (auto const &blk : g) {
    for (double v : blk.weights)
      if (!std::isfinite(v)) throw NumericalError("training diverged: non-finite gradient");
    for (double v : blk.bias)
      if (!std::isfinite(v)) throw NumericalError("training diverged: non-finite gradient");
  }
  double const lr = cfg.learning_rate / (1.0 + cfg.decay * double(s.step));
  auto update = [&](std::vector<double> &w, std::vector<double> const &gr, std::vector<double> &v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.rho * v[i] + (1.0 - cfg.rho) * gr[i] * gr[i];
      w[i] -= lr * gr[i] / (std::sqrt(v[i]) + cfg.epsilon);
    }
  };
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    update(p.blocks[b].weights, g[b].weights, s.accum[b].weights);
    update(p.blocks[b].bias, g[b].bias, s.accum[b].bias);
  }
  ++s.step;
}

void SliceDataset::add(Image2D const &input, Image2D const &target) {
  if (input.width != target.width || input.height != target.height) {
    throw DimensionError("training pair input and target dims differ");
  }
  if (size() == 0 && inputs.empty()) {
    width = input.width;
    height = input.height;
  } else if (input.width != width || input.height != height) {
    throw DimensionError(fmt::format("training pair {}x{} does not match dataset {}x{}", input.width, input.height, width, height));
  }
  inputs.insert(inputs.end(), input.data.begin(), input.data.end());
  targets.insert(targets.end(), target.data.begin(), target.data.end());
}

TrainResult train(SliceDataset const &data, NetworkConfig const &net_cfg, TrainConfig const &train_cfg) {
  train_cfg.validate();
  std::size_t const count = data.size();
  if (count == 0) throw ValidationError("training dataset is empty");
  if (data.targets.size() != data.inputs.size()) throw DimensionError("training inputs and targets differ in length");

  TrainResult r{build_network(net_cfg, derive_seed(train_cfg.seed, 0x696e6974)), {}};
  RmsState state = init_rms_state(r.params);
  Rng order_rng(derive_seed(train_cfg.seed, 0x73687566));
  std::vector<std::size_t> order(count);
  std::size_t cursor = count;
  std::size_t const plane = std::size_t(data.height) * std::size_t(data.width);
  int const bs = train_cfg.batch_size;

  r.loss_history.reserve(std::size_t(train_cfg.iterations));
  for (int it = 0; it < train_cfg.iterations; ++it) {
    Tensor4 x({bs, 1, data.height, data.width}), t({bs, 1, data.height, data.width});
    for (int n = 0; n < bs; ++n) {
      if (cursor == count) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = count - 1; i > 0; --i) {
          std::swap(order[i], order[std::size_t(order_rng.uniform_int(0, std::int64_t(i)))]);
        }
        cursor = 0;
      }
      std::size_t const idx = order[cursor++];
      std::copy_n(data.inputs.begin() + long(idx * plane), plane, x.sample(n));
      std::copy_n(data.targets.begin() + long(idx * plane), plane, t.sample(n));
    }
    ForwardOptions opt;
    opt.mode = Mode::Train;
    opt.dropout_seed = derive_seed(train_cfg.seed, 0x64726f70, std::uint64_t(it));
    auto fwd = forward(r.params, x, opt);
    double const loss = mse_loss(fwd.output, t);
    if (!std::isfinite(loss)) {
      throw NumericalError(fmt::format("training diverged at iteration {}: loss is {}", it, loss));
    }
    r.loss_history.push_back(loss);
    auto const grads = backward(r.params, fwd.cache, t);
    try {
      rmsprop_step(r.params, grads, state, train_cfg);
    } catch (NumericalError const &e) {
      throw NumericalError(fmt::format("{} at iteration {}", e.what(), it));
    }
  }
  return r;
}

nlohmann::json train_config_to_json(TrainConfig const &cfg) {
  return {{"optimizer", "rmsprop"},
          {"learning_rate", cfg.learning_rate},
          {"rho", cfg.rho},
          {"decay", cfg.decay},
          {"epsilon", cfg.epsilon},
          {"batch_size", cfg.batch_size},
          {"iterations", cfg.iterations},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(nlohmann::json const &j, TrainConfig base) {
  try {
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.rho = j.value("rho", base.rho);
    base.decay = j.value("decay", base.decay);
    base.epsilon = j.value("epsilon", base.epsilon);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.iterations = j.value("iterations", base.iterations);
    base.seed = j.value("seed", base.seed);
    base.validate();
    return base;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed training config: {}", e.what()));
  }
}

} // namespace moco::nn
