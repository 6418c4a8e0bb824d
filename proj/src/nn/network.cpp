#include "moco/nn/network.hpp"

#include "moco/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace moco::nn {

void NetworkConfig::validate() const {
  if (levels < 1) throw ValidationError(fmt::format("network needs at least one level, got {}", levels));
  if (int(channels.size()) != levels) {
    throw ValidationError(fmt::format("network has {} levels but {} channel widths", levels, channels.size()));
  }
  if (std::any_of(channels.begin(), channels.end(), [](int c) { return c <= 0; })) {
    throw ValidationError("channel widths must be positive");
  }
  if (convs_per_level < 1) throw ValidationError("convs_per_level must be at least 1");
  if (in_channels < 1) throw ValidationError("in_channels must be at least 1");
  if (residual_output && in_channels != 1) throw ValidationError("residual output requires a single input channel");
  if (!(decoder_dropout >= 0.0 && decoder_dropout < 1.0)) {
    throw ValidationError(fmt::format("dropout rate must be in [0, 1), got {}", decoder_dropout));
  }
}

std::vector<LayerInfo> layer_layout(NetworkConfig const &cfg) {
  cfg.validate();
  std::vector<LayerInfo> out;
  int const L = cfg.levels;
  auto const &ch = cfg.channels;
  for (int i = 0; i < L; ++i) {
    for (int c = 0; c < cfg.convs_per_level; ++c) {
      int const in = c ? ch[std::size_t(i)] : (i ? ch[std::size_t(i - 1)] : cfg.in_channels);
      out.push_back({fmt::format("enc{}.conv{}", i, c), ch[std::size_t(i)], in, true, false});
    }
  }
  for (int j = L - 1; j >= 0; --j) {
    for (int c = 0; c < cfg.convs_per_level; ++c) {
      int in = ch[std::size_t(j)];
      if (c == 0) {
        in = j == L - 1 ? ch[std::size_t(L - 1)] : (cfg.skip_connections ? 2 : 1) * ch[std::size_t(j + 1)];
      }
      out.push_back({fmt::format("dec{}.conv{}", j, c), ch[std::size_t(j)], in, true, cfg.decoder_dropout > 0.0});
    }
  }
  out.push_back({"head", 1, (cfg.skip_connections ? 2 : 1) * ch[0], false, false});
  return out;
}

std::size_t NetworkParameters::parameter_count() const {
  std::size_t n = 0;
  for (auto const &b : blocks) n += b.parameter_count();
  return n;
}

Gradients zero_gradients(NetworkParameters const &p) {
  Gradients g;
  g.reserve(p.blocks.size());
  for (auto const &b : p.blocks) g.emplace_back(b.out_ch, b.in_ch);
  return g;
}

NetworkParameters build_network(NetworkConfig const &cfg, std::uint64_t seed) {
  NetworkParameters p;
  p.config = cfg;
  p.layout = layer_layout(cfg);
  p.seed = seed;
  Rng rng(seed);
  for (auto const &info : p.layout) {
    ConvBlock b(info.out_ch, info.in_ch);
    double const limit = std::sqrt(6.0 / (9.0 * info.in_ch));
    for (auto &w : b.weights) w = rng.uniform(-limit, limit);
    p.blocks.push_back(std::move(b));
  }
  // Residual networks start at the identity map.
  if (cfg.residual_output) std::fill(p.blocks.back().weights.begin(), p.blocks.back().weights.end(), 0.0);
  return p;
}

ForwardResult forward(NetworkParameters const &p, Tensor4 const &x, ForwardOptions const &opt) {
  auto const &cfg = p.config;
  int const L = cfg.levels, K = cfg.convs_per_level;
  x.validate();
  if (x.shape.c != cfg.in_channels) {
    throw DimensionError(fmt::format("layer {}: expected {} input channels, got {}", p.layout.front().name, cfg.in_channels, x.shape.c));
  }
  if (x.shape.h % cfg.divisor() || x.shape.w % cfg.divisor()) {
    throw DimensionError(fmt::format("layer enc0.conv0: input {}x{} not divisible by 2^{} = {}", x.shape.h, x.shape.w, L, cfg.divisor()));
  }
  if (opt.fixed_masks && opt.fixed_masks->size() != p.blocks.size()) {
    throw ValidationError("fixed dropout masks do not match the network layout");
  }

  ForwardResult r;
  ForwardCache &cache = r.cache;
  cache.mode = opt.mode;
  cache.input = x;
  Rng rng(opt.dropout_seed);
  auto tapped = [&](std::string const &name) { return std::find(opt.taps.begin(), opt.taps.end(), name) != opt.taps.end(); };

  std::size_t b = 0;
  auto run_block = [&](Tensor4 h) {
    auto const &info = p.layout[b];
    cache.block_inputs.push_back(std::move(h));
    Tensor4 y = conv3x3_forward(cache.block_inputs.back(), p.blocks[b]);
    if (info.relu) y = relu_forward(std::move(y));
    cache.block_outputs.push_back(y);
    std::vector<std::uint8_t> mask;
    if (info.dropout && opt.mode == Mode::Train) {
      mask = opt.fixed_masks ? (*opt.fixed_masks)[b] : dropout_mask(y.data.size(), cfg.decoder_dropout, rng);
      y = dropout_forward(std::move(y), mask, cfg.decoder_dropout);
    }
    cache.masks.push_back(std::move(mask));
    if (tapped(info.name)) r.taps[info.name] = y;
    ++b;
    return y;
  };

  Tensor4 h = x;
  std::vector<std::size_t> skip_block(static_cast<std::size_t>(L), 0);
  for (int i = 0; i < L; ++i) {
    for (int c = 0; c < K; ++c) h = run_block(std::move(h));
    skip_block[std::size_t(i)] = b - 1;
    if (tapped(fmt::format("enc{}", i))) r.taps[fmt::format("enc{}", i)] = h;
    cache.pool_input_shapes.push_back(h.shape);
    auto pooled = maxpool2_forward(h);
    cache.pool_argmax.push_back(std::move(pooled.argmax));
    h = std::move(pooled.y);
  }
  for (int j = L - 1; j >= 0; --j) {
    for (int c = 0; c < K; ++c) h = run_block(std::move(h));
    if (tapped(fmt::format("dec{}", j))) r.taps[fmt::format("dec{}", j)] = h;
    h = upsample2_forward(h);
    if (cfg.skip_connections) h = concat_forward(h, cache.block_outputs[skip_block[std::size_t(j)]]);
  }
  h = run_block(std::move(h));
  if (cfg.residual_output) {
    for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
  }
  cache.output = h;
  r.output = std::move(h);
  return r;
}

Gradients backward(NetworkParameters const &p, ForwardCache const &cache, Tensor4 const &target) {
  auto const &cfg = p.config;
  int const L = cfg.levels, K = cfg.convs_per_level;
  if (cache.block_inputs.size() != p.blocks.size() || cache.output.shape != target.shape) {
    throw ValidationError(fmt::format("backward: cache does not match the network or target shape {} vs output {}",
                                      target.shape.str(), cache.output.shape.str()));
  }
  Gradients g = zero_gradients(p);
  std::size_t b = p.blocks.size();

  auto back_block = [&](Tensor4 d) {
    --b;
    auto const &info = p.layout[b];
    if (!cache.masks[b].empty()) d = dropout_backward(std::move(d), cache.masks[b], cfg.decoder_dropout);
    if (info.relu) d = relu_backward(cache.block_outputs[b], std::move(d));
    return conv3x3_backward(cache.block_inputs[b], p.blocks[b], d, g[b]);
  };

  Tensor4 d = back_block(mse_gradient(cache.output, target));
  std::vector<Tensor4> skip_grad(static_cast<std::size_t>(L));
  for (int j = 0; j < L; ++j) {
    if (cfg.skip_connections) {
      auto [up, skip] = concat_backward(d, cfg.channels[std::size_t(j)]);
      d = std::move(up);
      skip_grad[std::size_t(j)] = std::move(skip);
    }
    d = upsample2_backward(d);
    for (int c = 0; c < K; ++c) d = back_block(std::move(d));
  }
  for (int i = L - 1; i >= 0; --i) {
    d = maxpool2_backward(cache.pool_input_shapes[std::size_t(i)], cache.pool_argmax[std::size_t(i)], d);
    if (cfg.skip_connections) {
      auto const &sg = skip_grad[std::size_t(i)];
      for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] += sg.data[k];
    }
    for (int c = 0; c < K; ++c) d = back_block(std::move(d));
  }
  return g;
}

Image2D correct(NetworkParameters const &p, Image2D const &img) {
  validate(img);
  Tensor4 x({1, 1, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), x.data.begin());
  auto r = forward(p, x, {});
  Image2D out(img.width, img.height);
  out.provenance = img.provenance;
  std::copy(r.output.data.begin(), r.output.data.end(), out.data.begin());
  return out;
}

nlohmann::json config_to_json(NetworkConfig const &cfg) {
  return {{"levels", cfg.levels},
          {"channels", cfg.channels},
          {"convs_per_level", cfg.convs_per_level},
          {"skip_connections", cfg.skip_connections},
          {"decoder_dropout", cfg.decoder_dropout},
          {"residual_output", cfg.residual_output},
          {"in_channels", cfg.in_channels},
          {"kernel", "3x3 stride 1 zero-pad 1"},
          {"activation", "relu (head linear)"},
          {"pool", "max 2x2 stride 2"},
          {"upsample", "nearest x2"}};
}

NetworkConfig config_from_json(nlohmann::json const &j) {
  try {
    NetworkConfig cfg;
    cfg.levels = j.value("levels", cfg.levels);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.convs_per_level = j.value("convs_per_level", cfg.convs_per_level);
    cfg.skip_connections = j.value("skip_connections", cfg.skip_connections);
    cfg.decoder_dropout = j.value("decoder_dropout", cfg.decoder_dropout);
    cfg.residual_output = j.value("residual_output", cfg.residual_output);
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
    cfg.validate();
    return cfg;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed network config: {}", e.what()));
  }
}

void save_weights(std::filesystem::path const &header, NetworkParameters const &p) {
  auto payload = header;
  payload.replace_extension(".bin");
  std::vector<double> flat;
  flat.reserve(p.parameter_count());
  nlohmann::json layout = nlohmann::json::array();
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto const &blk = p.blocks[b];
    std::size_t const w_off = flat.size() * sizeof(float);
    flat.insert(flat.end(), blk.weights.begin(), blk.weights.end());
    std::size_t const b_off = flat.size() * sizeof(float);
    flat.insert(flat.end(), blk.bias.begin(), blk.bias.end());
    layout.push_back({{"name", p.layout[b].name},
                      {"weight_shape", {blk.out_ch, blk.in_ch, 3, 3}},
                      {"bias_shape", {blk.out_ch}},
                      {"weight_offset", w_off},
                      {"bias_offset", b_off}});
  }
  io::write_f32(payload, flat);
  io::write_json(header, {{"config", config_to_json(p.config)},
                          {"layout", layout},
                          {"seed", p.seed},
                          {"parameter_count", flat.size()},
                          {"value_type", "float32 little-endian"},
                          {"payload", payload.filename().string()}});
}

NetworkParameters load_weights(std::filesystem::path const &header) {
  auto const j = io::read_json(header);
  NetworkParameters p;
  p.config = config_from_json(j.at("config"));
  p.layout = layer_layout(p.config);
  p.seed = j.value("seed", std::uint64_t{0});
  auto const &layout = j.at("layout");
  if (layout.size() != p.layout.size()) {
    throw ValidationError(fmt::format("{}: layout has {} blocks, config implies {}", header.string(), layout.size(), p.layout.size()));
  }
  std::size_t total = 0;
  for (auto const &info : p.layout) total += std::size_t(info.out_ch) * std::size_t(info.in_ch) * 9 + std::size_t(info.out_ch);
  auto const flat = io::read_f32(header.parent_path() / j.at("payload").get<std::string>(), total);
  for (std::size_t b = 0; b < p.layout.size(); ++b) {
    auto const &info = p.layout[b];
    auto const &entry = layout[b];
    if (entry.at("name").get<std::string>() != info.name) {
      throw ValidationError(fmt::format("{}: block {} is '{}', expected '{}'", header.string(), b, entry.at("name").get<std::string>(), info.name));
    }
    ConvBlock blk(info.out_ch, info.in_ch);
    auto const w_off = entry.at("weight_offset").get<std::size_t>() / sizeof(float);
    auto const b_off = entry.at("bias_offset").get<std::size_t>() / sizeof(float);
    if (w_off + blk.weights.size() > flat.size() || b_off + blk.bias.size() > flat.size()) {
      throw ValidationError(fmt::format("{}: block {} offsets exceed the payload", header.string(), info.name));
    }
    std::copy_n(flat.begin() + long(w_off), blk.weights.size(), blk.weights.begin());
    std::copy_n(flat.begin() + long(b_off), blk.bias.size(), blk.bias.begin());
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

} // namespace moco::nn
