#include "moco/metrics.hpp"

#include "moco/io.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace moco::metrics {

double percentage_error(std::span<double const> out, std::span<double const> ref, std::span<std::uint8_t const> mask) {
  if (out.size() != ref.size() || mask.size() != ref.size()) {
    throw DimensionError(fmt::format("percentage error: sizes {} / {} / mask {} differ", out.size(), ref.size(), mask.size()));
  }
  double num = 0.0, den = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!mask[i]) continue;
    num += std::abs(out[i] - ref[i]);
    den += std::abs(ref[i]);
    ++count;
  }
  if (count == 0) throw DegenerateInputError("percentage error: foreground mask is empty");
  if (!(den > 0.0)) throw DegenerateInputError("percentage error: reference has zero energy on the foreground");
  return 100.0 * num / den;
}

double percentage_error(Volume const &out, Volume const &ref, ForegroundMask const &mask) {
  if (out.geom.dims != ref.geom.dims || mask.geom.dims != ref.geom.dims) {
    throw DimensionError("percentage error: volume dims differ");
  }
  return percentage_error(out.data, ref.data, mask.data);
}

double percentage_error(Image2D const &out, Image2D const &ref, Mask2D const &mask) {
  if (out.width != ref.width || out.height != ref.height || mask.width != ref.width || mask.height != ref.height) {
    throw DimensionError("percentage error: image dims differ");
  }
  return percentage_error(out.data, ref.data, mask.data);
}

double gamma_fn(double x) { return std::tgamma(x); }

double ggd_moment_ratio(double alpha) {
  double const g1 = gamma_fn(1.0 / alpha), g2 = gamma_fn(2.0 / alpha), g3 = gamma_fn(3.0 / alpha);
  return (g2 / g1) * (g2 / g3);
}

namespace {

double invert_ratio(double target) {
  double lo = kShapeMin, hi = kShapeMax;
  if (target <= ggd_moment_ratio(lo)) return lo;
  if (target >= ggd_moment_ratio(hi)) return hi;
  while (hi - lo > 1e-6) {
    double const mid = 0.5 * (lo + hi);
    if (ggd_moment_ratio(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void check_samples(std::span<double const> samples, std::size_t min_samples) {
  if (samples.size() < min_samples) {
    throw DegenerateInputError(fmt::format("distribution fit needs at least {} samples, got {}", min_samples, samples.size()));
  }
  for (double x : samples) {
    if (!std::isfinite(x)) throw ValidationError("distribution fit: non-finite sample");
  }
}

} // namespace

GgdFit fit_ggd(std::span<double const> samples, std::size_t min_samples) {
  check_samples(samples, min_samples);
  double abs_sum = 0.0, sq_sum = 0.0;
  for (double x : samples) {
    abs_sum += std::abs(x);
    sq_sum += x * x;
  }
  double const n = double(samples.size());
  double const m1 = abs_sum / n, m2 = sq_sum / n;
  if (!(m2 > 0.0)) throw DegenerateInputError("GGD fit: samples have zero variance");
  return {invert_ratio(m1 * m1 / m2), m2};
}

AggdFit fit_aggd(std::span<double const> samples, std::size_t min_samples) {
  check_samples(samples, min_samples);
  double left_sq = 0.0, right_sq = 0.0, abs_sum = 0.0;
  std::size_t left_n = 0, right_n = 0;
  for (double x : samples) {
    if (x < 0.0) {
      left_sq += x * x;
      ++left_n;
    } else if (x > 0.0) {
      right_sq += x * x;
      ++right_n;
    }
    abs_sum += std::abs(x);
  }
  if (left_n == 0 || right_n == 0) throw DegenerateInputError("AGGD fit: samples are one-sided");
  double const n = double(samples.size());
  double const left_std = std::sqrt(left_sq / double(left_n));
  double const right_std = std::sqrt(right_sq / double(right_n));
  double const g = left_std / right_std;
  double const m1 = abs_sum / n, m2 = (left_sq + right_sq) / n;
  double const r_hat = m1 * m1 / m2;
  double const r_norm = r_hat * (g * g * g + 1.0) * (g + 1.0) / ((g * g + 1.0) * (g * g + 1.0));
  double const alpha = invert_ratio(r_norm);
  double const g1 = gamma_fn(1.0 / alpha), g2 = gamma_fn(2.0 / alpha), g3 = gamma_fn(3.0 / alpha);
  double const mean = (right_std - left_std) * (g2 / g1) * std::sqrt(g1 / g3);
  return {alpha, mean, left_std * left_std, right_std * right_std};
}

std::vector<double> gaussian_window(NiqeConfig const &cfg) {
  int const r = cfg.window / 2;
  std::vector<double> w(std::size_t(cfg.window) * std::size_t(cfg.window));
  double sum = 0.0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      double const v = std::exp(-(x * x + y * y) / (2.0 * cfg.window_sigma * cfg.window_sigma));
      w[std::size_t(y + r) * std::size_t(cfg.window) + std::size_t(x + r)] = v;
      sum += v;
    }
  }
  for (auto &v : w) v /= sum;
  return w;
}

namespace {
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    i = i < 0 ? -i - 1 : 2 * n - i - 1;
  }
  return i;
}
} // namespace

MscnResult mscn(Image2D const &img, NiqeConfig const &cfg) {
  validate(img);
  if (cfg.window % 2 == 0 || cfg.window < 1) throw ValidationError("NIQE window size must be odd");
  if (img.width < cfg.window || img.height < cfg.window) {
    throw DimensionError(fmt::format("MSCN needs an image at least {}x{}, got {}x{}", cfg.window, cfg.window, img.width, img.height));
  }
  auto const w = gaussian_window(cfg);
  int const r = cfg.window / 2;
  MscnResult out{Image2D(img.width, img.height), Image2D(img.width, img.height)};
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      double mu = 0.0, m2 = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        int const vv = reflect(v + dy, img.height);
        for (int dx = -r; dx <= r; ++dx) {
          double const x = img(reflect(u + dx, img.width), vv);
          double const wt = w[std::size_t(dy + r) * std::size_t(cfg.window) + std::size_t(dx + r)];
          mu += wt * x;
          m2 += wt * x * x;
        }
      }
      double const sigma = std::sqrt(std::max(m2 - mu * mu, 0.0));
      out.local_std(u, v) = sigma;
      out.coefficients(u, v) = (img(u, v) - mu) / (sigma + cfg.stabilizer);
    }
  }
  return out;
}

Image2D downsample2(Image2D const &img) {
  Image2D out(img.width / 2, img.height / 2);
  out.provenance = img.provenance;
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u)
      out(u, v) = 0.25 * (img(2 * u, 2 * v) + img(2 * u + 1, 2 * v) + img(2 * u, 2 * v + 1) + img(2 * u + 1, 2 * v + 1));
  return out;
}

namespace {

// Appends the 18 features of one patch at one scale.
void patch_features(Image2D const &m, int u0, int v0, int p, std::size_t min_samples, std::vector<double> &row) {
  std::vector<double> vals;
  vals.reserve(std::size_t(p) * std::size_t(p));
  for (int v = v0; v < v0 + p; ++v)
    for (int u = u0; u < u0 + p; ++u) vals.push_back(m(u, v));
  auto const g = fit_ggd(vals, min_samples);
  row.push_back(g.alpha);
  row.push_back(g.variance);

  static constexpr int shifts[4][2] = {{1, 0}, {0, 1}, {1, 1}, {-1, 1}}; // (du, dv): horizontal, vertical, diagonals
  for (auto const &s : shifts) {
    vals.clear();
    for (int v = v0; v + s[1] < v0 + p; ++v) {
      for (int u = u0; u < u0 + p; ++u) {
        int const uu = u + s[0];
        if (uu < u0 || uu >= u0 + p) continue;
        vals.push_back(m(u, v) * m(uu, v + s[1]));
      }
    }
    auto const a = fit_aggd(vals, min_samples);
    row.push_back(a.alpha);
    row.push_back(a.mean);
    row.push_back(a.left_variance);
    row.push_back(a.right_variance);
  }
}

} // namespace

Eigen::MatrixXd niqe_features(Image2D const &img, NiqeConfig const &cfg, FeatureOptions const &opt) {
  validate(img);
  int const p = cfg.patch_size;
  if (cfg.scales < 1 || p <= 0 || p % (1 << (cfg.scales - 1)) != 0) {
    throw ValidationError(fmt::format("patch size {} must be divisible by 2^(scales-1)", p));
  }
  if (opt.foreground && (opt.foreground->width != img.width || opt.foreground->height != img.height)) {
    throw DimensionError("NIQE foreground mask dims differ from the image");
  }
  int const pw = img.width / p, ph = img.height / p;
  if (pw * ph < 4) {
    throw ValidationError(fmt::format("image {}x{} admits {} patches of size {}; at least 4 are needed", img.width, img.height, pw * ph, p));
  }
  Image2D scaled(pw * p, ph * p);
  for (int v = 0; v < scaled.height; ++v)
    for (int u = 0; u < scaled.width; ++u) scaled(u, v) = img(u, v) * cfg.intensity_scale;

  std::vector<MscnResult> maps;
  Image2D level = scaled;
  for (int s = 0; s < cfg.scales; ++s) {
    if (s) level = downsample2(level);
    maps.push_back(mscn(level, cfg));
  }

  struct Candidate {
    int px, py;
    double sharpness;
  };
  std::vector<Candidate> candidates;
  for (int py = 0; py < ph; ++py) {
    for (int px = 0; px < pw; ++px) {
      if (opt.foreground) {
        int fg = 0;
        for (int v = py * p; v < (py + 1) * p; ++v)
          for (int u = px * p; u < (px + 1) * p; ++u) fg += (*opt.foreground)(u, v) ? 1 : 0;
        if (double(fg) < cfg.min_foreground_fraction * p * p) continue;
      }
      double sharp = 0.0;
      for (int v = py * p; v < (py + 1) * p; ++v)
        for (int u = px * p; u < (px + 1) * p; ++u) sharp += maps[0].local_std(u, v);
      candidates.push_back({px, py, sharp / double(p * p)});
    }
  }
  if (opt.select_sharp && !candidates.empty()) {
    double const peak = std::max_element(candidates.begin(), candidates.end(), [](auto const &a, auto const &b) {
                          return a.sharpness < b.sharpness;
                        })->sharpness;
    std::erase_if(candidates, [&](Candidate const &c) { return !(c.sharpness > cfg.sharpness_fraction * peak); });
  }

  std::vector<std::vector<double>> rows;
  for (auto const &c : candidates) {
    std::vector<double> row;
    row.reserve(std::size_t(cfg.feature_length()));
    try {
      for (int s = 0; s < cfg.scales; ++s) {
        int const ps = p >> s;
        patch_features(maps[std::size_t(s)].coefficients, c.px * ps, c.py * ps, ps, cfg.min_patch_samples, row);
      }
    } catch (DegenerateInputError const &) {
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw DegenerateInputError("NIQE: no patch survived selection and fitting");
  }
  Eigen::MatrixXd out(long(rows.size()), cfg.feature_length());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < cfg.feature_length(); ++c) out(long(r), c) = rows[r][std::size_t(c)];
  return out;
}

Eigen::MatrixXd stack_features(std::vector<Eigen::MatrixXd> const &parts) {
  long rows = 0, cols = -1;
  for (auto const &p : parts) {
    if (cols >= 0 && p.cols() != cols) throw DimensionError("feature matrices differ in width");
    cols = p.cols();
    rows += p.rows();
  }
  Eigen::MatrixXd out(rows, std::max(cols, 0L));
  long r = 0;
  for (auto const &p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

MvgModel fit_mvg(Eigen::MatrixXd const &features, std::string corpus_id) {
  long const n = features.rows(), d = features.cols();
  if (d == 0 || n < 2 * d) {
    throw DegenerateInputError(fmt::format("MVG fit needs at least {} rows for {} features, got {}", 2 * d, d, n));
  }
  if (!features.allFinite()) throw ValidationError("MVG fit: non-finite features");
  MvgModel m;
  m.corpus_id = std::move(corpus_id);
  m.patch_count = std::size_t(n);
  m.mean = features.colwise().mean().transpose();
  Eigen::MatrixXd const centered = features.rowwise() - m.mean.transpose();
  m.covariance = (centered.transpose() * centered) / double(n - 1);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.covariance, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-10) {
    m.ridge = std::max(1e-6 * m.covariance.trace() / double(d), 1e-10);
    m.covariance.diagonal().array() += m.ridge;
  }
  return m;
}

double niqe_score(MvgModel const &test, MvgModel const &pristine) {
  if (test.mean.size() != pristine.mean.size() || test.covariance.rows() != pristine.covariance.rows()) {
    throw DimensionError(fmt::format("NIQE models have feature lengths {} and {}", test.mean.size(), pristine.mean.size()));
  }
  Eigen::MatrixXd const pooled = 0.5 * (test.covariance + pristine.covariance);
  Eigen::LLT<Eigen::MatrixXd> llt(pooled);
  if (llt.info() != Eigen::Success) throw NumericalError("NIQE: pooled covariance is not positive definite");
  Eigen::VectorXd const d = test.mean - pristine.mean;
  double const q = d.dot(llt.solve(d));
  if (!std::isfinite(q)) throw NumericalError("NIQE: non-finite distance");
  return std::sqrt(std::max(q, 0.0));
}

ImprovementSummary aggregate_improvement(std::span<double const> before, std::span<double const> after) {
  if (before.empty() || before.size() != after.size()) {
    throw DimensionError(fmt::format("improvement: {} before vs {} after scores", before.size(), after.size()));
  }
  ImprovementSummary s;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i] == 0.0) throw DegenerateInputError(fmt::format("improvement: row {} has a zero 'before' score", i));
    double const pct = 100.0 * (before[i] - after[i]) / before[i];
    s.percent_improvement.push_back(pct);
    s.mean_before += before[i];
    s.mean_after += after[i];
    s.mean_percent_improvement += pct;
  }
  double const n = double(before.size());
  s.mean_before /= n;
  s.mean_after /= n;
  s.mean_percent_improvement /= n;
  return s;
}

nlohmann::json niqe_config_to_json(NiqeConfig const &cfg) {
  return {{"window", cfg.window},
          {"window_sigma", cfg.window_sigma},
          {"stabilizer", cfg.stabilizer},
          {"patch_size", cfg.patch_size},
          {"sharpness_fraction", cfg.sharpness_fraction},
          {"scales", cfg.scales},
          {"min_foreground_fraction", cfg.min_foreground_fraction},
          {"intensity_scale", cfg.intensity_scale},
          {"min_patch_samples", cfg.min_patch_samples},
          {"feature_length", cfg.feature_length()},
          {"mr_modifications",
           {"pristine model fitted on motion-free MR-like slices", "patches restricted to the foreground",
            "patch size reduced for small matrices", "second scale by 2x2 mean pooling"}}};
}

NiqeConfig niqe_config_from_json(nlohmann::json const &j, NiqeConfig base) {
  try {
    base.window = j.value("window", base.window);
    base.window_sigma = j.value("window_sigma", base.window_sigma);
    base.stabilizer = j.value("stabilizer", base.stabilizer);
    base.patch_size = j.value("patch_size", base.patch_size);
    base.sharpness_fraction = j.value("sharpness_fraction", base.sharpness_fraction);
    base.scales = j.value("scales", base.scales);
    base.min_foreground_fraction = j.value("min_foreground_fraction", base.min_foreground_fraction);
    base.intensity_scale = j.value("intensity_scale", base.intensity_scale);
    base.min_patch_samples = j.value("min_patch_samples", base.min_patch_samples);
    return base;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed NIQE config: {}", e.what()));
  }
}

void save_model(std::filesystem::path const &header, MvgModel const &m, NiqeConfig const &cfg) {
  auto payload = header;
  payload.replace_extension(".bin");
  long const d = m.mean.size();
  std::vector<double> flat(m.mean.data(), m.mean.data() + d);
  for (long r = 0; r < d; ++r)
    for (long c = 0; c < d; ++c) flat.push_back(m.covariance(r, c));
  io::write_f64(payload, flat);
  io::write_json(header, {{"feature_length", d},
                          {"niqe", niqe_config_to_json(cfg)},
                          {"corpus_id", m.corpus_id},
                          {"patch_count", m.patch_count},
                          {"ridge", m.ridge},
                          {"value_type", "float64 little-endian"},
                          {"layout", "mean[d], covariance[d*d] row-major"},
                          {"payload", payload.filename().string()}});
}

MvgModel load_model(std::filesystem::path const &header, NiqeConfig *cfg_out) {
  auto const j = io::read_json(header);
  try {
    long const d = j.at("feature_length").get<long>();
    auto const flat = io::read_f64(header.parent_path() / j.at("payload").get<std::string>(), std::size_t(d + d * d));
    MvgModel m;
    m.corpus_id = j.value("corpus_id", std::string{});
    m.patch_count = j.value("patch_count", std::size_t{0});
    m.ridge = j.value("ridge", 0.0);
    m.mean = Eigen::Map<Eigen::VectorXd const>(flat.data(), d);
    m.covariance.resize(d, d);
    for (long r = 0; r < d; ++r)
      for (long c = 0; c < d; ++c) m.covariance(r, c) = flat[std::size_t(d + r * d + c)];
    if (cfg_out) *cfg_out = niqe_config_from_json(j.at("niqe"));
    return m;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed model header {}: {}", header.string(), e.what()));
  }
}

} // namespace moco::metrics
