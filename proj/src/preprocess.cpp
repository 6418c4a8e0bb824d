#include "moco/preprocess.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace moco {

double percentile(std::span<double const> values, double p) {
  if (values.empty()) {
    throw DegenerateInputError("percentile of an empty set");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double const pos = std::clamp(p, 0.0, 100.0) / 100.0 * double(sorted.size() - 1);
  auto const lo = static_cast<std::size_t>(std::floor(pos));
  auto const hi = std::min(lo + 1, sorted.size() - 1);
  double const t = pos - double(lo);
  return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

namespace {

// One pass of binary dilation (or erosion) with the full 3x3x3 neighborhood.
// Out-of-grid neighbors are ignored.
ForegroundMask morph(ForegroundMask const &in, bool dilate) {
  Dims const d = in.geom.dims;
  ForegroundMask out(in.geom);
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        bool hit = !dilate;
        for (int dk = -1; dk <= 1 && hit != dilate; ++dk) {
          int const kk = k + dk;
          if (kk < 0 || kk >= d.nz) continue;
          for (int dj = -1; dj <= 1 && hit != dilate; ++dj) {
            int const jj = j + dj;
            if (jj < 0 || jj >= d.ny) continue;
            for (int di = -1; di <= 1; ++di) {
              int const ii = i + di;
              if (ii < 0 || ii >= d.nx) continue;
              bool const set = in(ii, jj, kk) != 0;
              if (dilate && set) {
                hit = true;
                break;
              }
              if (!dilate && !set) {
                hit = false;
                break;
              }
            }
          }
        }
        out(i, j, k) = hit ? 1 : 0;
      }
    }
  }
  return out;
}

void check_mask(Geometry const &g, ForegroundMask const &m) {
  if (m.geom.dims != g.dims || m.data.size() != g.dims.size()) {
    throw DimensionError("foreground mask dims do not match the volume");
  }
}

void check_record(NormalizationRecord const &r) {
  if (!(r.original_std > 0.0) || !std::isfinite(r.original_mean) || !(r.target_std > 0.0)) {
    throw ValidationError("normalization record must have positive, finite standard deviations");
  }
}

} // namespace

ForegroundMask estimate_foreground(Volume const &v, ForegroundConfig const &cfg) {
  validate(v);
  if (cfg.iterations < 0 || !(cfg.fraction >= 0.0)) {
    throw ValidationError("foreground config must have non-negative fraction and iterations");
  }
  auto const [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  if (*lo == *hi) {
    throw DegenerateInputError("cannot estimate foreground of a constant volume");
  }
  double const threshold = cfg.fraction * percentile(v.data, 99.0);
  ForegroundMask m(v.geom);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    m.data[i] = v.data[i] > threshold ? 1 : 0;
  }
  for (int it = 0; it < cfg.iterations; ++it) m = morph(m, true);
  for (int it = 0; it < cfg.iterations; ++it) m = morph(m, false);
  return m;
}

std::pair<Volume, NormalizationRecord> normalize(Volume const &v, ForegroundMask const &m) {
  validate(v);
  check_mask(v.geom, m);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (m.data[i]) {
      sum += v.data[i];
      ++count;
    }
  }
  if (count == 0) {
    throw DegenerateInputError("cannot normalize: foreground is empty");
  }
  double const mean = sum / double(count);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (m.data[i]) ss += (v.data[i] - mean) * (v.data[i] - mean);
  }
  double const sd = std::sqrt(ss / double(count));
  if (!(sd > 0.0)) {
    throw DegenerateInputError("cannot normalize: foreground has zero variance");
  }
  NormalizationRecord r;
  r.original_mean = mean;
  r.original_std = sd;
  return {apply_normalization(v, r, m), r};
}

namespace {
template <class G, class M> G affine(G out, M const &m, double in_mean, double in_std, double out_mean, double out_std) {
  double const gain = out_std / in_std;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = m.data[i] ? (out.data[i] - in_mean) * gain + out_mean : 0.0;
  }
  return out;
}
} // namespace

Volume apply_normalization(Volume const &v, NormalizationRecord const &r, ForegroundMask const &m) {
  check_mask(v.geom, m);
  check_record(r);
  return affine(v, m, r.original_mean, r.original_std, r.target_mean, r.target_std);
}

Volume denormalize(Volume const &v, NormalizationRecord const &r, ForegroundMask const &m) {
  check_mask(v.geom, m);
  check_record(r);
  return affine(v, m, r.target_mean, r.target_std, r.original_mean, r.original_std);
}

Image2D apply_normalization(Image2D const &img, NormalizationRecord const &r, Mask2D const &m) {
  if (m.width != img.width || m.height != img.height) throw DimensionError("slice mask dims do not match the image");
  check_record(r);
  return affine(img, m, r.original_mean, r.original_std, r.target_mean, r.target_std);
}

Image2D denormalize(Image2D const &img, NormalizationRecord const &r, Mask2D const &m) {
  if (m.width != img.width || m.height != img.height) throw DimensionError("slice mask dims do not match the image");
  check_record(r);
  return affine(img, m, r.target_mean, r.target_std, r.original_mean, r.original_std);
}

nlohmann::json record_to_json(NormalizationRecord const &r) {
  return {{"original_mean", r.original_mean}, {"original_std", r.original_std}, {"target_mean", r.target_mean}, {"target_std", r.target_std}};
}

NormalizationRecord record_from_json(nlohmann::json const &j) {
  try {
    NormalizationRecord r;
    r.original_mean = j.at("original_mean").get<double>();
    r.original_std = j.at("original_std").get<double>();
    r.target_mean = j.at("target_mean").get<double>();
    r.target_std = j.at("target_std").get<double>();
    check_record(r);
    return r;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed normalization record: {}", e.what()));
  }
}

nlohmann::json foreground_config_to_json(ForegroundConfig const &c) {
  return {{"fraction_of_p99", c.fraction}, {"iterations", c.iterations}, {"structuring_element", "3x3x3 full"}};
}

} // namespace moco
