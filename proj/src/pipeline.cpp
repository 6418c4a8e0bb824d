#include "moco/pipeline.hpp"

#include "moco/io.hpp"
#include "moco/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace moco::pipeline {

namespace {

constexpr std::uint64_t kPhantomStream = 0x7068616e746f6d;  // "phantom"
constexpr std::uint64_t kTrajectoryStream = 0x7472616a;     // "traj"

std::uint64_t split_code(std::string const &split) {
  if (split == "train") return 1;
  if (split == "test") return 2;
  throw ValidationError(fmt::format("unknown split '{}'", split));
}

// Stored payloads are float32, so every derived quantity is computed from
// the rounded values to keep records consistent with what is read back.
void round_to_f32(Volume &v) {
  for (auto &x : v.data) x = double(float(x));
}

double slice_foreground_fraction(ForegroundMask const &m, int axis, int index) {
  auto const s = extract_slice(m, axis, index);
  std::size_t fg = 0;
  for (auto x : s.data) fg += x ? 1 : 0;
  return double(fg) / double(s.size());
}

std::vector<int> foreground_slices(ForegroundMask const &m, int axis, double min_fraction) {
  std::vector<int> out;
  for (int i = 0; i < m.geom.dims[axis]; ++i) {
    if (slice_foreground_fraction(m, axis, i) >= min_fraction) out.push_back(i);
  }
  return out;
}

std::string rel(fs::path const &p) { return p.generic_string(); }

nlohmann::json stats_to_json(TrajectoryStats const &s) {
  return {{"mean_abs_translation_mm", s.mean_abs_translation},
          {"mean_abs_rotation_deg", s.mean_abs_rotation},
          {"mean_center_distance", s.mean_center_distance}};
}

TrajectoryStats stats_from_json(nlohmann::json const &j) {
  TrajectoryStats s;
  s.mean_abs_translation = j.at("mean_abs_translation_mm").get<double>();
  s.mean_abs_rotation = j.at("mean_abs_rotation_deg").get<double>();
  s.mean_center_distance = j.at("mean_center_distance").get<double>();
  return s;
}

void mask_image(Image2D &img, Mask2D const &m) {
  for (std::size_t i = 0; i < img.data.size(); ++i)
    if (!m.data[i]) img.data[i] = 0.0;
}

Image2D abs_difference(Image2D const &a, Image2D const &b) {
  Image2D out(a.width, a.height);
  out.provenance = a.provenance;
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::abs(a.data[i] - b.data[i]);
  return out;
}

} // namespace

void DatasetConfig::validate() const {
  make_geometry(dims, spacing).validate();
  if (n_train < 1 || n_test < 1) throw ValidationError("dataset needs at least one train and one test phantom");
  if (motions_per_phantom < 1) throw ValidationError("motions_per_phantom must be at least 1");
  if (slice_axis < 0 || slice_axis > 2 || slice_axis == kDefaultPhaseEncodeAxis) {
    throw ValidationError(fmt::format("slice axis {} must be 0 or 1 so slices contain the phase-encode axis", slice_axis));
  }
  if (!(min_slice_foreground >= 0.0 && min_slice_foreground <= 1.0)) {
    throw ValidationError("min_slice_foreground must lie in [0, 1]");
  }
  if (train_slice_stride < 1) throw ValidationError("train_slice_stride must be at least 1");
}

nlohmann::json dataset_config_to_json(DatasetConfig const &cfg) {
  return {{"dims", {cfg.dims.nx, cfg.dims.ny, cfg.dims.nz}},
          {"spacing_mm", {cfg.spacing.sx, cfg.spacing.sy, cfg.spacing.sz}},
          {"n_train", cfg.n_train},
          {"n_test", cfg.n_test},
          {"motions_per_phantom", cfg.motions_per_phantom},
          {"phantom",
           {{"min_structures", cfg.phantom.min_structures},
            {"max_structures", cfg.phantom.max_structures},
            {"min_intensity", cfg.phantom.min_intensity},
            {"max_intensity", cfg.phantom.max_intensity},
            {"noise_sigma", cfg.phantom.noise_sigma}}},
          {"motion_bounds",
           {{"translation_mm", cfg.trajectory.bounds.translation_mm},
            {"rotation_deg", cfg.trajectory.bounds.rotation_deg}}},
          {"foreground", foreground_config_to_json(cfg.foreground)},
          {"slice_axis", cfg.slice_axis},
          {"min_slice_foreground", cfg.min_slice_foreground},
          {"train_slice_stride", cfg.train_slice_stride},
          {"seed", cfg.seed}};
}

DatasetConfig dataset_config_from_json(nlohmann::json const &j, DatasetConfig c) {
  try {
    if (j.contains("dims")) {
      auto const d = j.at("dims").get<std::vector<int>>();
      if (d.size() != 3) throw ValidationError("dims must have three entries");
      c.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("spacing_mm")) {
      auto const s = j.at("spacing_mm").get<std::vector<double>>();
      if (s.size() != 3) throw ValidationError("spacing_mm must have three entries");
      c.spacing = {s[0], s[1], s[2]};
    }
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.motions_per_phantom = j.value("motions_per_phantom", c.motions_per_phantom);
    if (j.contains("phantom")) {
      auto const &p = j.at("phantom");
      c.phantom.min_structures = p.value("min_structures", c.phantom.min_structures);
      c.phantom.max_structures = p.value("max_structures", c.phantom.max_structures);
      c.phantom.min_intensity = p.value("min_intensity", c.phantom.min_intensity);
      c.phantom.max_intensity = p.value("max_intensity", c.phantom.max_intensity);
      c.phantom.noise_sigma = p.value("noise_sigma", c.phantom.noise_sigma);
    }
    if (j.contains("motion_bounds")) {
      auto const &b = j.at("motion_bounds");
      c.trajectory.bounds.translation_mm = b.value("translation_mm", c.trajectory.bounds.translation_mm);
      c.trajectory.bounds.rotation_deg = b.value("rotation_deg", c.trajectory.bounds.rotation_deg);
    }
    if (j.contains("foreground")) {
      auto const &f = j.at("foreground");
      c.foreground.fraction = f.value("fraction", c.foreground.fraction);
      c.foreground.iterations = f.value("iterations", c.foreground.iterations);
    }
    c.slice_axis = j.value("slice_axis", c.slice_axis);
    c.min_slice_foreground = j.value("min_slice_foreground", c.min_slice_foreground);
    c.train_slice_stride = j.value("train_slice_stride", c.train_slice_stride);
    c.seed = j.value("seed", c.seed);
    return c;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed dataset config: {}", e.what()));
  }
}

std::uint64_t phantom_seed(std::uint64_t master, std::string const &split, int phantom_index) {
  return derive_seed(master, kPhantomStream, split_code(split), std::uint64_t(phantom_index));
}

std::uint64_t trajectory_seed(std::uint64_t master, std::string const &split, int phantom_index, int motion_index) {
  return derive_seed(master, kTrajectoryStream, (split_code(split) << 32) | std::uint64_t(phantom_index),
                     std::uint64_t(motion_index));
}

namespace {

DatasetManifest build_split(fs::path const &root, DatasetConfig const &cfg, std::string const &split, int count) {
  DatasetManifest m;
  m.split = split;
  m.root = root;
  m.config = cfg;
  auto const geom = make_geometry(cfg.dims, cfg.spacing);
  for (int p = 0; p < count; ++p) {
    auto const pid = fmt::format("{}-{:03}", split, p);
    auto const pdir = fs::path(split) / pid;
    fs::create_directories(root / pdir);

    auto const pseed = phantom_seed(cfg.seed, split, p);
    auto const spec = random_phantom_spec(pseed, cfg.phantom);
    auto clean = generate_phantom(spec, cfg.dims, cfg.spacing);
    round_to_f32(clean);
    auto const clean_mask = estimate_foreground(clean, cfg.foreground);
    auto const clean_record = normalize(clean, clean_mask).second;
    auto const slices = foreground_slices(clean_mask, cfg.slice_axis, cfg.min_slice_foreground);

    io::write_json(root / pdir / "phantom.json", phantom_to_json(spec));
    io::write_volume(root / pdir / "clean.json", clean);
    io::write_mask(root / pdir / "clean_mask.json", clean_mask);

    for (int k = 0; k < cfg.motions_per_phantom; ++k) {
      auto const mdir = pdir / fmt::format("motion-{}", k);
      fs::create_directories(root / mdir);
      auto const tseed = trajectory_seed(cfg.seed, split, p, k);
      auto traj = random_trajectory(tseed, geom.pe_extent(), cfg.trajectory);
      traj.pe_label = geom.labels[std::size_t(geom.pe_axis)];
      auto corrupted = corrupt(clean, traj).image;
      round_to_f32(corrupted);
      auto const corrupted_mask = estimate_foreground(corrupted, cfg.foreground);
      auto const corrupted_record = normalize(corrupted, corrupted_mask).second;

      io::write_json(root / mdir / "trajectory.json", trajectory_to_json(traj));
      io::write_volume(root / mdir / "corrupted.json", corrupted);
      io::write_mask(root / mdir / "corrupted_mask.json", corrupted_mask);

      SampleEntry e;
      e.id = fmt::format("{}-m{}", pid, k);
      e.phantom_id = pid;
      e.motion_index = k;
      e.phantom_seed = pseed;
      e.trajectory_seed = tseed;
      e.phantom_spec = rel(pdir / "phantom.json");
      e.clean_volume = rel(pdir / "clean.json");
      e.clean_mask = rel(pdir / "clean_mask.json");
      e.trajectory = rel(mdir / "trajectory.json");
      e.corrupted_volume = rel(mdir / "corrupted.json");
      e.corrupted_mask = rel(mdir / "corrupted_mask.json");
      e.clean_record = clean_record;
      e.corrupted_record = corrupted_record;
      e.slices = slices;
      e.stats = trajectory_stats(traj);
      e.events = traj.event_count();
      m.entries.push_back(std::move(e));
    }
  }
  write_manifest(root / fmt::format("{}_manifest.json", split), m);
  return m;
}

} // namespace

DatasetPair build_dataset(fs::path const &root, DatasetConfig const &cfg) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError(fmt::format("cannot create dataset directory {}: {}", root.string(), ec.message()));
  DatasetPair out;
  out.train = build_split(root, cfg, "train", cfg.n_train);
  out.test = build_split(root, cfg, "test", cfg.n_test);
  return out;
}

void DatasetManifest::validate() const {
  split_code(split);
  config.validate();
  std::set<std::string> ids;
  for (auto const &e : entries) {
    if (!ids.insert(e.id).second) throw ValidationError(fmt::format("duplicate sample id {}", e.id));
    if (e.phantom_id.rfind(split + "-", 0) != 0) {
      throw ValidationError(fmt::format("sample {} belongs to phantom {} outside split {}", e.id, e.phantom_id, split));
    }
  }
}

nlohmann::json manifest_to_json(DatasetManifest const &m) {
  nlohmann::json entries = nlohmann::json::array();
  for (auto const &e : m.entries) {
    entries.push_back({{"id", e.id},
                       {"phantom_id", e.phantom_id},
                       {"motion_index", e.motion_index},
                       {"phantom_seed", e.phantom_seed},
                       {"trajectory_seed", e.trajectory_seed},
                       {"files",
                        {{"phantom_spec", e.phantom_spec},
                         {"clean_volume", e.clean_volume},
                         {"clean_mask", e.clean_mask},
                         {"trajectory", e.trajectory},
                         {"corrupted_volume", e.corrupted_volume},
                         {"corrupted_mask", e.corrupted_mask}}},
                       {"clean_record", record_to_json(e.clean_record)},
                       {"corrupted_record", record_to_json(e.corrupted_record)},
                       {"slices", e.slices},
                       {"events", e.events},
                       {"stats", stats_to_json(e.stats)}});
  }
  return {{"split", m.split},
          {"config", dataset_config_to_json(m.config)},
          {"sample_count", m.entries.size()},
          {"entries", entries}};
}

DatasetManifest manifest_from_json(nlohmann::json const &j, fs::path root) {
  try {
    DatasetManifest m;
    m.split = j.at("split").get<std::string>();
    m.root = std::move(root);
    m.config = dataset_config_from_json(j.at("config"));
    for (auto const &je : j.at("entries")) {
      SampleEntry e;
      e.id = je.at("id").get<std::string>();
      e.phantom_id = je.at("phantom_id").get<std::string>();
      e.motion_index = je.at("motion_index").get<int>();
      e.phantom_seed = je.at("phantom_seed").get<std::uint64_t>();
      e.trajectory_seed = je.at("trajectory_seed").get<std::uint64_t>();
      auto const &f = je.at("files");
      e.phantom_spec = f.at("phantom_spec").get<std::string>();
      e.clean_volume = f.at("clean_volume").get<std::string>();
      e.clean_mask = f.at("clean_mask").get<std::string>();
      e.trajectory = f.at("trajectory").get<std::string>();
      e.corrupted_volume = f.at("corrupted_volume").get<std::string>();
      e.corrupted_mask = f.at("corrupted_mask").get<std::string>();
      e.clean_record = record_from_json(je.at("clean_record"));
      e.corrupted_record = record_from_json(je.at("corrupted_record"));
      e.slices = je.at("slices").get<std::vector<int>>();
      e.events = je.at("events").get<int>();
      e.stats = stats_from_json(je.at("stats"));
      m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
  } catch (nlohmann::json::exception const &e) {
    throw ValidationError(fmt::format("malformed dataset manifest: {}", e.what()));
  }
}

void write_manifest(fs::path const &path, DatasetManifest const &m) { io::write_json(path, manifest_to_json(m)); }

DatasetManifest load_manifest(fs::path const &path) {
  io::require_exists(path);
  auto m = manifest_from_json(io::read_json(path), path.parent_path());
  auto const dims = m.config.dims;
  auto check_dims = [&](std::string const &file) {
    auto const p = m.root / file;
    io::require_exists(p);
    auto const g = io::geometry_from_json(io::read_json(p));
    if (g.dims != dims) {
      throw DimensionError(fmt::format("{} has dims {}x{}x{}, manifest records {}x{}x{}", p.string(), g.dims.nx,
                                       g.dims.ny, g.dims.nz, dims.nx, dims.ny, dims.nz));
    }
  };
  for (auto const &e : m.entries) {
    io::require_exists(m.root / e.phantom_spec);
    io::require_exists(m.root / e.trajectory);
    check_dims(e.clean_volume);
    check_dims(e.clean_mask);
    check_dims(e.corrupted_volume);
    check_dims(e.corrupted_mask);
    for (int s : e.slices) {
      if (s < 0 || s >= dims[m.config.slice_axis]) {
        throw ValidationError(fmt::format("sample {} lists slice {} outside the volume", e.id, s));
      }
    }
  }
  return m;
}

LoadedSample load_sample(DatasetManifest const &m, SampleEntry const &e) {
  LoadedSample s;
  s.clean = io::read_volume(m.root / e.clean_volume);
  s.corrupted = io::read_volume(m.root / e.corrupted_volume);
  s.clean_mask = io::read_mask(m.root / e.clean_mask);
  s.corrupted_mask = io::read_mask(m.root / e.corrupted_mask);
  // The target shares the input's affine map so that denormalizing with the
  // input record inverts it exactly.
  s.clean_normalized = apply_normalization(s.clean, e.corrupted_record, s.clean_mask);
  s.corrupted_normalized = apply_normalization(s.corrupted, e.corrupted_record, s.corrupted_mask);
  return s;
}

SlicePair slice_pair(LoadedSample const &s, int axis, int index) {
  return {extract_slice(s.corrupted_normalized, axis, index, "corrupted"),
          extract_slice(s.clean_normalized, axis, index, "clean"), extract_slice(s.corrupted_mask, axis, index),
          extract_slice(s.clean_mask, axis, index)};
}

nn::SliceDataset load_training_slices(DatasetManifest const &m) {
  nn::SliceDataset data;
  int const stride = m.config.train_slice_stride;
  for (auto const &e : m.entries) {
    auto const s = load_sample(m, e);
    for (std::size_t i = 0; i < e.slices.size(); i += std::size_t(stride)) {
      auto const pair = slice_pair(s, m.config.slice_axis, e.slices[i]);
      data.add(pair.input, pair.target);
    }
  }
  if (data.size() == 0) throw DegenerateInputError("training manifest yields no slices");
  return data;
}

nn::TrainResult run_training(DatasetManifest const &m, nn::NetworkConfig const &net_cfg,
                             nn::TrainConfig const &train_cfg, fs::path const &out_dir) {
  auto const data = load_training_slices(m);
  auto result = nn::train(data, net_cfg, train_cfg);
  fs::create_directories(out_dir);
  nn::save_weights(out_dir / "weights.json", result.params);
  std::string csv = "iteration,loss\n";
  for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
    csv += fmt::format("{},{}\n", i, format_number(result.loss_history[i]));
  }
  io::write_text(out_dir / "loss.csv", csv);
  return result;
}

metrics::MvgModel fit_pristine(DatasetManifest const &m, metrics::NiqeConfig const &cfg) {
  std::vector<Eigen::MatrixXd> parts;
  std::set<std::string> seen;
  for (auto const &e : m.entries) {
    if (!seen.insert(e.phantom_id).second) continue;
    auto const clean = io::read_volume(m.root / e.clean_volume);
    auto const mask = io::read_mask(m.root / e.clean_mask);
    auto const norm = apply_normalization(clean, e.clean_record, mask);
    for (int idx : e.slices) {
      auto const img = extract_slice(norm, m.config.slice_axis, idx, e.clean_volume);
      auto const msk = extract_slice(mask, m.config.slice_axis, idx);
      try {
        parts.push_back(metrics::niqe_features(img, cfg, {true, &msk}));
      } catch (DegenerateInputError const &) {
      }
    }
  }
  auto const features = metrics::stack_features(parts);
  return metrics::fit_mvg(features, fmt::format("{} split, {} phantoms", m.split, seen.size()));
}

std::vector<std::string> numeric_columns() {
  return {"mean_abs_translation_mm", "mean_abs_rotation_deg", "mean_center_distance", "pct_error_input",
          "pct_error_corrected",     "pct_error_input_volume", "pct_error_corrected_volume", "niqe_before",
          "niqe_after"};
}

std::vector<double> numeric_values(EvaluationRow const &r) {
  return {r.mean_abs_translation, r.mean_abs_rotation,  r.mean_center_distance,   r.error_input, r.error_corrected,
          r.error_input_volume,   r.error_corrected_volume, r.niqe_before, r.niqe_after};
}

Aggregate aggregate_rows(std::vector<EvaluationRow> const &rows) {
  std::size_t const k = numeric_columns().size();
  Aggregate a{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  if (rows.empty()) return a;
  double const n = double(rows.size());
  for (auto const &r : rows) {
    auto const v = numeric_values(r);
    for (std::size_t c = 0; c < k; ++c) a.mean[c] += v[c];
  }
  for (auto &x : a.mean) x /= n;
  if (rows.size() > 1) {
    for (auto const &r : rows) {
      auto const v = numeric_values(r);
      for (std::size_t c = 0; c < k; ++c) a.std[c] += (v[c] - a.mean[c]) * (v[c] - a.mean[c]);
    }
    for (auto &x : a.std) x = std::sqrt(x / (n - 1.0));
  }
  return a;
}

namespace {

EvaluationRow evaluate_sample(DatasetManifest const &m, SampleEntry const &e, nn::NetworkParameters const &net,
                              metrics::MvgModel const &pristine, metrics::NiqeConfig const &cfg,
                              fs::path const &image_dir) {
  int const axis = m.config.slice_axis;
  auto const s = load_sample(m, e);
  if (e.slices.empty()) throw DegenerateInputError(fmt::format("sample {} has no evaluable slices", e.id));

  EvaluationRow row;
  row.sample_id = e.id;
  row.phantom_id = e.phantom_id;
  row.motion_index = e.motion_index;
  row.events = e.events;
  row.slices = int(e.slices.size());
  row.mean_abs_translation = e.stats.mean_abs_translation;
  row.mean_abs_rotation = e.stats.mean_abs_rotation;
  row.mean_center_distance = e.stats.mean_center_distance;

  std::vector<Eigen::MatrixXd> before, after;
  std::vector<double> in_out, in_ref, cor_out, cor_ref;
  std::vector<std::uint8_t> pooled_mask;
  int const middle = e.slices[e.slices.size() / 2];
  for (int idx : e.slices) {
    auto const pair = slice_pair(s, axis, idx);
    auto corrected = nn::correct(net, pair.input);
    mask_image(corrected, pair.input_mask);
    auto const restored = denormalize(corrected, e.corrupted_record, pair.input_mask);
    auto const clean = extract_slice(s.clean, axis, idx, e.clean_volume);
    auto const corrupted = extract_slice(s.corrupted, axis, idx, e.corrupted_volume);

    row.error_input += metrics::percentage_error(corrupted, clean, pair.target_mask);
    row.error_corrected += metrics::percentage_error(restored, clean, pair.target_mask);
    in_out.insert(in_out.end(), corrupted.data.begin(), corrupted.data.end());
    cor_out.insert(cor_out.end(), restored.data.begin(), restored.data.end());
    in_ref.insert(in_ref.end(), clean.data.begin(), clean.data.end());
    pooled_mask.insert(pooled_mask.end(), pair.target_mask.data.begin(), pair.target_mask.data.end());

    try {
      auto b = metrics::niqe_features(pair.input, cfg, {false, &pair.input_mask});
      auto a = metrics::niqe_features(corrected, cfg, {false, &pair.input_mask});
      before.push_back(std::move(b));
      after.push_back(std::move(a));
    } catch (DegenerateInputError const &) {
    }

    if (idx == middle) {
      auto const stem = fmt::format("{}_slice{}", e.id, idx);
      io::write_pgm16(image_dir / (stem + "_clean.pgm"), clean);
      io::write_pgm16(image_dir / (stem + "_corrupted.pgm"), corrupted);
      io::write_pgm16(image_dir / (stem + "_corrected.pgm"), restored);
      io::write_pgm16(image_dir / (stem + "_error_corrupted.pgm"), abs_difference(corrupted, clean));
      io::write_pgm16(image_dir / (stem + "_error_corrected.pgm"), abs_difference(restored, clean));
    }
  }
  row.error_input /= double(e.slices.size());
  row.error_corrected /= double(e.slices.size());
  row.error_input_volume = metrics::percentage_error(in_out, in_ref, pooled_mask);
  row.error_corrected_volume = metrics::percentage_error(cor_out, in_ref, pooled_mask);
  row.niqe_before = metrics::niqe_score(metrics::fit_mvg(metrics::stack_features(before)), pristine);
  row.niqe_after = metrics::niqe_score(metrics::fit_mvg(metrics::stack_features(after)), pristine);
  row.flagged = e.events == 0 && row.error_corrected >= 0.5;
  return row;
}

} // namespace

EvaluationReport run_evaluation(DatasetManifest const &m, nn::NetworkParameters const &net,
                                metrics::MvgModel const &pristine, metrics::NiqeConfig const &cfg,
                                fs::path const &out_dir) {
  if (pristine.mean.size() != cfg.feature_length()) {
    throw DimensionError(fmt::format("pristine model has {} features, NIQE config expects {}", pristine.mean.size(),
                                     cfg.feature_length()));
  }
  auto const image_dir = out_dir / "images";
  fs::create_directories(image_dir);

  EvaluationReport report;
  for (auto const &e : m.entries) {
    try {
      report.rows.push_back(evaluate_sample(m, e, net, pristine, cfg, image_dir));
    } catch (ValidationError const &err) {
      report.failures.push_back({e.id, err.what()});
    } catch (NumericalError const &err) {
      report.failures.push_back({e.id, err.what()});
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](auto const &a, auto const &b) {
    return a.mean_center_distance < b.mean_center_distance;
  });
  report.aggregate = aggregate_rows(report.rows);
  if (!report.rows.empty()) {
    std::vector<double> b, a;
    for (auto const &r : report.rows) {
      b.push_back(r.niqe_before);
      a.push_back(r.niqe_after);
    }
    report.niqe = metrics::aggregate_improvement(b, a);
  }

  io::write_text(out_dir / "report.csv", report_csv(report));
  io::write_text(out_dir / "niqe_scores.csv", niqe_csv(report));
  nlohmann::json failures = nlohmann::json::array();
  for (auto const &f : report.failures) failures.push_back({{"sample_id", f.sample_id}, {"message", f.message}});
  io::write_json(out_dir / "failures.json", failures);
  return report;
}

std::string report_csv(EvaluationReport const &r) {
  std::string out = "sample_id,phantom_id,motion_index,events,slices,flagged";
  for (auto const &c : numeric_columns()) out += "," + c;
  out += "\n";
  for (auto const &row : r.rows) {
    out += fmt::format("{},{},{},{},{},{}", row.sample_id, row.phantom_id, row.motion_index, row.events, row.slices,
                       row.flagged ? 1 : 0);
    for (double v : numeric_values(row)) out += "," + format_number(v);
    out += "\n";
  }
  auto aggregate_line = [&](std::string const &name, std::vector<double> const &values) {
    out += name + ",,,,,";
    for (double v : values) out += "," + format_number(v);
    out += "\n";
  };
  aggregate_line("mean", r.aggregate.mean);
  aggregate_line("std", r.aggregate.std);
  return out;
}

std::string niqe_csv(EvaluationReport const &r) {
  std::string out = "sample_id,niqe_before,niqe_after,percent_improvement\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    out += fmt::format("{},{},{},{}\n", r.rows[i].sample_id, format_number(r.rows[i].niqe_before),
                       format_number(r.rows[i].niqe_after), format_number(r.niqe.percent_improvement[i]));
  }
  if (!r.rows.empty()) {
    out += fmt::format("mean,{},{},{}\n", format_number(r.niqe.mean_before), format_number(r.niqe.mean_after),
                       format_number(r.niqe.mean_percent_improvement));
  }
  return out;
}

Volume correct_volume(nn::NetworkParameters const &net, Volume const &v, ForegroundConfig const &fg, int axis,
                      double min_slice_foreground) {
  validate(v);
  auto const mask = estimate_foreground(v, fg);
  auto [norm, record] = normalize(v, mask);
  for (int idx = 0; idx < v.geom.dims[axis]; ++idx) {
    if (slice_foreground_fraction(mask, axis, idx) < min_slice_foreground) continue;
    auto const m2 = extract_slice(mask, axis, idx);
    auto out = nn::correct(net, extract_slice(norm, axis, idx));
    mask_image(out, m2);
    insert_slice(norm, out, axis, idx);
  }
  return denormalize(norm, record, mask);
}

double spearman(std::span<double const> a, std::span<double const> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DimensionError(fmt::format("rank correlation needs two equal-length series of at least 2, got {} and {}",
                                     a.size(), b.size()));
  }
  auto ranks = [](std::span<double const> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
      double const avg = 0.5 * double(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto const ra = ranks(a), rb = ranks(b);
  double const n = double(a.size());
  double const ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  double const mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("rank correlation of a constant series");
  return sab / std::sqrt(saa * sbb);
}

std::string format_number(double x) { return fmt::format("{}", x); }

} // namespace moco::pipeline
