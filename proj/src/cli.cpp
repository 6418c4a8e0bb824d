#include "moco/cli.hpp"

#include "moco/io.hpp"
#include "moco/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>

#ifndef MOCO_VERSION
#define MOCO_VERSION "0.0.0"
#endif

namespace moco::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir;
};

void add_common(CLI::App *cmd, Common &c, bool needs_out_dir = true) {
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--config", c.config, "JSON config file (command-line flags take precedence)");
  auto *o = cmd->add_option("--out-dir", c.out_dir, "Output directory");
  if (needs_out_dir) o->required();
}

json load_config(Common const &c) {
  if (c.config.empty()) return json::object();
  auto j = io::read_json(c.config);
  if (!j.is_object()) throw ValidationError(fmt::format("config {} is not a JSON object", c.config));
  return j;
}

json section(json const &cfg, char const *name) { return cfg.contains(name) ? cfg.at(name) : json::object(); }

std::uint64_t resolve_seed(Common const &c, json const &cfg, char const *command) {
  if (c.seed) return *c.seed;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  throw UsageError(fmt::format("{}: --seed (or a \"seed\" entry in --config) is required", command));
}

fs::path prepare_out_dir(Common const &c) {
  fs::path out(c.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", out.string(), ec.message()));
  return out;
}

void refuse_overwrite(fs::path const &input, fs::path const &output) {
  std::error_code ec;
  if (fs::exists(output) && fs::equivalent(input, output, ec)) {
    throw ValidationError(fmt::format("output {} would overwrite input {}", output.string(), input.string()));
  }
}

void write_run_manifest(fs::path const &out, std::vector<std::string> const &args, std::string const &command,
                        std::optional<std::uint64_t> seed, json resolved, json inputs, json outputs) {
  json j{{"tool", "moco"},
         {"version", MOCO_VERSION},
         {"command", command},
         {"argv", args},
         {"config", std::move(resolved)},
         {"inputs", std::move(inputs)},
         {"outputs", std::move(outputs)}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  io::write_json(out / "run_manifest.json", j);
}

template <class T> void override_if(CLI::Option const *opt, T &target, T const &value) {
  if (opt->count()) target = value;
}

} // namespace

int dispatch(std::vector<std::string> const &args) {
  CLI::App app{"Retrospective motion correction of synthetic MR volumes"};
  app.name(args.empty() ? "moco" : fs::path(args[0]).filename().string());
  app.set_version_flag("--version", MOCO_VERSION);
  app.require_subcommand(1);

  // phantom
  Common phantom_c;
  std::vector<int> phantom_dims;
  std::vector<double> phantom_spacing;
  bool phantom_mirror = false;
  auto *phantom = app.add_subcommand("phantom", "Generate a synthetic head phantom volume");
  add_common(phantom, phantom_c);
  auto *phantom_dims_opt = phantom->add_option("--dims", phantom_dims, "nx ny nz")->expected(3);
  auto *phantom_spacing_opt = phantom->add_option("--spacing", phantom_spacing, "Voxel spacing in mm")->expected(3);
  phantom->add_flag("--mirror", phantom_mirror, "Mirror the phantom across the x mid-plane");

  // corrupt
  Common corrupt_c;
  std::string corrupt_input, corrupt_traj;
  double corrupt_max_t = 0.0, corrupt_max_r = 0.0;
  auto *corrupt_cmd = app.add_subcommand("corrupt", "Apply a motion trajectory (given or generated) to a volume");
  add_common(corrupt_cmd, corrupt_c);
  corrupt_cmd->add_option("--input", corrupt_input, "Volume header (.json)")->required();
  corrupt_cmd->add_option("--trajectory", corrupt_traj, "Trajectory JSON; generated from --seed when omitted");
  auto *max_t_opt = corrupt_cmd->add_option("--max-translation", corrupt_max_t, "Translation bound in mm");
  auto *max_r_opt = corrupt_cmd->add_option("--max-rotation", corrupt_max_r, "Rotation bound in degrees");

  // dataset
  Common dataset_c;
  int ds_train = 0, ds_test = 0, ds_motions = 0, ds_stride = 0;
  std::vector<int> ds_dims;
  auto *dataset = app.add_subcommand("dataset", "Build train and test corpora");
  add_common(dataset, dataset_c);
  auto *ds_train_opt = dataset->add_option("--n-train", ds_train, "Training phantoms");
  auto *ds_test_opt = dataset->add_option("--n-test", ds_test, "Test phantoms");
  auto *ds_motions_opt = dataset->add_option("--motions", ds_motions, "Motions per phantom");
  auto *ds_dims_opt = dataset->add_option("--dims", ds_dims, "nx ny nz")->expected(3);
  auto *ds_stride_opt = dataset->add_option("--train-slice-stride", ds_stride, "Use every k-th training slice");

  // train
  Common train_c;
  std::string train_manifest;
  int tr_iters = 0, tr_batch = 0, tr_levels = 0;
  double tr_lr = 0.0;
  std::vector<int> tr_channels;
  auto *train_cmd = app.add_subcommand("train", "Train the correction network on a training manifest");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--manifest", train_manifest, "train_manifest.json")->required();
  auto *tr_iters_opt = train_cmd->add_option("--iterations", tr_iters, "Optimizer steps");
  auto *tr_batch_opt = train_cmd->add_option("--batch-size", tr_batch, "Mini-batch size");
  auto *tr_lr_opt = train_cmd->add_option("--learning-rate", tr_lr, "Initial learning rate");
  auto *tr_levels_opt = train_cmd->add_option("--levels", tr_levels, "Encoder depth");
  auto *tr_channels_opt = train_cmd->add_option("--channels", tr_channels, "Channel width per level");
  bool tr_residual = false;
  auto *tr_residual_opt = train_cmd->add_flag("--residual", tr_residual, "Add the input to the network output");

  // correct
  Common correct_c;
  std::string correct_weights, correct_input;
  int correct_axis = 1, correct_slice = -1;
  auto *correct_cmd = app.add_subcommand("correct", "Apply trained weights to a volume");
  add_common(correct_cmd, correct_c);
  correct_cmd->add_option("--weights", correct_weights, "weights.json")->required();
  correct_cmd->add_option("--input", correct_input, "Volume header (.json)")->required();
  correct_cmd->add_option("--axis", correct_axis, "Slice axis (0 or 1)");
  correct_cmd->add_option("--slice", correct_slice, "Also export this corrected slice as PGM");

  // niqe-fit
  Common niqe_c;
  std::string niqe_manifest;
  auto *niqe_cmd = app.add_subcommand("niqe-fit", "Fit the pristine NIQE model on clean training slices");
  add_common(niqe_cmd, niqe_c);
  niqe_cmd->add_option("--manifest", niqe_manifest, "train_manifest.json")->required();

  // eval
  Common eval_c;
  std::string eval_manifest, eval_weights, eval_model;
  auto *eval_cmd = app.add_subcommand("eval", "Evaluate trained weights on a test manifest");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--manifest", eval_manifest, "test_manifest.json")->required();
  eval_cmd->add_option("--weights", eval_weights, "weights.json")->required();
  eval_cmd->add_option("--model", eval_model, "Pristine NIQE model (.json)")->required();

  std::vector<char const *> argv;
  for (auto const &a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (CLI::CallForHelp const &e) {
    return app.exit(e);
  } catch (CLI::CallForAllHelp const &e) {
    return app.exit(e);
  } catch (CLI::CallForVersion const &e) {
    return app.exit(e);
  } catch (CLI::ParseError const &e) {
    std::cerr << app.get_name() << ": " << e.what() << "\n";
    std::cerr << "commands: phantom, corrupt, dataset, train, correct, niqe-fit, eval (use --help for details)\n";
    return kUsage;
  }

  try {
    if (phantom->parsed()) {
      auto const cfg = load_config(phantom_c);
      auto const seed = resolve_seed(phantom_c, cfg, "phantom");
      auto ds = pipeline::dataset_config_from_json(section(cfg, "dataset"));
      if (phantom_dims_opt->count()) ds.dims = {phantom_dims[0], phantom_dims[1], phantom_dims[2]};
      if (phantom_spacing_opt->count()) ds.spacing = {phantom_spacing[0], phantom_spacing[1], phantom_spacing[2]};
      make_geometry(ds.dims, ds.spacing).validate();
      auto const out = prepare_out_dir(phantom_c);
      auto spec = random_phantom_spec(seed, ds.phantom);
      if (phantom_mirror) spec = mirror_x(spec);
      auto const vol = generate_phantom(spec, ds.dims, ds.spacing);
      io::write_json(out / "phantom.json", phantom_to_json(spec));
      io::write_volume(out / "volume.json", vol);
      io::write_mask(out / "mask.json", estimate_foreground(vol, ds.foreground));
      write_run_manifest(out, args, "phantom", seed,
                         {{"dataset", pipeline::dataset_config_to_json(ds)}, {"mirror", phantom_mirror}},
                         json::object(), {"phantom.json", "volume.json", "mask.json"});
      return kOk;
    }
    if (corrupt_cmd->parsed()) {
      auto const cfg = load_config(corrupt_c);
      auto ds = pipeline::dataset_config_from_json(section(cfg, "dataset"));
      override_if(max_t_opt, ds.trajectory.bounds.translation_mm, corrupt_max_t);
      override_if(max_r_opt, ds.trajectory.bounds.rotation_deg, corrupt_max_r);
      io::require_exists(corrupt_input);
      auto const vol = io::read_volume(corrupt_input);
      std::optional<std::uint64_t> seed;
      MotionTrajectory traj;
      if (!corrupt_traj.empty()) {
        io::require_exists(corrupt_traj);
        traj = trajectory_from_json(io::read_json(corrupt_traj));
        if (corrupt_c.seed || cfg.contains("seed")) seed = resolve_seed(corrupt_c, cfg, "corrupt");
      } else {
        seed = resolve_seed(corrupt_c, cfg, "corrupt");
        traj = random_trajectory(*seed, vol.geom.pe_extent(), ds.trajectory);
        traj.pe_label = vol.geom.labels[std::size_t(vol.geom.pe_axis)];
      }
      if (traj.n_pe != vol.geom.pe_extent()) {
        throw DimensionError(fmt::format("trajectory covers {} phase-encode lines, volume has {}", traj.n_pe,
                                         vol.geom.pe_extent()));
      }
      auto const out = prepare_out_dir(corrupt_c);
      refuse_overwrite(corrupt_input, out / "corrupted.json");
      auto const result = corrupt(vol, traj);
      io::write_volume(out / "corrupted.json", result.image);
      io::write_json(out / "trajectory.json", trajectory_to_json(traj));
      write_run_manifest(out, args, "corrupt", seed,
                         {{"motion_bounds",
                           {{"translation_mm", ds.trajectory.bounds.translation_mm},
                            {"rotation_deg", ds.trajectory.bounds.rotation_deg}}}},
                         {{"input", corrupt_input}, {"trajectory", corrupt_traj}},
                         {"corrupted.json", "trajectory.json"});
      return kOk;
    }
    if (dataset->parsed()) {
      auto const cfg = load_config(dataset_c);
      auto ds = pipeline::dataset_config_from_json(section(cfg, "dataset"));
      ds.seed = resolve_seed(dataset_c, cfg, "dataset");
      override_if(ds_train_opt, ds.n_train, ds_train);
      override_if(ds_test_opt, ds.n_test, ds_test);
      override_if(ds_motions_opt, ds.motions_per_phantom, ds_motions);
      override_if(ds_stride_opt, ds.train_slice_stride, ds_stride);
      if (ds_dims_opt->count()) ds.dims = {ds_dims[0], ds_dims[1], ds_dims[2]};
      auto const out = prepare_out_dir(dataset_c);
      auto const pair = pipeline::build_dataset(out, ds);
      write_run_manifest(out, args, "dataset", ds.seed, {{"dataset", pipeline::dataset_config_to_json(ds)}},
                         json::object(), {"train_manifest.json", "test_manifest.json"});
      std::cout << fmt::format("train samples: {}, test samples: {}\n", pair.train.entries.size(),
                               pair.test.entries.size());
      return kOk;
    }
    if (train_cmd->parsed()) {
      auto const cfg = load_config(train_c);
      auto tc = nn::train_config_from_json(section(cfg, "train"));
      tc.seed = resolve_seed(train_c, cfg, "train");
      override_if(tr_iters_opt, tc.iterations, tr_iters);
      override_if(tr_batch_opt, tc.batch_size, tr_batch);
      override_if(tr_lr_opt, tc.learning_rate, tr_lr);
      auto nc = nn::config_from_json(section(cfg, "network"));
      override_if(tr_levels_opt, nc.levels, tr_levels);
      override_if(tr_channels_opt, nc.channels, tr_channels);
      override_if(tr_residual_opt, nc.residual_output, tr_residual);
      nc.validate();
      tc.validate();
      auto const manifest = pipeline::load_manifest(train_manifest);
      auto const out = prepare_out_dir(train_c);
      auto const result = pipeline::run_training(manifest, nc, tc, out);
      write_run_manifest(out, args, "train", tc.seed,
                         {{"network", nn::config_to_json(nc)}, {"train", nn::train_config_to_json(tc)}},
                         {{"manifest", train_manifest}}, {"weights.json", "weights.bin", "loss.csv"});
      std::cout << fmt::format("loss: first {} last {}\n", pipeline::format_number(result.loss_history.front()),
                               pipeline::format_number(result.loss_history.back()));
      return kOk;
    }
    if (correct_cmd->parsed()) {
      auto const cfg = load_config(correct_c);
      auto ds = pipeline::dataset_config_from_json(section(cfg, "dataset"));
      io::require_exists(correct_weights);
      io::require_exists(correct_input);
      auto const net = nn::load_weights(correct_weights);
      auto const vol = io::read_volume(correct_input);
      if (correct_axis < 0 || correct_axis > 2 || correct_axis == vol.geom.pe_axis) {
        throw ValidationError(fmt::format("slice axis {} must differ from the phase-encode axis", correct_axis));
      }
      auto const out = prepare_out_dir(correct_c);
      refuse_overwrite(correct_input, out / "corrected.json");
      auto const corrected =
          pipeline::correct_volume(net, vol, ds.foreground, correct_axis, ds.min_slice_foreground);
      io::write_volume(out / "corrected.json", corrected);
      json outputs{"corrected.json"};
      if (correct_slice >= 0) {
        if (correct_slice >= vol.geom.dims[correct_axis]) {
          throw ValidationError(fmt::format("slice {} is outside the volume", correct_slice));
        }
        auto const name = fmt::format("corrected_slice{}.pgm", correct_slice);
        io::write_pgm16(out / name, extract_slice(corrected, correct_axis, correct_slice));
        outputs.push_back(name);
      }
      write_run_manifest(out, args, "correct", std::nullopt,
                         {{"foreground", foreground_config_to_json(ds.foreground)},
                          {"axis", correct_axis},
                          {"min_slice_foreground", ds.min_slice_foreground},
                          {"network", nn::config_to_json(net.config)}},
                         {{"weights", correct_weights}, {"input", correct_input}}, outputs);
      return kOk;
    }
    if (niqe_cmd->parsed()) {
      auto const cfg = load_config(niqe_c);
      auto const nc = metrics::niqe_config_from_json(section(cfg, "niqe"));
      auto const manifest = pipeline::load_manifest(niqe_manifest);
      auto const out = prepare_out_dir(niqe_c);
      auto const model = pipeline::fit_pristine(manifest, nc);
      metrics::save_model(out / "pristine.json", model, nc);
      write_run_manifest(out, args, "niqe-fit", std::nullopt, {{"niqe", metrics::niqe_config_to_json(nc)}},
                         {{"manifest", niqe_manifest}}, {"pristine.json", "pristine.bin"});
      return kOk;
    }
    if (eval_cmd->parsed()) {
      auto const cfg = load_config(eval_c);
      auto const manifest = pipeline::load_manifest(eval_manifest);
      io::require_exists(eval_weights);
      io::require_exists(eval_model);
      auto const net = nn::load_weights(eval_weights);
      metrics::NiqeConfig nc;
      auto const model = metrics::load_model(eval_model, &nc);
      auto const out = prepare_out_dir(eval_c);
      auto const report = pipeline::run_evaluation(manifest, net, model, nc, out);
      write_run_manifest(out, args, "eval", std::nullopt, {{"niqe", metrics::niqe_config_to_json(nc)}},
                         {{"manifest", eval_manifest}, {"weights", eval_weights}, {"model", eval_model}},
                         {"report.csv", "niqe_scores.csv", "failures.json", "images/"});
      std::cout << pipeline::report_csv(report);
      if (!report.failures.empty()) {
        std::cerr << fmt::format("{} sample(s) failed; see failures.json\n", report.failures.size());
        return kDataError;
      }
      return kOk;
    }
  } catch (UsageError const &e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (NumericalError const &e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (ValidationError const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  } catch (nlohmann::json::exception const &e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kDataError;
  } catch (fs::filesystem_error const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

int dispatch(int argc, char **argv) { return dispatch(std::vector<std::string>(argv, argv + argc)); }

} // namespace moco::cli
