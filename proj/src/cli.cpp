#include "cnnmap/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "cnnmap/dataset.hpp"
#include "cnnmap/errors.hpp"
#include "cnnmap/filters.hpp"
#include "cnnmap/kernels.hpp"
#include "cnnmap/map_io.hpp"
#include "cnnmap/model.hpp"
#include "cnnmap/synth.hpp"
#include "cnnmap/train.hpp"

namespace cnnmap {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kInputKinds = {"gray", "rgb", "depth", "pointcloud", "rgbd", "rgbpc"};

// Turns "--config FILE" (anywhere after the subcommand) into injected
// "--key=value" arguments placed before the explicit ones, so explicit
// flags win under the take-last policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> config;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config requires a file argument");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) return rest;

  std::ifstream in(*config);
  if (!in) throw IoError("cannot open config file '" + *config + "'");
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(*config + ":" + std::to_string(line_no) + ": expected key=value", line_no,
                       ParseError::Unit::line);
    }
    auto strip = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    injected.push_back("--" + strip(line.substr(0, eq)) + "=" + strip(line.substr(eq + 1)));
  }
  if (rest.empty()) return injected;
  std::vector<std::string> out{rest.front()};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

void print_config(std::ostream& out, const CLI::App& sub) {
  out << "# " << sub.get_name() << " configuration\n" << sub.config_to_str(true, false);
  out << "kernels=" << kernels::isa_name(kernels::active().isa) << "\n";
  out.flush();
}

std::vector<Sequence> load_dataset(const std::string& kind, const std::string& path) {
  const fs::path p(path);
  if (!fs::exists(p)) throw DatasetLayoutError("no such dataset path: '" + path + "'");
  if (kind == "tum") return {load_tum_sequence(p)};
  if (kind == "7scenes") return {load_7scenes_sequence(p)};
  if (kind == "manifest") return {load_manifest_sequence(p)};
  if (kind == "dir") {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_directory() && e.path().filename().string().rfind("seq-", 0) == 0) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw DatasetLayoutError("no seq-* folders in '" + path + "'");
    std::vector<Sequence> seqs;
    for (const auto& d : dirs) seqs.push_back(load_7scenes_sequence(d));
    return seqs;
  }
  return {load_sequence_auto(p)};
}

struct TrainFlags {
  std::vector<std::string> data;
  std::string dataset = "auto";
  std::string val;
  std::string input = "rgb";
  std::string scale = "reduced";
  std::size_t epochs = 100;
  std::size_t batch = 16;
  double beta = 250.0;
  double lr = 1e-4;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  bool deterministic = false;
  bool no_shuffle = false;
  float dropout_keep = 1.0f;
  std::size_t threads = 1;
  std::string init = "he";
  double sigma = 0.01;
  std::string init_from;
  std::string out;
  std::string log;
};

void add_optimizer_flags(CLI::App* sub, std::size_t& epochs, std::size_t& batch, double& beta, double& lr,
                         double& momentum) {
  sub->add_option("--epochs", epochs, "training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--batch", batch, "minibatch size")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--beta", beta, "orientation weight in the loss")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--lr", lr, "learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--momentum", momentum, "SGD momentum")->capture_default_str()->check(CLI::Range(0.0, 0.999999));
}

TrainConfig make_train_config(std::size_t epochs, std::size_t batch, double beta, double lr, double momentum,
                              std::uint64_t seed, bool deterministic, bool shuffle, std::size_t threads) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.loss.beta = beta;
  cfg.learning_rate = lr;
  cfg.momentum = momentum;
  cfg.seed = seed;
  cfg.deterministic = deterministic;
  cfg.shuffle = shuffle;
  cfg.threads = threads;
  return cfg;
}

int run_train(const TrainFlags& f, const CLI::App& sub, std::ostream& out) {
  print_config(out, sub);
  Model model = build_cnnf(InputSpec::parse(f.input), parse_scale(f.scale), f.dropout_keep);
  if (f.init == "blob") {
    if (f.init_from.empty()) throw UsageError("--init blob requires --init-from MAP");
    const Model blob = load_map(f.init_from, model.input_spec);
    init_weights(model, BlobInit{&blob}, f.seed);
  } else if (f.init == "gaussian") {
    init_weights(model, GaussianInit{f.sigma}, f.seed);
  } else {
    init_weights(model, HeInit{}, f.seed);
  }

  std::vector<Sequence> train_seqs;
  for (const auto& path : f.data) {
    auto seqs = load_dataset(f.dataset, path);
    for (auto& s : seqs) train_seqs.push_back(std::move(s));
  }
  std::optional<Sequence> val;
  if (!f.val.empty()) val = load_dataset("auto", f.val).front();

  out << "model " << model.meta.architecture << " n=" << model.input_channels() << " params=" << param_count(model)
      << " frames=";
  std::size_t frames = 0;
  for (const auto& s : train_seqs) frames += s.frames.size();
  out << frames << "\n";

  TrainConfig cfg = make_train_config(f.epochs, f.batch, f.beta, f.lr, f.momentum, f.seed, f.deterministic,
                                      !f.no_shuffle, f.threads);
  cfg.on_epoch = [&out](const EpochLog& e, const Model&) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu train_loss %.6g val_pos_err_m %.6g\n", e.epoch, e.train_loss,
                  e.val_pos_err_m);
    out << line << std::flush;
  };
  check_modalities(model, train_seqs);
  const TrainResult result = train(model, train_seqs, val ? &*val : nullptr, cfg);
  save_map(result.model, f.out);
  out << "wrote " << f.out << " (" << map_byte_size(result.model) << " bytes)\n";
  if (!f.log.empty()) {
    write_log_csv(result.log, f.log);
    out << "wrote " << f.log << "\n";
  }
  return kExitOk;
}

void print_report(std::ostream& out, const EvalReport& r) {
  char line[256];
  std::snprintf(line, sizeof line,
                "frames %zu  position mean %.6g m std %.6g median %.6g  angle mean %.6g deg std %.6g median %.6g\n",
                r.frame_count, r.position.mean, r.position.std, r.position.median, r.angle.mean, r.angle.std,
                r.angle.median);
  out << line;
}

}  // namespace

int run_command(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual map as a fixed-size CNN pose regressor", "cnnmap"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic multi-trajectory dataset (7-Scenes layout)");
  std::string synth_out;
  std::uint64_t synth_seed = 7;
  std::size_t synth_points = 20000, synth_traj = 6, synth_frames = 60, synth_size = 64;
  double synth_extent = 3.4641016151377544, synth_radius = 3.0, synth_rspread = 0.5, synth_hspread = 0.5;
  std::string synth_kind = "circle";
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "scene seed")->capture_default_str();
  synth->add_option("--points", synth_points, "scene point count")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--extent", synth_extent, "scene bounding-box diagonal (m)")->capture_default_str();
  synth->add_option("--trajectories", synth_traj, "trajectory count")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames, "frames per trajectory")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--radius", synth_radius, "mean ring radius (m)")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--radius-spread", synth_rspread, "radius spread across rings (m)")->capture_default_str();
  synth->add_option("--height-spread", synth_hspread, "height spread across rings (m)")->capture_default_str();
  synth->add_option("--size", synth_size, "image side (px)")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--kind", synth_kind, "trajectory kind")
      ->capture_default_str()
      ->check(CLI::IsMember({"circle", "arc", "random-walk"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "train a map on one or more sequences");
  TrainFlags tf;
  train_cmd->add_option("--data", tf.data, "dataset path(s)")->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  train_cmd->add_option("--dataset", tf.dataset, "dataset layout")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "tum", "7scenes", "manifest", "dir"}));
  train_cmd->add_option("--val", tf.val, "validation sequence");
  train_cmd->add_option("--input", tf.input, "input channels")->capture_default_str()->check(CLI::IsMember(kInputKinds));
  train_cmd->add_option("--scale", tf.scale, "network scale")->capture_default_str()->check(CLI::IsMember({"full", "reduced"}));
  add_optimizer_flags(train_cmd, tf.epochs, tf.batch, tf.beta, tf.lr, tf.momentum);
  train_cmd->add_option("--seed", tf.seed, "initialization / shuffling seed")->capture_default_str();
  train_cmd->add_flag("--deterministic", tf.deterministic, "fixed gradient reduction order");
  train_cmd->add_flag("--no-shuffle", tf.no_shuffle, "keep frame order");
  train_cmd->add_option("--dropout-keep", tf.dropout_keep, "dropout keep probability (1 = off)")
      ->capture_default_str()
      ->check(CLI::Range(1e-6, 1.0));
  train_cmd->add_option("--threads", tf.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--init", tf.init, "weight initialization")
      ->capture_default_str()
      ->check(CLI::IsMember({"he", "gaussian", "blob"}));
  train_cmd->add_option("--sigma", tf.sigma, "gaussian init standard deviation")->capture_default_str();
  train_cmd->add_option("--init-from", tf.init_from, "map file for --init blob");
  train_cmd->add_option("--out", tf.out, "output map file")->required();
  train_cmd->add_option("--log", tf.log, "learning log CSV");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a map on a sequence");
  std::string eval_map, eval_seq, eval_dataset = "auto", eval_input, eval_report, eval_traj;
  eval_cmd->add_option("--map", eval_map, "map file")->required();
  eval_cmd->add_option("--sequence", eval_seq, "test sequence path")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "dataset layout")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "tum", "7scenes", "manifest"}));
  eval_cmd->add_option("--input", eval_input, "input kind when n is ambiguous")->check(CLI::IsMember(kInputKinds));
  eval_cmd->add_option("--report", eval_report, "per-frame error CSV");
  eval_cmd->add_option("--trajectory", eval_traj, "ground-truth vs predicted positions CSV");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "incremental multi-trajectory experiment");
  std::string exp_dir, exp_out, exp_input = "rgb", exp_scale = "reduced";
  std::size_t exp_test = 1, exp_epochs = 100, exp_batch = 16, exp_threads = 1;
  double exp_beta = 250.0, exp_lr = 1e-4, exp_momentum = 0.9;
  std::vector<std::uint64_t> exp_seeds{1};
  exp_cmd->add_option("--scene-dir", exp_dir, "dataset root with seq-NN folders")->required();
  exp_cmd->add_option("--test-seq", exp_test, "1-based sequence held out for testing")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_optimizer_flags(exp_cmd, exp_epochs, exp_batch, exp_beta, exp_lr, exp_momentum);
  exp_cmd->add_option("--seeds", exp_seeds, "comma-separated seeds")
      ->capture_default_str()
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  exp_cmd->add_option("--input", exp_input, "input channels")->capture_default_str()->check(CLI::IsMember(kInputKinds));
  exp_cmd->add_option("--scale", exp_scale, "network scale")->capture_default_str()->check(CLI::IsMember({"full", "reduced"}));
  exp_cmd->add_option("--threads", exp_threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  exp_cmd->add_option("--out", exp_out, "series CSV (one file per seed when several)")->required();

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "print a map's architecture and size");
  std::string inspect_map, inspect_filters, inspect_input;
  inspect_cmd->add_option("--map", inspect_map, "map file")->required();
  inspect_cmd->add_option("--input", inspect_input, "input kind when n is ambiguous")->check(CLI::IsMember(kInputKinds));
  inspect_cmd->add_option("--export-filters", inspect_filters, "write first-layer filters as PNG");

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      if (code != 0) err << app.help() << std::flush;
      return code == 0 ? kExitOk : kExitUsage;
    }

    if (synth->parsed()) {
      print_config(out, *synth);
      const Scene scene = generate_scene(synth_seed, synth_points, synth_extent);
      RingLayout layout{synth_traj, synth_frames, synth_radius, synth_rspread, synth_hspread};
      std::vector<std::vector<Pose>> trajectories;
      for (auto spec : ring_layout(layout)) {
        spec.seed = synth_seed * 1000 + trajectories.size();
        if (synth_kind == "arc") {
          spec.kind = TrajectoryKind::arc;
          spec.sweep = std::numbers::pi;
        } else if (synth_kind == "random-walk") {
          spec.kind = TrajectoryKind::random_walk;
        }
        trajectories.push_back(generate_trajectory(spec));
      }
      const Intrinsics k{70.0 * static_cast<double>(synth_size) / 64.0, 70.0 * static_cast<double>(synth_size) / 64.0,
                         static_cast<double>(synth_size) / 2.0, static_cast<double>(synth_size) / 2.0};
      write_dataset(scene, trajectories, k, synth_size, synth_out);
      out << "wrote " << trajectories.size() << " trajectories to " << synth_out << "\n";
      return kExitOk;
    }

    if (train_cmd->parsed()) return run_train(tf, *train_cmd, out);

    if (eval_cmd->parsed()) {
      print_config(out, *eval_cmd);
      std::optional<InputSpec> spec;
      if (!eval_input.empty()) spec = InputSpec::parse(eval_input);
      const Model model = load_map(eval_map, spec);
      const Sequence seq = load_dataset(eval_dataset, eval_seq).front();
      const EvalReport report = evaluate(model, seq);
      print_report(out, report);
      if (!eval_report.empty()) write_report_csv(report, eval_report);
      if (!eval_traj.empty()) write_trajectory_csv(report, eval_traj);
      return kExitOk;
    }

    if (exp_cmd->parsed()) {
      print_config(out, *exp_cmd);
      std::vector<Sequence> seqs = load_dataset("dir", exp_dir);
      if (exp_test > seqs.size()) {
        throw UsageError("--test-seq " + std::to_string(exp_test) + " but only " + std::to_string(seqs.size()) +
                         " sequences exist");
      }
      if (seqs.size() < 2) throw DatasetLayoutError("experiment needs at least 2 sequences");
      const Sequence test = seqs[exp_test - 1];
      seqs.erase(seqs.begin() + static_cast<std::ptrdiff_t>(exp_test - 1));
      for (std::uint64_t seed : exp_seeds) {
        Model model = build_cnnf(InputSpec::parse(exp_input), parse_scale(exp_scale));
        init_weights(model, HeInit{}, seed);
        TrainConfig cfg = make_train_config(exp_epochs, exp_batch, exp_beta, exp_lr, exp_momentum, seed, true, true,
                                            exp_threads);
        const ExperimentSeries series = incremental_experiment(model, seqs, test, cfg);
        fs::path path = exp_out;
        if (exp_seeds.size() > 1) {
          path = path.parent_path() /
                 (path.stem().string() + "-seed" + std::to_string(seed) + path.extension().string());
        }
        write_series_csv(series, path);
        for (const auto& e : series.entries) {
          char line[200];
          std::snprintf(line, sizeof line, "seed %llu k %zu mean_pos_err_m %.6g std %.6g params %zu bytes %zu\n",
                        static_cast<unsigned long long>(seed), e.k, e.report.position.mean, e.report.position.std,
                        e.param_count, e.map_bytes);
          out << line;
        }
        out << "wrote " << path.string() << "\n";
      }
      return kExitOk;
    }

    if (inspect_cmd->parsed()) {
      print_config(out, *inspect_cmd);
      std::optional<InputSpec> spec;
      if (!inspect_input.empty()) spec = InputSpec::parse(inspect_input);
      const Model model = load_map(inspect_map, spec);
      out << "architecture " << model.meta.architecture << "\n";
      out << "input " << model.input_spec.name() << " n " << model.input_channels() << " size " << model.input_size
          << "\n";
      Shape shape = model.input_shape();
      for (const auto& layer : model.layers) {
        const Shape next = layer.output_shape(shape);
        out << "  " << layer_kind_name(layer.kind);
        if (layer.kind == LayerKind::conv) {
          out << " " << layer.conv.kernel_h << "x" << layer.conv.kernel_w << "x" << layer.conv.in_depth << "x"
              << layer.conv.filters << " stride " << layer.conv.stride << " pad " << layer.conv.pad;
        } else if (layer.kind == LayerKind::dense) {
          out << " " << layer.dense.in_dim << "->" << layer.dense.out_dim;
        } else if (layer.kind == LayerKind::maxpool) {
          out << " " << layer.pool.window << "x" << layer.pool.window << " stride " << layer.pool.stride;
        }
        out << "  " << shape_str(shape) << " -> " << shape_str(next) << "\n";
        shape = next;
      }
      out << "param_count " << param_count(model) << "\n";
      out << "byte_size " << fs::file_size(inspect_map) << "\n";
      if (!inspect_filters.empty()) {
        export_filters(model, inspect_filters);
        out << "wrote " << inspect_filters << "\n";
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace cnnmap
