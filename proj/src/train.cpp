#include "cnnmap/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "cnnmap/errors.hpp"
#include "cnnmap/kernels.hpp"
#include "cnnmap/map_io.hpp"

namespace cnnmap {

namespace {

constexpr std::size_t kDeterministicPartitions = 4;
constexpr std::size_t kInputCacheBudgetBytes = std::size_t{1} << 30;

struct Sample {
  const Frame* frame;
  const Intrinsics* intrinsics;
};

// Assembled inputs are cached while they fit the budget and rebuilt on
// demand otherwise.
class InputProvider {
 public:
  InputProvider(std::vector<Sample> samples, const Model& model) : samples_(std::move(samples)), model_(model) {
    const std::size_t per = shape_numel(model.input_shape()) * sizeof(float);
    if (per * samples_.size() <= kInputCacheBudgetBytes) {
      cache_.reserve(samples_.size());
      for (const auto& s : samples_) cache_.push_back(build(s));
    }
  }

  std::size_t size() const { return samples_.size(); }
  const Pose& target(std::size_t i) const { return samples_[i].frame->pose; }

  Tensor<float> input(std::size_t i) const { return cache_.empty() ? build(samples_[i]) : cache_[i]; }
  const Tensor<float>* cached(std::size_t i) const { return cache_.empty() ? nullptr : &cache_[i]; }

 private:
  Tensor<float> build(const Sample& s) const {
    return assemble_input(*s.frame, model_.input_spec, *s.intrinsics, model_.input_size);
  }

  std::vector<Sample> samples_;
  const Model& model_;
  std::vector<Tensor<float>> cache_;
};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

void add_grads(ModelGrads& into, const ModelGrads& from) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (into[i].weights.empty()) continue;
    kernels::axpy<float>(1.0f, from[i].weights.data(), into[i].weights.data());
    kernels::axpy<float>(1.0f, from[i].bias.data(), into[i].bias.data());
  }
}

double run_partition(const Model& model, const InputProvider& inputs, std::span<const std::size_t> indices,
                     float grad_scale, std::uint64_t step_seed, const LossConfig& loss_cfg, ModelGrads& grads) {
  double loss_sum = 0.0;
  ForwardTrace trace;
  for (std::size_t idx : indices) {
    const Tensor<float>* cached = inputs.cached(idx);
    Tensor<float> owned;
    if (!cached) {
      owned = inputs.input(idx);
      cached = &owned;
    }
    const Tensor<float> out = forward_layers(model, *cached, Mode::train, mix(step_seed ^ idx), &trace);
    PoseVector pred{};
    for (std::size_t i = 0; i < kPoseVectorLength; ++i) pred[i] = out[i];
    const Pose& target = inputs.target(idx);
    loss_sum += pose_loss(pred, target, loss_cfg);
    const PoseVector g = pose_loss_grad(pred, target, loss_cfg);
    Tensor<float> out_grad({kPoseVectorLength});
    for (std::size_t i = 0; i < kPoseVectorLength; ++i) out_grad[i] = static_cast<float>(g[i]) * grad_scale;
    backward(model, trace, out_grad, grads);
  }
  return loss_sum;
}

double mean_position_error(const Model& model, const InputProvider& inputs) {
  if (inputs.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const PoseVector p = predict(model, inputs.input(i));
    sum += position_error({p[0], p[1], p[2]}, inputs.target(i).position);
  }
  return sum / static_cast<double>(inputs.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(loss.beta > 0.0)) throw std::invalid_argument("beta must be > 0");
}

void sgd_step(std::span<float> weights, std::span<const float> grads, std::span<float> velocity, float lr,
              float momentum) {
  if (grads.size() != weights.size() || velocity.size() != weights.size()) {
    throw DimensionError("sgd_step: weights (" + std::to_string(weights.size()) + "), grads (" +
                         std::to_string(grads.size()) + ") and velocity (" + std::to_string(velocity.size()) +
                         ") lengths differ");
  }
  kernels::momentum_update(weights, velocity, grads, lr, momentum);
}

void sgd_step(Model& model, const ModelGrads& grads, ModelGrads& velocity, float lr, float momentum) {
  if (grads.size() != model.layers.size() || velocity.size() != model.layers.size()) {
    throw DimensionError("sgd_step: gradient list does not match the model");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    if (!layer.has_params()) continue;
    sgd_step(layer.weights.data(), grads[i].weights.data(), velocity[i].weights.data(), lr, momentum);
    sgd_step(layer.bias.data(), grads[i].bias.data(), velocity[i].bias.data(), lr, momentum);
  }
}

void check_modalities(const Model& model, const std::vector<Sequence>& seqs) {
  const InputSpec& spec = model.input_spec;
  for (const auto& seq : seqs) {
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      const Frame& f = seq.frames[i];
      if ((spec.needs_color() && !f.has_rgb()) || (spec.needs_depth() && !f.has_depth())) {
        throw MissingModalityError("sequence '" + seq.tag + "' frame " + std::to_string(i) + " lacks " +
                                   (spec.needs_depth() && !f.has_depth() ? "depth" : "color") +
                                   " required by input kind '" + std::string(spec.name()) + "'");
      }
    }
  }
}

TrainResult train(const Model& initial, const std::vector<Sequence>& train_seqs, const Sequence* val_seq,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_seqs.empty()) throw std::invalid_argument("train: no training sequences");
  check_modalities(initial, train_seqs);
  if (val_seq) check_modalities(initial, {*val_seq});

  std::vector<Sample> all;
  for (const auto& seq : train_seqs) {
    for (const auto& f : seq.frames) all.push_back({&f, &seq.intrinsics});
  }
  std::vector<Sample> val;
  if (val_seq) {
    for (const auto& f : val_seq->frames) val.push_back({&f, &val_seq->intrinsics});
  } else {
    const std::size_t holdout = all.size() / 10;
    val.assign(all.end() - static_cast<std::ptrdiff_t>(holdout), all.end());
    all.resize(all.size() - holdout);
  }
  if (all.empty()) throw std::invalid_argument("train: no training frames");

  TrainResult result{initial, {}};
  Model& model = result.model;
  const InputProvider train_inputs(std::move(all), model);
  const InputProvider val_inputs(std::move(val), model);

  const std::size_t partitions =
      cfg.deterministic ? kDeterministicPartitions : std::max<std::size_t>(1, cfg.threads);
  std::vector<ModelGrads> partial(partitions, make_grads(model));
  ModelGrads total = make_grads(model);
  ModelGrads velocity = make_grads(model);

  std::vector<std::size_t> order(train_inputs.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) shuffle_indices(order, mix(cfg.seed) ^ mix(epoch));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const float scale = 1.0f / static_cast<float>(batch.size());
      const std::uint64_t step_seed = mix(cfg.seed ^ mix(step));

      const std::size_t parts = std::min(partitions, batch.size());
      std::vector<double> part_loss(parts, 0.0);
      auto work = [&](std::size_t p) {
        const std::size_t lo = batch.size() * p / parts;
        const std::size_t hi = batch.size() * (p + 1) / parts;
        zero_grads(partial[p]);
        part_loss[p] = run_partition(model, train_inputs, batch.subspan(lo, hi - lo), scale, step_seed, cfg.loss,
                                     partial[p]);
      };
      const std::size_t workers = std::min(parts, std::max<std::size_t>(1, cfg.threads));
      if (workers <= 1) {
        for (std::size_t p = 0; p < parts; ++p) work(p);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (std::size_t p = w; p < parts; p += workers) work(p);
          });
        }
      }

      zero_grads(total);
      for (std::size_t p = 0; p < parts; ++p) {
        add_grads(total, partial[p]);
        loss_sum += part_loss[p];
      }
      sgd_step(model, total, velocity, static_cast<float>(cfg.learning_rate), static_cast<float>(cfg.momentum));
    }

    EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()), mean_position_error(model, val_inputs)};
    result.log.push_back(entry);
    if (cfg.on_epoch) cfg.on_epoch(entry, model);
  }
  model.meta.epochs += cfg.epochs;
  if (!train_seqs.empty()) {
    std::string tag;
    for (const auto& s : train_seqs) tag += (tag.empty() ? "" : "+") + s.tag;
    model.meta.dataset_tag = tag;
  }
  return result;
}

ErrorStats summarize(std::span<const double> values) {
  ErrorStats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return s;
}

EvalReport evaluate(const Model& model, const Sequence& seq) {
  check_modalities(model, {seq});
  EvalReport r;
  for (const auto& frame : seq.frames) {
    const PoseVector p = predict(model, assemble_input(frame, model.input_spec, seq.intrinsics, model.input_size));
    const Vec3 pos{p[0], p[1], p[2]};
    const Quaternion q{p[3], p[4], p[5], p[6]};
    r.pos_errors_m.push_back(position_error(pos, frame.pose.position));
    // A zero quaternion prediction carries no orientation; score it as the worst case.
    r.ang_errors_deg.push_back(q.norm() > 0.0 ? angular_error_deg(q, frame.pose.orientation) : 180.0);
    r.gt_positions.push_back(frame.pose.position);
    r.pred_positions.push_back(pos);
  }
  r.position = summarize(r.pos_errors_m);
  r.angle = summarize(r.ang_errors_deg);
  r.frame_count = seq.frames.size();
  return r;
}

ExperimentSeries incremental_experiment(const Model& initial, const std::vector<Sequence>& train_seqs,
                                        const Sequence& test_seq, const TrainConfig& cfg) {
  if (train_seqs.empty()) throw std::invalid_argument("incremental experiment needs >= 1 training sequence");
  ExperimentSeries series;
  for (std::size_t k = 1; k <= train_seqs.size(); ++k) {
    const std::vector<Sequence> subset(train_seqs.begin(), train_seqs.begin() + static_cast<std::ptrdiff_t>(k));
    TrainResult trained = train(initial, subset, &test_seq, cfg);
    ExperimentEntry e;
    e.k = k;
    e.report = evaluate(trained.model, test_seq);
    e.param_count = param_count(trained.model);
    e.map_bytes = serialize_map(trained.model).size();
    e.log = std::move(trained.log);
    series.entries.push_back(std::move(e));
  }
  return series;
}

namespace {

struct CsvFile {
  explicit CsvFile(const std::filesystem::path& path) : path_(path), f_(std::fopen(path.c_str(), "w")) {
    if (!f_) throw IoError("cannot write '" + path.string() + "'");
  }
  ~CsvFile() {
    if (f_) std::fclose(f_);
  }
  CsvFile(const CsvFile&) = delete;
  CsvFile& operator=(const CsvFile&) = delete;

  std::FILE* get() { return f_; }
  void close() {
    const bool failed = std::ferror(f_) != 0;
    const int rc = std::fclose(f_);
    f_ = nullptr;
    if (failed || rc != 0) throw IoError("failed writing '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::FILE* f_;
};

}  // namespace

void write_series_csv(const ExperimentSeries& series, const std::filesystem::path& path) {
  CsvFile f(path);
  std::fprintf(f.get(), "k,mean_pos_err_m,std_pos_err_m,mean_ang_err_deg,param_count,map_bytes\n");
  for (const auto& e : series.entries) {
    std::fprintf(f.get(), "%zu,%.9g,%.9g,%.9g,%zu,%zu\n", e.k, e.report.position.mean, e.report.position.std,
                 e.report.angle.mean, e.param_count, e.map_bytes);
  }
  f.close();
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  CsvFile f(path);
  std::fprintf(f.get(), "frame,pos_err_m,ang_err_deg\n");
  for (std::size_t i = 0; i < report.pos_errors_m.size(); ++i) {
    std::fprintf(f.get(), "%zu,%.9g,%.9g\n", i, report.pos_errors_m[i], report.ang_errors_deg[i]);
  }
  f.close();
}

void write_trajectory_csv(const EvalReport& report, const std::filesystem::path& path) {
  CsvFile f(path);
  std::fprintf(f.get(), "frame,gt_x,gt_y,gt_z,pred_x,pred_y,pred_z\n");
  for (std::size_t i = 0; i < report.gt_positions.size(); ++i) {
    const auto& g = report.gt_positions[i];
    const auto& p = report.pred_positions[i];
    std::fprintf(f.get(), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, g[0], g[1], g[2], p[0], p[1], p[2]);
  }
  f.close();
}

void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  CsvFile f(path);
  std::fprintf(f.get(), "epoch,train_loss,val_pos_err_m\n");
  for (const auto& e : log) std::fprintf(f.get(), "%zu,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_pos_err_m);
  f.close();
}

}  // namespace cnnmap
