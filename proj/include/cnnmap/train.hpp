#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cnnmap/dataset.hpp"
#include "cnnmap/model.hpp"
#include "cnnmap/pose.hpp"

namespace cnnmap {

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_pos_err_m = 0.0;  // NaN when there is no validation data
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  LossConfig loss;
  std::uint64_t seed = 1;
  /// Fixed partitioning of each minibatch, so results do not depend on the
  /// thread count.
  bool deterministic = true;
  bool shuffle = true;
  std::size_t threads = 1;
  /// Called after every epoch with the updated model.
  std::function<void(const EpochLog&, const Model&)> on_epoch;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

/// v = momentum * v - lr * g; w = w + v. Throws DimensionError on length mismatch.
void sgd_step(std::span<float> weights, std::span<const float> grads, std::span<float> velocity, float lr,
              float momentum);
void sgd_step(Model& model, const ModelGrads& grads, ModelGrads& velocity, float lr, float momentum);

/// Throws MissingModalityError if any frame lacks a channel the model's
/// input kind needs.
void check_modalities(const Model& model, const std::vector<Sequence>& seqs);

/// Minibatch SGD with momentum on the pose loss. Without `val_seq`, the
/// last 10% of the concatenated training frames are held out for the
/// validation column of the log.
TrainResult train(const Model& model, const std::vector<Sequence>& train_seqs, const Sequence* val_seq,
                  const TrainConfig& cfg);

struct ErrorStats {
  double mean = 0.0;
  double std = 0.0;  // population (1/N)
  double median = 0.0;
};

ErrorStats summarize(std::span<const double> values);

struct EvalReport {
  std::vector<double> pos_errors_m;
  std::vector<double> ang_errors_deg;
  std::vector<Vec3> gt_positions;
  std::vector<Vec3> pred_positions;
  ErrorStats position;
  ErrorStats angle;
  std::size_t frame_count = 0;
};

/// Predicted quaternions are normalized before the angular error.
EvalReport evaluate(const Model& model, const Sequence& seq);

struct ExperimentEntry {
  std::size_t k = 0;
  EvalReport report;
  std::size_t param_count = 0;
  std::size_t map_bytes = 0;
  std::vector<EpochLog> log;
};

struct ExperimentSeries {
  std::vector<ExperimentEntry> entries;
};

/// For k = 1..K trains a copy of `initial` on the first k sequences and
/// evaluates it on `test_seq`.
ExperimentSeries incremental_experiment(const Model& initial, const std::vector<Sequence>& train_seqs,
                                        const Sequence& test_seq, const TrainConfig& cfg);

// CSV exports; numbers use 9 significant digits, std columns are population.
void write_series_csv(const ExperimentSeries& series, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_trajectory_csv(const EvalReport& report, const std::filesystem::path& path);
void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace cnnmap
