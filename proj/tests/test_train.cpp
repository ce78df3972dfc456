#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "cnnmap/errors.hpp"
#include "cnnmap/map_io.hpp"
#include "cnnmap/synth.hpp"
#include "cnnmap/train.hpp"
#include "test_util.hpp"

using namespace cnnmap;
using cnnmap::testing::TempDir;

namespace {

struct Fixture {
  Scene scene = generate_scene(7, 20000, 3.4641);
  std::vector<Sequence> rings;

  explicit Fixture(std::size_t frames, std::size_t count = 2) {
    for (const auto& spec : ring_layout(RingLayout{count, frames, 3.0, 0.5, 0.5})) {
      rings.push_back(
          render_sequence(scene, generate_trajectory(spec), Intrinsics::synthetic(), 64, "ring"));
    }
  }
};

Model fresh_model(std::uint64_t seed, const char* kind = "rgb") {
  Model m = build_cnnf(InputSpec::parse(kind), CnnfScale::reduced);
  init_weights(m, HeInit{}, seed);
  return m;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.loss.beta = 10.0;
  cfg.seed = 3;
  return cfg;
}

// A model whose prediction is the constant `pose` for every input.
Model constant_model(const PoseVector& pose) {
  Model m = build_cnnf(InputSpec::parse("rgb"), CnnfScale::reduced);
  auto& last = m.layers.back();
  for (std::size_t i = 0; i < 7; ++i) last.bias[i] = static_cast<float>(pose[i]);
  return m;
}

Sequence blank_sequence(const std::vector<Vec3>& positions) {
  Sequence seq;
  seq.intrinsics = Intrinsics::synthetic();
  for (const auto& p : positions) {
    Frame f;
    f.rgb = Image8(64, 64, 3, 0);
    f.pose = Pose{p, Quaternion{1, 0, 0, 0}};
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

bool same_weights(const Model& a, const Model& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (!(a.layers[i].weights == b.layers[i].weights) || !(a.layers[i].bias == b.layers[i].bias)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sgd step examples") {
  std::vector<float> w{1.0f}, g{0.5f}, v{0.0f};
  sgd_step(w, g, v, 0.1f, 0.0f);
  CHECK(w[0] == doctest::Approx(0.95f));

  std::vector<float> w0{0.25f, -3.0f}, g0{1.0f, 2.0f}, v0{0.0f, 0.0f};
  sgd_step(w0, g0, v0, 0.0f, 0.9f);
  CHECK(w0 == std::vector<float>{0.25f, -3.0f});

  std::vector<float> w2{0.0f}, g2{1.0f}, v2{0.0f};
  sgd_step(w2, g2, v2, 0.1f, 0.9f);
  CHECK(w2[0] == doctest::Approx(-0.1f));
  sgd_step(w2, g2, v2, 0.1f, 0.9f);
  CHECK(w2[0] == doctest::Approx(-0.29f));

  std::vector<float> bad{1.0f, 2.0f};
  CHECK_THROWS_AS(sgd_step(bad, g2, v2, 0.1f, 0.9f), DimensionError);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("training log, determinism and constant size") {
  Fixture fx(12);
  const Model init = fresh_model(1);
  const std::size_t params = param_count(init);
  const std::size_t bytes = serialize_map(init).size();
  TrainConfig cfg = quick_config(5);
  std::size_t callbacks = 0;
  cfg.on_epoch = [&](const EpochLog& e, const Model& m) {
    ++callbacks;
    CHECK(e.epoch == callbacks);
    CHECK(param_count(m) == params);
    CHECK(serialize_map(m).size() == bytes);
  };
  const TrainResult a = train(init, fx.rings, &fx.rings[1], cfg);
  CHECK(a.log.size() == 5);
  CHECK(callbacks == 5);
  callbacks = 0;
  const TrainResult b = train(init, fx.rings, &fx.rings[1], cfg);
  CHECK(same_weights(a.model, b.model));
  CHECK(serialize_map(a.model) == serialize_map(b.model));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_pos_err_m == b.log[i].val_pos_err_m);
  }

  // Deterministic partitioning does not depend on the worker count.
  TrainConfig threaded = cfg;
  threaded.on_epoch = nullptr;
  threaded.threads = 3;
  CHECK(same_weights(train(init, fx.rings, &fx.rings[1], threaded).model, a.model));

  TrainConfig other = cfg;
  other.on_epoch = nullptr;
  other.seed = 4;
  CHECK_FALSE(same_weights(train(init, fx.rings, &fx.rings[1], other).model, a.model));
}

TEST_CASE("holdout without a validation sequence") {
  Fixture fx(10, 1);
  const TrainResult r = train(fresh_model(1), fx.rings, nullptr, quick_config(2));
  REQUIRE(r.log.size() == 2);
  CHECK(std::isfinite(r.log[0].val_pos_err_m));
  CHECK(r.model.meta.epochs == 2);
}

TEST_CASE("10-frame overfit: loss falls below 5% of the first epoch") {
  Fixture fx(10, 1);
  // Calibrated once: the norm loss keeps a constant-size gradient near the
  // optimum, so the step must be small enough for the tail to keep falling.
  TrainConfig cfg = quick_config(300);
  cfg.batch_size = 5;
  cfg.learning_rate = 4e-5;
  cfg.loss.beta = 1.0;
  const Sequence& seq = fx.rings[0];
  const TrainResult r = train(fresh_model(2), {seq}, &seq, cfg);
  REQUIRE(r.log.size() == 300);
  const double first = r.log.front().train_loss;
  const double last = r.log.back().train_loss;
  MESSAGE("epoch 1 loss " << first << ", epoch 300 loss " << last);
  CHECK(last < 0.05 * first);

  // Monotone over 10-epoch windows.
  for (std::size_t w = 10; w < r.log.size(); w += 10) {
    double prev = 0.0, cur = 0.0;
    for (std::size_t i = w - 10; i < w; ++i) prev += r.log[i].train_loss;
    for (std::size_t i = w; i < w + 10; ++i) cur += r.log[i].train_loss;
    CAPTURE(w);
    CHECK(cur < prev);
  }
}

TEST_CASE("missing modality is reported before training") {
  Fixture fx(4, 1);
  for (auto& f : fx.rings[0].frames) f.depth.reset();
  bool trained = false;
  TrainConfig cfg = quick_config(1);
  cfg.on_epoch = [&](const EpochLog&, const Model&) { trained = true; };
  CHECK_THROWS_AS(train(fresh_model(1, "rgbd"), fx.rings, nullptr, cfg), MissingModalityError);
  CHECK_FALSE(trained);
}

TEST_CASE("zero learning rate leaves evaluation bitwise unchanged") {
  Fixture fx(6, 1);
  Model m = fresh_model(5);
  const EvalReport before = evaluate(m, fx.rings[0]);
  ModelGrads grads = make_grads(m), velocity = make_grads(m);
  for (const auto& frame : fx.rings[0].frames) {
    ForwardTrace trace;
    const auto x = assemble_input(frame, m.input_spec, fx.rings[0].intrinsics, m.input_size);
    const auto y = forward_layers(m, x, Mode::train, 0, &trace);
    PoseVector pred;
    for (std::size_t i = 0; i < 7; ++i) pred[i] = y[i];
    const PoseVector g = pose_loss_grad(pred, frame.pose, LossConfig{});
    Tensor<float> gt({7});
    for (std::size_t i = 0; i < 7; ++i) gt[i] = static_cast<float>(g[i]);
    backward(m, trace, gt, grads);
  }
  sgd_step(m, grads, velocity, 0.0f, 0.9f);
  sgd_step(m, grads, velocity, 0.0f, 0.9f);
  const EvalReport after = evaluate(m, fx.rings[0]);
  CHECK(before.pos_errors_m == after.pos_errors_m);
  CHECK(before.ang_errors_deg == after.ang_errors_deg);
}

TEST_CASE("evaluate: exact predictions") {
  const Model m = constant_model({1, 2, 3, 1, 0, 0, 0});
  const EvalReport r = evaluate(m, blank_sequence({{1, 2, 3}, {1, 2, 3}}));
  CHECK(r.frame_count == 2);
  CHECK(r.position.mean == doctest::Approx(0.0));
  CHECK(r.position.std == doctest::Approx(0.0));
  CHECK(r.angle.mean == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("evaluate: aggregates use the population deviation") {
  const Model m = constant_model({0, 0, 0, 2, 0, 0, 0});
  const EvalReport r = evaluate(m, blank_sequence({{1, 0, 0}, {0, 2, 0}, {0, 0, 3}}));
  CHECK(r.frame_count == 3);
  CHECK(r.pos_errors_m == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(r.position.mean == doctest::Approx(2.0));
  CHECK(r.position.std == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(r.position.std == doctest::Approx(0.8165).epsilon(1e-4));
  CHECK(r.position.median == 2.0);
  // Unnormalized prediction (2,0,0,0) is the identity once normalized.
  for (double a : r.ang_errors_deg) CHECK(a == doctest::Approx(0.0).epsilon(1e-6));

  const ErrorStats even = summarize(std::vector<double>{4, 1, 3, 2});
  CHECK(even.median == 2.5);
  CHECK(summarize(std::vector<double>{}).mean == 0.0);
}

TEST_CASE("report CSVs") {
  TempDir dir;
  EvalReport empty;
  write_report_csv(empty, dir / "empty.csv");
  write_trajectory_csv(empty, dir / "empty_traj.csv");
  CHECK(read_csv(dir / "empty.csv") ==
        std::vector<std::vector<std::string>>{{"frame", "pos_err_m", "ang_err_deg"}});
  CHECK(read_csv(dir / "empty_traj.csv").size() == 1);

  const Model m = constant_model({0.1, 0.2, 0.3, 1, 0.1, 0, 0});
  const EvalReport r = evaluate(m, blank_sequence({{1.0 / 3.0, 0, 0}, {0, 2.0 / 7.0, 0}, {0, 0, 3.14159265358979}}));
  write_report_csv(r, dir / "r.csv");
  write_trajectory_csv(r, dir / "t.csv");
  const auto rows = read_csv(dir / "r.csv");
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::stoul(rows[i + 1][0]) == i);
    CHECK(std::stod(rows[i + 1][1]) == doctest::Approx(r.pos_errors_m[i]).epsilon(1e-8));
    CHECK(std::stod(rows[i + 1][2]) == doctest::Approx(r.ang_errors_deg[i]).epsilon(1e-8));
    char expect[64];
    std::snprintf(expect, sizeof expect, "%.9g", r.pos_errors_m[i]);
    CHECK(rows[i + 1][1] == expect);
  }
  const auto traj = read_csv(dir / "t.csv");
  REQUIRE(traj.size() == 4);
  CHECK(traj[0] == std::vector<std::string>{"frame", "gt_x", "gt_y", "gt_z", "pred_x", "pred_y", "pred_z"});
  CHECK(std::stod(traj[3][3]) == doctest::Approx(3.14159265358979).epsilon(1e-8));
  CHECK(std::stod(traj[1][4]) == doctest::Approx(0.1).epsilon(1e-7));

  ExperimentSeries series;
  for (std::size_t k = 1; k <= 3; ++k) series.entries.push_back({k, r, 226503, 906723, {}});
  write_series_csv(series, dir / "s.csv");
  const auto srows = read_csv(dir / "s.csv");
  REQUIRE(srows.size() == 4);
  CHECK(srows[0] ==
        std::vector<std::string>{"k", "mean_pos_err_m", "std_pos_err_m", "mean_ang_err_deg", "param_count", "map_bytes"});
  CHECK(srows[3][0] == "3");
  CHECK(srows[2][4] == "226503");
  CHECK(std::stod(srows[1][2]) == doctest::Approx(r.position.std).epsilon(1e-8));

  write_log_csv({{1, 2.5, 0.75}, {2, 1.25, 0.5}}, dir / "log.csv");
  const auto lrows = read_csv(dir / "log.csv");
  REQUIRE(lrows.size() == 3);
  CHECK(lrows[0] == std::vector<std::string>{"epoch", "train_loss", "val_pos_err_m"});
  CHECK(lrows[2] == std::vector<std::string>{"2", "1.25", "0.5"});

  CHECK_THROWS_AS(write_report_csv(r, dir / "no/such/dir/r.csv"), IoError);
}

TEST_CASE("incremental experiment keeps the map size fixed") {
  Fixture fx(8, 4);
  const std::vector<Sequence> train_seqs(fx.rings.begin(), fx.rings.begin() + 3);
  const ExperimentSeries s = incremental_experiment(fresh_model(1), train_seqs, fx.rings[3], quick_config(2));
  REQUIRE(s.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.entries[i].k == i + 1);
    CHECK(s.entries[i].param_count == s.entries[0].param_count);
    CHECK(s.entries[i].map_bytes == s.entries[0].map_bytes);
    CHECK(s.entries[i].report.frame_count == 8);
    CHECK(s.entries[i].log.size() == 2);
  }
}
