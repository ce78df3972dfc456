#include "cnnmap/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "cnnmap/errors.hpp"

namespace cnnmap {

std::size_t InputSpec::channels() const {
  switch (kind) {
    case InputKind::gray:
    case InputKind::depth:
      return 1;
    case InputKind::rgb:
    case InputKind::pointcloud:
      return 3;
    case InputKind::rgbd:
      return 4;
    case InputKind::rgbpc:
      return 6;
  }
  return 0;
}

std::string_view InputSpec::name() const {
  switch (kind) {
    case InputKind::gray:
      return "gray";
    case InputKind::rgb:
      return "rgb";
    case InputKind::depth:
      return "depth";
    case InputKind::pointcloud:
      return "pointcloud";
    case InputKind::rgbd:
      return "rgbd";
    case InputKind::rgbpc:
      return "rgbpc";
  }
  return "unknown";
}

bool InputSpec::needs_color() const {
  return kind == InputKind::gray || kind == InputKind::rgb || kind == InputKind::rgbd || kind == InputKind::rgbpc;
}

bool InputSpec::needs_depth() const {
  return kind == InputKind::depth || kind == InputKind::pointcloud || kind == InputKind::rgbd ||
         kind == InputKind::rgbpc;
}

InputSpec InputSpec::parse(std::string_view name) {
  for (InputKind k : {InputKind::gray, InputKind::rgb, InputKind::depth, InputKind::pointcloud, InputKind::rgbd,
                      InputKind::rgbpc}) {
    if (InputSpec{k}.name() == name) return InputSpec{k};
  }
  throw std::invalid_argument("unknown input kind '" + std::string(name) +
                              "' (expected gray|rgb|depth|pointcloud|rgbd|rgbpc)");
}

std::optional<InputSpec> InputSpec::from_channels(std::size_t n) {
  switch (n) {
    case 1:
      return InputSpec{InputKind::gray};
    case 3:
      return InputSpec{InputKind::rgb};
    case 4:
      return InputSpec{InputKind::rgbd};
    case 6:
      return InputSpec{InputKind::rgbpc};
    default:
      return std::nullopt;
  }
}

std::string_view scale_name(CnnfScale scale) { return scale == CnnfScale::full ? "full" : "reduced"; }

CnnfScale parse_scale(std::string_view name) {
  if (name == "full") return CnnfScale::full;
  if (name == "reduced") return CnnfScale::reduced;
  throw std::invalid_argument("unknown scale '" + std::string(name) + "' (expected full|reduced)");
}

std::size_t scale_input_size(CnnfScale scale) { return scale == CnnfScale::full ? 224 : 64; }

std::vector<Shape> Model::layer_output_shapes() const {
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape current = input_shape();
  for (const auto& layer : layers) {
    current = layer.output_shape(current);
    shapes.push_back(current);
  }
  return shapes;
}

void Model::validate() const {
  if (layers.empty()) throw IntegrityError("model has no layers");
  for (const auto& layer : layers) {
    if (layer.kind == LayerKind::conv) {
      if (layer.conv.in_depth != input_channels()) {
        throw IntegrityError("first conv filter depth " + std::to_string(layer.conv.in_depth) +
                             " does not match input channel count n=" + std::to_string(input_channels()));
      }
      break;
    }
  }
  std::vector<Shape> shapes;
  try {
    shapes = layer_output_shapes();
  } catch (const DimensionError& e) {
    throw IntegrityError(std::string("layer shapes do not chain: ") + e.what());
  }
  if (shapes.back() != Shape{kPoseVectorLength}) {
    throw IntegrityError("model output shape " + shape_str(shapes.back()) + " is not the 7-long pose vector");
  }
}

Model build_cnnf(InputSpec input_spec, CnnfScale scale, float dropout_keep) {
  const bool full = scale == CnnfScale::full;
  const std::size_t c1 = full ? 64 : 16;
  const std::size_t c2 = full ? 256 : 64;
  const std::size_t fc = full ? 4096 : 256;
  const std::size_t n = input_spec.channels();

  Model m;
  m.input_spec = input_spec;
  m.input_size = scale_input_size(scale);
  m.meta.architecture = full ? "cnn-f" : "cnn-f-reduced";

  using L = Layer<float>;
  auto& ls = m.layers;
  ls.push_back(L::make_conv("conv1", {11, 11, n, c1, 4, 0}));
  ls.push_back(L::make_relu("relu1"));
  ls.push_back(L::make_maxpool("pool1", {2, 2}));
  ls.push_back(L::make_conv("conv2", {5, 5, c1, c2, 1, 2}));
  ls.push_back(L::make_relu("relu2"));
  ls.push_back(L::make_maxpool("pool2", {2, 2}));
  ls.push_back(L::make_conv("conv3", {3, 3, c2, c2, 1, 1}));
  ls.push_back(L::make_relu("relu3"));
  ls.push_back(L::make_conv("conv4", {3, 3, c2, c2, 1, 1}));
  ls.push_back(L::make_relu("relu4"));
  ls.push_back(L::make_conv("conv5", {3, 3, c2, c2, 1, 1}));
  ls.push_back(L::make_relu("relu5"));
  ls.push_back(L::make_maxpool("pool5", {2, 2}));
  ls.push_back(L::make_flatten("flatten"));

  // Spatial size after pool5 follows from the input size.
  Shape s = m.input_shape();
  for (const auto& layer : ls) s = layer.output_shape(s);
  const std::size_t flat = s[0];

  ls.push_back(L::make_dense("full6", {flat, fc}));
  ls.push_back(L::make_relu("relu6"));
  if (dropout_keep < 1.0f) ls.push_back(L::make_dropout("drop6", dropout_keep));
  ls.push_back(L::make_dense("full7", {fc, fc}));
  ls.push_back(L::make_relu("relu7"));
  if (dropout_keep < 1.0f) ls.push_back(L::make_dropout("drop7", dropout_keep));
  ls.push_back(L::make_dense("full8", {fc, kPoseVectorLength}));
  return m;
}

std::size_t param_count(const Model& model) {
  std::size_t total = 0;
  for (const auto& layer : model.layers) total += layer.param_count();
  return total;
}

namespace {

std::size_t fan_in(const Layer<float>& layer) {
  return layer.kind == LayerKind::conv ? layer.conv.in_depth * layer.conv.kernel_h * layer.conv.kernel_w
                                       : layer.dense.in_dim;
}

}  // namespace

void init_weights(Model& model, const InitScheme& scheme, std::uint64_t seed) {
  if (const auto* blob = std::get_if<BlobInit>(&scheme)) {
    if (!blob->source) throw IntegrityError("weight blob is empty");
    const Model& src = *blob->source;
    if (src.layers.size() != model.layers.size()) {
      throw IntegrityError("weight blob has " + std::to_string(src.layers.size()) + " layers, model has " +
                           std::to_string(model.layers.size()));
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      auto& dst = model.layers[i];
      const auto& from = src.layers[i];
      if (from.kind != dst.kind || from.weights.shape() != dst.weights.shape() ||
          from.bias.shape() != dst.bias.shape()) {
        throw IntegrityError("weight blob layer " + std::to_string(i) + " ('" + dst.name + "') shape " +
                             shape_str(from.weights.shape()) + " does not match " + shape_str(dst.weights.shape()));
      }
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      model.layers[i].weights = src.layers[i].weights;
      model.layers[i].bias = src.layers[i].bias;
    }
    return;
  }

  std::mt19937_64 rng(seed);
  for (auto& layer : model.layers) {
    if (!layer.has_params()) continue;
    double sigma = 0.0;
    if (std::holds_alternative<HeInit>(scheme)) {
      sigma = std::sqrt(2.0 / static_cast<double>(fan_in(layer)));
    } else {
      sigma = std::get<GaussianInit>(scheme).sigma;
    }
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& w : layer.weights.data()) w = static_cast<float>(dist(rng));
    layer.bias.fill(0.0f);
  }
}

ModelGrads make_grads(const Model& model) {
  ModelGrads grads(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    if (!layer.has_params()) continue;
    grads[i].weights = Tensor<float>(layer.weights.shape());
    grads[i].bias = Tensor<float>(layer.bias.shape());
  }
  return grads;
}

void zero_grads(ModelGrads& grads) {
  for (auto& g : grads) {
    if (!g.weights.empty()) g.weights.fill(0.0f);
    if (!g.bias.empty()) g.bias.fill(0.0f);
  }
}

Tensor<float> forward_layers(const Model& model, const Tensor<float>& input, Mode mode, std::uint64_t seed,
                             ForwardTrace* trace) {
  if (input.shape() != model.input_shape()) {
    throw DimensionError("model expects input " + shape_str(model.input_shape()) + " (n=" +
                         std::to_string(model.input_channels()) + " channels), got " + shape_str(input.shape()));
  }
  if (trace) trace->caches.resize(model.layers.size());
  Tensor<float> x = input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    x = layer_forward(model.layers[i], x, mode, seed * 0x9E3779B97F4A7C15ULL + i,
                      trace ? &trace->caches[i] : nullptr);
  }
  return x;
}

PoseVector predict(const Model& model, const Tensor<float>& input) {
  const Tensor<float> out = forward_layers(model, input, Mode::eval, 0, nullptr);
  if (out.size() != kPoseVectorLength) {
    throw DimensionError("model output has " + std::to_string(out.size()) + " values, expected 7");
  }
  PoseVector v{};
  for (std::size_t i = 0; i < kPoseVectorLength; ++i) v[i] = out[i];
  return v;
}

void backward(const Model& model, const ForwardTrace& trace, const Tensor<float>& output_grad,
              ModelGrads& grads) {
  if (trace.caches.size() != model.layers.size() || grads.size() != model.layers.size()) {
    throw DimensionError("backward: trace/gradient list does not match the model");
  }
  Tensor<float> g = output_grad;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    g = layer_backward(model.layers[i], trace.caches[i], g, &grads[i]);
  }
}

}  // namespace cnnmap
