#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cnnmap/layers.hpp"
#include "cnnmap/pose.hpp"
#include "cnnmap/tensor.hpp"

namespace cnnmap {

enum class InputKind { gray, rgb, depth, pointcloud, rgbd, rgbpc };

/// Which channel stack feeds the network, and therefore conv1's filter depth.
struct InputSpec {
  InputKind kind = InputKind::rgb;

  std::size_t channels() const;
  std::string_view name() const;
  bool needs_color() const;
  bool needs_depth() const;

  /// Throws std::invalid_argument for unknown names.
  static InputSpec parse(std::string_view name);
  /// Default kind for a channel count (1 -> gray, 3 -> rgb, 4 -> rgbd,
  /// 6 -> rgbpc). Depth-only and point-cloud maps share n with gray and rgb.
  static std::optional<InputSpec> from_channels(std::size_t n);

  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

enum class CnnfScale { full, reduced };

std::string_view scale_name(CnnfScale scale);
CnnfScale parse_scale(std::string_view name);
std::size_t scale_input_size(CnnfScale scale);

struct ModelMeta {
  std::string architecture = "cnn-f";
  std::size_t epochs = 0;
  std::string dataset_tag;
};

/// The map: a fixed-shape pose regressor. Weights change with training, the
/// layer list and shapes never do.
struct Model {
  InputSpec input_spec;
  std::size_t input_size = 224;
  std::vector<Layer<float>> layers;
  ModelMeta meta;

  std::size_t input_channels() const { return input_spec.channels(); }
  Shape input_shape() const { return {input_channels(), input_size, input_size}; }
  /// Output shape of every layer in order; throws DimensionError on a broken chain.
  std::vector<Shape> layer_output_shapes() const;
  /// Checks conv1 depth == n, chained shapes and a 7-long output.
  /// Throws IntegrityError.
  void validate() const;
};

/// conv1 11x11xnx64/4 - pool - conv2 5x5x64x256 pad 2 - pool - conv3..5
/// 3x3x256x256 pad 1 - pool - full6 4096 - full7 4096 - full8 7, ReLU after
/// every conv and full6/full7. The reduced scale takes 64x64 input with a
/// quarter of the conv channels and 256-wide dense layers. Dropout after
/// full6/full7 is inserted only when `dropout_keep` < 1.
Model build_cnnf(InputSpec input_spec, CnnfScale scale, float dropout_keep = 1.0f);

std::size_t param_count(const Model& model);

struct HeInit {};
struct GaussianInit {
  double sigma = 0.01;
};
struct BlobInit {
  const Model* source = nullptr;
};
using InitScheme = std::variant<HeInit, GaussianInit, BlobInit>;

/// Random schemes zero the biases. BlobInit copies weights verbatim and
/// throws IntegrityError naming the first layer whose shapes differ.
void init_weights(Model& model, const InitScheme& scheme, std::uint64_t seed);

struct ForwardTrace {
  std::vector<LayerCache<float>> caches;
};

using ModelGrads = std::vector<LayerGrads<float>>;

/// Zeroed gradients shaped like the model's parameters.
ModelGrads make_grads(const Model& model);
void zero_grads(ModelGrads& grads);

/// Runs all layers. Throws DimensionError naming the expected channel
/// count when the input does not match.
Tensor<float> forward_layers(const Model& model, const Tensor<float>& input, Mode mode, std::uint64_t seed,
                             ForwardTrace* trace);

/// Eval-mode pose prediction [x, q] (q unnormalized).
PoseVector predict(const Model& model, const Tensor<float>& input);

/// Backpropagates `output_grad` through the traced forward pass, adding
/// parameter gradients into `grads`.
void backward(const Model& model, const ForwardTrace& trace, const Tensor<float>& output_grad,
              ModelGrads& grads);

}  // namespace cnnmap
