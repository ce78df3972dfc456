#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cnnmap/tensor.hpp"

namespace cnnmap {

/// Wire values are part of the map file format; do not renumber.
enum class LayerKind : std::uint8_t { conv = 1, maxpool = 2, relu = 3, dense = 4, dropout = 5, flatten = 6 };

std::string_view layer_kind_name(LayerKind kind);

struct ConvParams {
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t in_depth = 0;
  std::size_t filters = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

struct PoolParams {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct DenseParams {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
};

enum class Mode { train, eval };

/// One layer with its weights. Conv weights are (filters, in_depth, k_h, k_w)
/// with bias (filters); dense weights are (out_dim, in_dim) with bias (out_dim).
template <class T>
struct Layer {
  LayerKind kind = LayerKind::relu;
  std::string name;
  ConvParams conv;
  PoolParams pool;
  DenseParams dense;
  float keep_prob = 1.0f;  // dropout only
  Tensor<T> weights;
  Tensor<T> bias;

  static Layer make_conv(std::string name, ConvParams params);
  static Layer make_maxpool(std::string name, PoolParams params);
  static Layer make_relu(std::string name);
  static Layer make_dense(std::string name, DenseParams params);
  static Layer make_dropout(std::string name, float keep_prob);
  static Layer make_flatten(std::string name);

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::dense; }
  std::size_t param_count() const { return has_params() ? weights.size() + bias.size() : 0; }

  /// Throws DimensionError naming the layer and both shapes on mismatch.
  Shape output_shape(const Shape& input) const;

  template <class U>
  Layer<U> cast() const;
};

/// Everything backward needs from the matching forward call.
template <class T>
struct LayerCache {
  Shape input_shape;
  Tensor<T> input;                  // relu, dense
  std::vector<T> patches;           // conv: (out_h*out_w) x (in_depth*k_h*k_w)
  std::vector<std::uint32_t> argmax;  // maxpool: flat input index per output
  std::vector<std::uint8_t> mask;   // dropout
  Shape output_shape;
};

/// Parameter gradients; accumulated (+=) by layer_backward.
template <class T>
struct LayerGrads {
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Output extent of a sliding window: floor((in + 2 pad - window) / stride) + 1.
std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad);

/// `cache` may be null when no backward pass follows. Dropout draws its mask
/// from `seed` and is the identity in eval mode.
template <class T>
Tensor<T> layer_forward(const Layer<T>& layer, const Tensor<T>& input, Mode mode, std::uint64_t seed,
                        std::type_identity_t<LayerCache<T>>* cache);

/// Returns the input gradient and adds parameter gradients into `grads`
/// (sized on first use). `grads` may be null for parameterless layers.
template <class T>
Tensor<T> layer_backward(const Layer<T>& layer, const LayerCache<T>& cache, const Tensor<T>& upstream,
                         std::type_identity_t<LayerGrads<T>>* grads);

extern template struct Layer<float>;
extern template struct Layer<double>;

}  // namespace cnnmap
