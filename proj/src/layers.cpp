#include "cnnmap/layers.hpp"

#include <algorithm>
#include <random>

#include "cnnmap/errors.hpp"
#include "cnnmap/kernels.hpp"

namespace cnnmap {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::maxpool:
      return "maxpool";
    case LayerKind::relu:
      return "relu";
    case LayerKind::dense:
      return "dense";
    case LayerKind::dropout:
      return "dropout";
    case LayerKind::flatten:
      return "flatten";
  }
  return "unknown";
}

std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - window) / stride + 1;
}

namespace {

[[noreturn]] void shape_error(const std::string& layer, const std::string& detail, const Shape& expected,
                              const Shape& actual) {
  throw DimensionError("layer '" + layer + "': " + detail + " (expected " + shape_str(expected) + ", got " +
                       shape_str(actual) + ")");
}

}  // namespace

template <class T>
Layer<T> Layer<T>::make_conv(std::string name, ConvParams params) {
  if (params.stride < 1) throw DimensionError("layer '" + name + "': stride must be >= 1");
  Layer layer;
  layer.kind = LayerKind::conv;
  layer.name = std::move(name);
  layer.conv = params;
  layer.weights = Tensor<T>({params.filters, params.in_depth, params.kernel_h, params.kernel_w});
  layer.bias = Tensor<T>({params.filters});
  return layer;
}

template <class T>
Layer<T> Layer<T>::make_maxpool(std::string name, PoolParams params) {
  if (params.stride < 1 || params.window < 1) {
    throw DimensionError("layer '" + name + "': pool window and stride must be >= 1");
  }
  Layer layer;
  layer.kind = LayerKind::maxpool;
  layer.name = std::move(name);
  layer.pool = params;
  return layer;
}

template <class T>
Layer<T> Layer<T>::make_relu(std::string name) {
  Layer layer;
  layer.kind = LayerKind::relu;
  layer.name = std::move(name);
  return layer;
}

template <class T>
Layer<T> Layer<T>::make_dense(std::string name, DenseParams params) {
  Layer layer;
  layer.kind = LayerKind::dense;
  layer.name = std::move(name);
  layer.dense = params;
  layer.weights = Tensor<T>({params.out_dim, params.in_dim});
  layer.bias = Tensor<T>({params.out_dim});
  return layer;
}

template <class T>
Layer<T> Layer<T>::make_dropout(std::string name, float keep_prob) {
  if (!(keep_prob > 0.0f && keep_prob <= 1.0f)) {
    throw DimensionError("layer '" + name + "': dropout keep probability must be in (0, 1]");
  }
  Layer layer;
  layer.kind = LayerKind::dropout;
  layer.name = std::move(name);
  layer.keep_prob = keep_prob;
  return layer;
}

template <class T>
Layer<T> Layer<T>::make_flatten(std::string name) {
  Layer layer;
  layer.kind = LayerKind::flatten;
  layer.name = std::move(name);
  return layer;
}

template <class T>
Shape Layer<T>::output_shape(const Shape& input) const {
  switch (kind) {
    case LayerKind::conv: {
      if (input.size() != 3 || input[0] != conv.in_depth) {
        shape_error(name, "conv input must be in_depth x H x W", {conv.in_depth, 0, 0}, input);
      }
      if (input[1] + 2 * conv.pad < conv.kernel_h || input[2] + 2 * conv.pad < conv.kernel_w) {
        shape_error(name, "spatial extent smaller than the filter after padding",
                    {conv.in_depth, conv.kernel_h, conv.kernel_w}, input);
      }
      return {conv.filters, window_output_extent(input[1], conv.kernel_h, conv.stride, conv.pad),
              window_output_extent(input[2], conv.kernel_w, conv.stride, conv.pad)};
    }
    case LayerKind::maxpool: {
      if (input.size() != 3 || input[1] < pool.window || input[2] < pool.window) {
        shape_error(name, "maxpool input must be C x H x W with H, W >= window", {0, pool.window, pool.window},
                    input);
      }
      return {input[0], window_output_extent(input[1], pool.window, pool.stride, 0),
              window_output_extent(input[2], pool.window, pool.stride, 0)};
    }
    case LayerKind::dense: {
      if (shape_numel(input) != dense.in_dim) {
        shape_error(name, "dense input length must equal in_dim", {dense.in_dim}, input);
      }
      return {dense.out_dim};
    }
    case LayerKind::flatten:
      return {shape_numel(input)};
    case LayerKind::relu:
    case LayerKind::dropout:
      return input;
  }
  return input;
}

template <class T>
template <class U>
Layer<U> Layer<T>::cast() const {
  Layer<U> out;
  out.kind = kind;
  out.name = name;
  out.conv = conv;
  out.pool = pool;
  out.dense = dense;
  out.keep_prob = keep_prob;
  if (!weights.empty()) out.weights = weights.template cast<U>();
  if (!bias.empty()) out.bias = bias.template cast<U>();
  return out;
}

namespace {

template <class T>
Tensor<T> conv_forward(const Layer<T>& layer, const Tensor<T>& input, const Shape& out_shape,
                       LayerCache<T>* cache) {
  const ConvParams& p = layer.conv;
  const std::size_t in_h = input.dim(1), in_w = input.dim(2);
  const std::size_t out_h = out_shape[1], out_w = out_shape[2];
  const std::size_t patch_len = p.in_depth * p.kernel_h * p.kernel_w;
  const std::size_t positions = out_h * out_w;

  std::vector<T> patches(positions * patch_len, T{0});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      T* row = patches.data() + (oy * out_w + ox) * patch_len;
      for (std::size_t c = 0; c < p.in_depth; ++c) {
        for (std::size_t i = 0; i < p.kernel_h; ++i) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * p.stride + i) - static_cast<std::ptrdiff_t>(p.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(in_h)) continue;
          const T* src = input.raw() + (c * in_h + static_cast<std::size_t>(y)) * in_w;
          T* dst = row + (c * p.kernel_h + i) * p.kernel_w;
          for (std::size_t j = 0; j < p.kernel_w; ++j) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * p.stride + j) - static_cast<std::ptrdiff_t>(p.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(in_w)) dst[j] = src[x];
          }
        }
      }
    }
  }

  Tensor<T> out(out_shape);
  for (std::size_t f = 0; f < p.filters; ++f) {
    std::span<const T> filter = layer.weights.data().subspan(f * patch_len, patch_len);
    T* dst = out.raw() + f * positions;
    const T b = layer.bias[f];
    for (std::size_t pos = 0; pos < positions; ++pos) {
      dst[pos] = kernels::dot<T>(filter, std::span<const T>(patches.data() + pos * patch_len, patch_len)) + b;
    }
  }
  if (cache) cache->patches = std::move(patches);
  return out;
}

template <class T>
Tensor<T> conv_backward(const Layer<T>& layer, const LayerCache<T>& cache, const Tensor<T>& upstream,
                        LayerGrads<T>* grads) {
  const ConvParams& p = layer.conv;
  const std::size_t in_h = cache.input_shape[1], in_w = cache.input_shape[2];
  const std::size_t out_h = cache.output_shape[1], out_w = cache.output_shape[2];
  const std::size_t patch_len = p.in_depth * p.kernel_h * p.kernel_w;
  const std::size_t positions = out_h * out_w;
  if (cache.patches.size() != positions * patch_len) {
    throw DimensionError("layer '" + layer.name + "': conv cache does not match the layer");
  }

  std::vector<T> patch_grads(positions * patch_len, T{0});
  for (std::size_t f = 0; f < p.filters; ++f) {
    const T* up = upstream.raw() + f * positions;
    std::span<const T> filter = layer.weights.data().subspan(f * patch_len, patch_len);
    std::span<T> filter_grad = grads->weights.data().subspan(f * patch_len, patch_len);
    T bias_grad = T{0};
    for (std::size_t pos = 0; pos < positions; ++pos) {
      const T g = up[pos];
      if (g == T{0}) continue;
      bias_grad += g;
      kernels::axpy<T>(g, std::span<const T>(cache.patches.data() + pos * patch_len, patch_len), filter_grad);
      kernels::axpy<T>(g, filter, std::span<T>(patch_grads.data() + pos * patch_len, patch_len));
    }
    grads->bias[f] += bias_grad;
  }

  Tensor<T> input_grad(cache.input_shape);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const T* row = patch_grads.data() + (oy * out_w + ox) * patch_len;
      for (std::size_t c = 0; c < p.in_depth; ++c) {
        for (std::size_t i = 0; i < p.kernel_h; ++i) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * p.stride + i) - static_cast<std::ptrdiff_t>(p.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(in_h)) continue;
          T* dst = input_grad.raw() + (c * in_h + static_cast<std::size_t>(y)) * in_w;
          const T* src = row + (c * p.kernel_h + i) * p.kernel_w;
          for (std::size_t j = 0; j < p.kernel_w; ++j) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * p.stride + j) - static_cast<std::ptrdiff_t>(p.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(in_w)) dst[x] += src[j];
          }
        }
      }
    }
  }
  return input_grad;
}

template <class T>
Tensor<T> maxpool_forward(const Layer<T>& layer, const Tensor<T>& input, const Shape& out_shape,
                          LayerCache<T>* cache) {
  const std::size_t channels = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  const std::size_t out_h = out_shape[1], out_w = out_shape[2];
  const std::size_t window = layer.pool.window, stride = layer.pool.stride;
  Tensor<T> out(out_shape);
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        std::size_t best = (c * in_h + oy * stride) * in_w + ox * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (c * in_h + oy * stride + i) * in_w + ox * stride + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (c * out_h + oy) * out_w + ox;
        out[o] = input[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (cache) cache->argmax = std::move(argmax);
  return out;
}

std::vector<std::uint8_t> dropout_mask(std::size_t n, float keep_prob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> mask(n);
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < keep_prob ? 1 : 0;
  }
  return mask;
}

}  // namespace

template <class T>
Tensor<T> layer_forward(const Layer<T>& layer, const Tensor<T>& input, Mode mode, std::uint64_t seed,
                        std::type_identity_t<LayerCache<T>>* cache) {
  const Shape out_shape = layer.output_shape(input.shape());
  if (cache) {
    *cache = LayerCache<T>{};
    cache->input_shape = input.shape();
    cache->output_shape = out_shape;
  }
  switch (layer.kind) {
    case LayerKind::conv:
      return conv_forward(layer, input, out_shape, cache);
    case LayerKind::maxpool:
      return maxpool_forward(layer, input, out_shape, cache);
    case LayerKind::relu: {
      Tensor<T> out = input;
      for (auto& v : out.data()) v = v > T{0} ? v : T{0};
      if (cache) cache->input = input;
      return out;
    }
    case LayerKind::dense: {
      Tensor<T> out(out_shape);
      const std::size_t in_dim = layer.dense.in_dim;
      for (std::size_t o = 0; o < layer.dense.out_dim; ++o) {
        out[o] = kernels::dot<T>(layer.weights.data().subspan(o * in_dim, in_dim), input.data()) + layer.bias[o];
      }
      if (cache) cache->input = input;
      return out;
    }
    case LayerKind::dropout: {
      Tensor<T> out = input;
      if (mode == Mode::train && layer.keep_prob < 1.0f) {
        auto mask = dropout_mask(input.size(), layer.keep_prob, seed);
        const T scale = T{1} / static_cast<T>(layer.keep_prob);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? out[i] * scale : T{0};
        if (cache) cache->mask = std::move(mask);
      }
      return out;
    }
    case LayerKind::flatten: {
      Tensor<T> out = input;
      out.reshape(out_shape);
      return out;
    }
  }
  return input;
}

template <class T>
Tensor<T> layer_backward(const Layer<T>& layer, const LayerCache<T>& cache, const Tensor<T>& upstream,
                         std::type_identity_t<LayerGrads<T>>* grads) {
  if (upstream.shape() != cache.output_shape) {
    shape_error(layer.name, "upstream gradient does not match forward output", cache.output_shape,
                upstream.shape());
  }
  if (layer.has_params()) {
    if (!grads) throw DimensionError("layer '" + layer.name + "': parameter gradients required");
    if (grads->weights.shape() != layer.weights.shape()) grads->weights = Tensor<T>(layer.weights.shape());
    if (grads->bias.shape() != layer.bias.shape()) grads->bias = Tensor<T>(layer.bias.shape());
  }
  switch (layer.kind) {
    case LayerKind::conv:
      return conv_backward(layer, cache, upstream, grads);
    case LayerKind::maxpool: {
      Tensor<T> input_grad(cache.input_shape);
      for (std::size_t o = 0; o < upstream.size(); ++o) input_grad[cache.argmax[o]] += upstream[o];
      return input_grad;
    }
    case LayerKind::relu: {
      Tensor<T> input_grad = upstream;
      for (std::size_t i = 0; i < input_grad.size(); ++i) {
        if (!(cache.input[i] > T{0})) input_grad[i] = T{0};
      }
      return input_grad;
    }
    case LayerKind::dense: {
      const std::size_t in_dim = layer.dense.in_dim;
      Tensor<T> input_grad(cache.input_shape);
      for (std::size_t o = 0; o < layer.dense.out_dim; ++o) {
        const T g = upstream[o];
        if (g == T{0}) continue;
        kernels::axpy<T>(g, cache.input.data(), grads->weights.data().subspan(o * in_dim, in_dim));
        kernels::axpy<T>(g, layer.weights.data().subspan(o * in_dim, in_dim), input_grad.data());
        grads->bias[o] += g;
      }
      return input_grad;
    }
    case LayerKind::dropout: {
      Tensor<T> input_grad = upstream;
      if (!cache.mask.empty()) {
        const T scale = T{1} / static_cast<T>(layer.keep_prob);
        for (std::size_t i = 0; i < input_grad.size(); ++i) {
          input_grad[i] = cache.mask[i] ? input_grad[i] * scale : T{0};
        }
      }
      return input_grad;
    }
    case LayerKind::flatten: {
      Tensor<T> input_grad = upstream;
      input_grad.reshape(cache.input_shape);
      return input_grad;
    }
  }
  return upstream;
}

template struct Layer<float>;
template struct Layer<double>;
template Layer<double> Layer<float>::cast<double>() const;
template Layer<float> Layer<double>::cast<float>() const;
template Layer<float> Layer<float>::cast<float>() const;

template Tensor<float> layer_forward(const Layer<float>&, const Tensor<float>&, Mode, std::uint64_t,
                                     LayerCache<float>*);
template Tensor<double> layer_forward(const Layer<double>&, const Tensor<double>&, Mode, std::uint64_t,
                                      LayerCache<double>*);
template Tensor<float> layer_backward(const Layer<float>&, const LayerCache<float>&, const Tensor<float>&,
                                      LayerGrads<float>*);
template Tensor<double> layer_backward(const Layer<double>&, const LayerCache<double>&, const Tensor<double>&,
                                       LayerGrads<double>*);

}  // namespace cnnmap
