#include "cnnmap/map_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cnnmap/errors.hpp"

namespace cnnmap {

namespace {

constexpr char kMagic[8] = {'C', 'N', 'N', 'M', 'A', 'P', '0', '1'};
constexpr std::uint32_t kMaxRank = 8;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void extents(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (auto e : s) u32(static_cast<std::uint32_t>(e));
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError("map file truncated while reading " + std::string(what) + " at byte offset " +
                           std::to_string(pos_),
                       pos_, ParseError::Unit::byte);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  Shape extents(const char* what) {
    const std::size_t at = pos_;
    const std::uint32_t rank = u32(what);
    if (rank > kMaxRank) fail("implausible rank " + std::to_string(rank) + " for " + what, at);
    Shape s(rank);
    for (auto& e : s) {
      const std::size_t eat = pos_;
      e = u32(what);
      if (e == 0) fail(std::string("zero extent in ") + what, eat);
    }
    return s;
  }
  void floats(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (auto& v : out) v = f32(what);
  }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError(msg + " at byte offset " + std::to_string(at), at, ParseError::Unit::byte);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Descriptor {
  LayerKind kind;
  Shape in_shape;
  Shape w_shape;
  std::uint32_t hyper[3];
  std::size_t offset;
};

}  // namespace

std::vector<std::uint8_t> serialize_map(const Model& model) {
  model.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kMapVersion);
  w.u32(static_cast<std::uint32_t>(model.input_channels()));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));

  Shape in = model.input_shape();
  for (const auto& layer : model.layers) {
    w.u8(static_cast<std::uint8_t>(layer.kind));
    w.extents(in);
    if (layer.has_params()) {
      w.extents(layer.weights.shape());
    } else {
      w.u32(0);
    }
    std::uint32_t hyper[3] = {0, 0, 0};
    if (layer.kind == LayerKind::conv) {
      hyper[0] = static_cast<std::uint32_t>(layer.conv.stride);
      hyper[1] = static_cast<std::uint32_t>(layer.conv.pad);
    } else if (layer.kind == LayerKind::maxpool) {
      hyper[0] = static_cast<std::uint32_t>(layer.pool.window);
      hyper[1] = static_cast<std::uint32_t>(layer.pool.stride);
    } else if (layer.kind == LayerKind::dropout) {
      hyper[0] = std::bit_cast<std::uint32_t>(layer.keep_prob);
    }
    for (auto h : hyper) w.u32(h);
    in = layer.output_shape(in);
  }
  for (const auto& layer : model.layers) {
    if (!layer.has_params()) continue;
    for (float v : layer.weights.data()) w.f32(v);
    for (float v : layer.bias.data()) w.f32(v);
  }
  return w.take();
}

Model deserialize_map(std::span<const std::uint8_t> bytes, std::optional<InputSpec> input_spec) {
  Reader r(bytes);
  r.need(sizeof kMagic, "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) r.fail("bad magic (expected CNNMAP01)", 0);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8("magic");

  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kMapVersion) r.fail("unsupported map version " + std::to_string(version), version_at);
  const std::size_t n_at = r.offset();
  const std::uint32_t n = r.u32("channel count");
  const std::size_t count_at = r.offset();
  const std::uint32_t layer_count = r.u32("layer count");
  if (layer_count == 0 || layer_count > 1024) {
    r.fail("implausible layer count " + std::to_string(layer_count), count_at);
  }

  std::vector<Descriptor> descs(layer_count);
  for (auto& d : descs) {
    d.offset = r.offset();
    const std::uint8_t kind = r.u8("layer kind");
    if (kind < 1 || kind > 6) r.fail("unknown layer kind tag " + std::to_string(kind), d.offset);
    d.kind = static_cast<LayerKind>(kind);
    d.in_shape = r.extents("layer input shape");
    d.w_shape = r.extents("weight shape");
    for (auto& h : d.hyper) h = r.u32("layer hyperparameters");
  }

  Model model;
  if (input_spec) {
    if (input_spec->channels() != n) {
      throw IntegrityError("input kind '" + std::string(input_spec->name()) + "' has " +
                           std::to_string(input_spec->channels()) + " channels but the map header says n=" +
                           std::to_string(n));
    }
    model.input_spec = *input_spec;
  } else {
    auto spec = InputSpec::from_channels(n);
    if (!spec) r.fail("unsupported channel count n=" + std::to_string(n), n_at);
    model.input_spec = *spec;
  }

  const Shape& first_in = descs.front().in_shape;
  if (first_in.size() != 3 || first_in[1] != first_in[2]) {
    r.fail("first layer input must be n x S x S, got " + shape_str(first_in), descs.front().offset);
  }
  if (first_in[0] != n) {
    throw IntegrityError("header n=" + std::to_string(n) + " does not match first layer input " +
                         shape_str(first_in));
  }
  model.input_size = first_in[1];

  for (std::size_t i = 0; i < descs.size(); ++i) {
    const Descriptor& d = descs[i];
    const std::string name = std::string(layer_kind_name(d.kind)) + std::to_string(i);
    auto bad_weights = [&] {
      throw IntegrityError("layer " + std::to_string(i) + " weight shape " + shape_str(d.w_shape) +
                           " does not fit kind " + std::string(layer_kind_name(d.kind)) + " with input " +
                           shape_str(d.in_shape));
    };
    Layer<float> layer;
    switch (d.kind) {
      case LayerKind::conv:
        if (d.w_shape.size() != 4 || d.in_shape.empty()) bad_weights();
        if (d.hyper[0] == 0) r.fail("conv stride must be >= 1", d.offset);
        layer = Layer<float>::make_conv(name, {d.w_shape[2], d.w_shape[3], d.w_shape[1], d.w_shape[0],
                                               d.hyper[0], d.hyper[1]});
        break;
      case LayerKind::dense:
        if (d.w_shape.size() != 2) bad_weights();
        layer = Layer<float>::make_dense(name, {d.w_shape[1], d.w_shape[0]});
        break;
      case LayerKind::maxpool:
        if (!d.w_shape.empty()) bad_weights();
        if (d.hyper[0] == 0 || d.hyper[1] == 0) r.fail("maxpool window/stride must be >= 1", d.offset);
        layer = Layer<float>::make_maxpool(name, {d.hyper[0], d.hyper[1]});
        break;
      case LayerKind::dropout: {
        if (!d.w_shape.empty()) bad_weights();
        const float keep = std::bit_cast<float>(d.hyper[0]);
        if (!(keep > 0.0f && keep <= 1.0f)) r.fail("dropout keep probability out of range", d.offset);
        layer = Layer<float>::make_dropout(name, keep);
        break;
      }
      case LayerKind::relu:
        if (!d.w_shape.empty()) bad_weights();
        layer = Layer<float>::make_relu(name);
        break;
      case LayerKind::flatten:
        if (!d.w_shape.empty()) bad_weights();
        layer = Layer<float>::make_flatten(name);
        break;
    }
    model.layers.push_back(std::move(layer));
  }

  // Declared input shapes must chain with computed outputs.
  Shape current = model.input_shape();
  for (std::size_t i = 0; i < descs.size(); ++i) {
    if (descs[i].in_shape != current) {
      throw IntegrityError("layer " + std::to_string(i) + " declares input " + shape_str(descs[i].in_shape) +
                           " but receives " + shape_str(current));
    }
    try {
      current = model.layers[i].output_shape(current);
    } catch (const DimensionError& e) {
      throw IntegrityError(e.what());
    }
  }
  model.validate();

  for (auto& layer : model.layers) {
    if (!layer.has_params()) continue;
    r.floats(layer.weights.data(), "weights");
    r.floats(layer.bias.data(), "biases");
  }
  if (!r.at_end()) r.fail("trailing bytes after weight payload", r.offset());
  if (model.input_size == scale_input_size(CnnfScale::full)) {
    model.meta.architecture = "cnn-f";
  } else if (model.input_size == scale_input_size(CnnfScale::reduced)) {
    model.meta.architecture = "cnn-f-reduced";
  } else {
    model.meta.architecture = "cnn-f-" + std::to_string(model.input_size);
  }
  return model;
}

void save_map(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_map(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Model load_map(const std::filesystem::path& path, std::optional<InputSpec> input_spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open map file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_map(bytes, input_spec);
}

std::size_t map_byte_size(const Model& model) {
  std::size_t size = sizeof kMagic + 12;
  Shape in = model.input_shape();
  for (const auto& layer : model.layers) {
    size += 1 + 4 + 4 * in.size() + 4 + (layer.has_params() ? 4 * layer.weights.rank() : 0) + 12;
    size += 4 * layer.param_count();
    in = layer.output_shape(in);
  }
  return size;
}

}  // namespace cnnmap
