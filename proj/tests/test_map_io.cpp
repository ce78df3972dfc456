#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "cnnmap/errors.hpp"
#include "cnnmap/map_io.hpp"
#include "test_util.hpp"

using namespace cnnmap;
using cnnmap::testing::random_tensor;
using cnnmap::testing::TempDir;

namespace {

Model trained_reduced(const char* kind, std::uint64_t seed) {
  Model m = build_cnnf(InputSpec::parse(kind), CnnfScale::reduced);
  init_weights(m, HeInit{}, seed);
  return m;
}

// Byte length from the documented layout, computed without the serializer.
std::size_t layout_size(const Model& m) {
  std::size_t bytes = 8 + 4 + 4 + 4;
  Shape in = m.input_shape();
  for (const auto& l : m.layers) {
    bytes += 1 + 4 + 4 * in.size() + 4 + (l.has_params() ? 4 * l.weights.rank() : 0) + 12;
    bytes += 4 * l.param_count();
    in = l.output_shape(in);
  }
  return bytes;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (std::uint32_t(b[at + 3]) << 24);
}

}  // namespace

TEST_CASE("header fields are little-endian") {
  const auto bytes = serialize_map(trained_reduced("rgbd", 1));
  CHECK(std::memcmp(bytes.data(), "CNNMAP01", 8) == 0);
  CHECK(read_u32(bytes, 8) == 1);
  CHECK(read_u32(bytes, 12) == 4);
  CHECK(read_u32(bytes, 16) == 19);
  CHECK(bytes[20] == 1);  // conv
}

TEST_CASE("round trip is bitwise on forward outputs") {
  TempDir dir;
  for (const char* kind : {"gray", "rgb", "rgbd", "rgbpc"}) {
    CAPTURE(kind);
    const Model m = trained_reduced(kind, 3);
    save_map(m, dir / "m.cnnmap");
    const Model back = load_map(dir / "m.cnnmap");
    CHECK(back.input_spec == m.input_spec);
    CHECK(back.input_size == m.input_size);
    REQUIRE(back.layers.size() == m.layers.size());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      CHECK(back.layers[i].weights == m.layers[i].weights);
      CHECK(back.layers[i].bias == m.layers[i].bias);
    }
    std::mt19937_64 rng(4);
    const auto x = random_tensor<float>(m.input_shape(), rng);
    CHECK(predict(back, x) == predict(m, x));
    CHECK(serialize_map(back) == serialize_map(m));
  }
}

TEST_CASE("dropout and keep probability survive the round trip") {
  Model m = build_cnnf(InputSpec::parse("rgb"), CnnfScale::reduced, 0.625f);
  init_weights(m, HeInit{}, 2);
  const Model back = deserialize_map(serialize_map(m));
  REQUIRE(back.layers.size() == m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(back.layers[i].kind == m.layers[i].kind);
    CHECK(back.layers[i].keep_prob == m.layers[i].keep_prob);
  }
}

TEST_CASE("input spec override for kinds sharing a channel count") {
  const Model m = trained_reduced("depth", 5);
  const auto bytes = serialize_map(m);
  CHECK(deserialize_map(bytes).input_spec == InputSpec::parse("gray"));
  CHECK(deserialize_map(bytes, InputSpec::parse("depth")).input_spec == InputSpec::parse("depth"));
  CHECK_THROWS_AS(deserialize_map(bytes, InputSpec::parse("rgb")), IntegrityError);
}

TEST_CASE("byte length is a pure function of the architecture") {
  const Model a = trained_reduced("rgb", 1);
  Model b = trained_reduced("rgb", 2);
  for (auto& l : b.layers)
    for (auto& w : l.weights.data()) w *= 3.5f;
  CHECK(serialize_map(a).size() == serialize_map(b).size());
  CHECK(serialize_map(a).size() == map_byte_size(a));
  CHECK(map_byte_size(a) == layout_size(a));
  CHECK(map_byte_size(a) == 906723);
  const Model full = build_cnnf(InputSpec::parse("rgb"), CnnfScale::full);
  CHECK(map_byte_size(full) == layout_size(full));
}

TEST_CASE("altered magic is a parse error at offset 0") {
  auto bytes = serialize_map(trained_reduced("rgb", 1));
  bytes[3] = 'X';
  try {
    deserialize_map(bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
    CHECK(e.unit() == ParseError::Unit::byte);
  }
}

TEST_CASE("unsupported version reports its offset") {
  auto bytes = serialize_map(trained_reduced("rgb", 1));
  bytes[8] = 2;
  try {
    deserialize_map(bytes);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 8);
  }
}

TEST_CASE("truncation anywhere is a parse error at or before the cut") {
  const auto bytes = serialize_map(trained_reduced("gray", 1));
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> cut(0, bytes.size() - 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = trial == 0 ? bytes.size() - 1 : cut(rng);
    CAPTURE(len);
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + len);
    try {
      deserialize_map(part);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() <= len);
    }
  }
}

TEST_CASE("trailing bytes are rejected") {
  auto bytes = serialize_map(trained_reduced("gray", 1));
  bytes.push_back(0);
  CHECK_THROWS_AS(deserialize_map(bytes), ParseError);
}

TEST_CASE("header n disagreeing with conv1 depth is an integrity error") {
  auto bytes = serialize_map(trained_reduced("rgb", 1));
  bytes[12] = 1;
  CHECK_THROWS_AS(deserialize_map(bytes), IntegrityError);
}

TEST_CASE("missing file is an I/O error") {
  TempDir dir;
  CHECK_THROWS_AS(load_map(dir / "absent.cnnmap"), IoError);
}
