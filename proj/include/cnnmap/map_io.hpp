#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cnnmap/model.hpp"

namespace cnnmap {

// CNNMAP01 layout, all integers little-endian:
//
//   "CNNMAP01"  u32 version (=1)  u32 n  u32 layer_count
//   per layer descriptor:
//     u8 kind  u32 in_rank  u32 in_extent[in_rank]
//     u32 w_rank  u32 w_extent[w_rank]          (0 for parameterless layers)
//     u32 hyper[3]   conv: stride, pad, 0 / maxpool: window, stride, 0
//                    dropout: keep_prob bits (f32), 0, 0 / others: 0, 0, 0
//   payload, in layer order: f32 weights[numel(w_extent)]  f32 bias[w_extent[0]]
//
// Nothing depends on training history, so the byte length is a function
// of the architecture and n only.

inline constexpr std::uint32_t kMapVersion = 1;

std::vector<std::uint8_t> serialize_map(const Model& model);
/// Throws ParseError (with byte offset) or IntegrityError. `input_spec`
/// disambiguates kinds that share a channel count; it must match n.
Model deserialize_map(std::span<const std::uint8_t> bytes, std::optional<InputSpec> input_spec = std::nullopt);

void save_map(const Model& model, const std::filesystem::path& path);
Model load_map(const std::filesystem::path& path, std::optional<InputSpec> input_spec = std::nullopt);

std::size_t map_byte_size(const Model& model);

}  // namespace cnnmap
