#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsedit {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws FormatError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Little-endian float32 packing used by the guidance wire format and the
/// anchor block of the scene sidecar.
std::vector<std::uint8_t> pack_f32_le(std::span<const double> values);
std::vector<double> unpack_f32_le(std::span<const std::uint8_t> bytes);

}  // namespace gsedit
