#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace voxharm {

/// Lower-case hex SHA-256 of a byte array.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace voxharm
