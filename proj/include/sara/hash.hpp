// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace sara {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

std::uint32_t crc32(std::span<const unsigned char> bytes);

}  // namespace sara
