#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace eri {

/// CRC-32 with the IEEE 802.3 polynomial.
std::uint32_t crc32(std::string_view bytes);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace eri
