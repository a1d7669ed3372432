#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "oflw3/bytes.hpp"

namespace oflw3 {

// 256-bit digest. SHA-256 is the single hash primitive of the project: CIDs,
// transaction hashes, contract addresses and method selectors all use it.
struct Hash256 {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const;
  static Hash256 from_hex(std::string_view hex);

  auto operator<=>(const Hash256&) const = default;
};

Hash256 sha256(ByteView data);
inline Hash256 sha256(std::string_view text) { return sha256(as_bytes(text)); }

}  // namespace oflw3
