#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oflw3 {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView bytes);
// Accepts an optional 0x prefix and either case. Throws kInvalidArgument.
Bytes from_hex(std::string_view hex);

std::string base64_encode(ByteView bytes);
Bytes base64_decode(std::string_view text);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline void append(Bytes& out, ByteView more) {
  if (more.empty()) return;
  out.insert(out.end(), more.begin(), more.end());
}

template <typename T>
void put_le(Bytes& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename T>
void put_be(Bytes& out, T value, std::size_t width = sizeof(T)) {
  for (std::size_t i = width; i-- > 0;) {
    out.push_back(i < sizeof(T) ? static_cast<std::uint8_t>(value >> (8 * i))
                                : std::uint8_t{0});
  }
}

}  // namespace oflw3
