#include "oflw3/hash.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <memory>

#include "oflw3/error.hpp"

namespace oflw3 {

std::string Hash256::hex() const { return to_hex(bytes); }

Hash256 Hash256::from_hex(std::string_view hex) {
  const Bytes raw = oflw3::from_hex(hex);
  if (raw.size() != 32) {
    throw Error(Errc::kInvalidArgument, "expected 32-byte hex digest");
  }
  Hash256 h;
  std::copy(raw.begin(), raw.end(), h.bytes.begin());
  return h;
}

Hash256 sha256(ByteView data) {
  Hash256 out;
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.bytes.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != out.bytes.size()) {
    throw Error(Errc::kInvalidArgument, "sha256 failed");
  }
  return out;
}

}  // namespace oflw3
