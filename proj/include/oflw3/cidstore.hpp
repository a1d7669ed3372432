#pragma once

// Content-addressed blob store. A CID is the raw SHA-256 digest of the
// payload (no multihash framing). Blobs live one file per CID under the
// content root, named by the lowercase hex digest; every read re-hashes.

#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "oflw3/bytes.hpp"
#include "oflw3/hash.hpp"

namespace oflw3::cidstore {

struct Cid {
  Hash256 digest;

  std::string hex() const { return digest.hex(); }
  static Cid from_hex(std::string_view hex) { return {Hash256::from_hex(hex)}; }
  static Cid of(ByteView payload) { return {sha256(payload)}; }
  ByteView bytes() const { return digest.bytes; }

  auto operator<=>(const Cid&) const = default;
};

struct BlobInfo {
  Cid cid;
  std::uintmax_t size = 0;
  std::filesystem::file_time_type stored_at;
};

class CidStore {
 public:
  // Creates the directory if needed. Throws kStoreUnavailable.
  explicit CidStore(std::filesystem::path root);

  // Idempotent. Throws kStoreUnavailable.
  Cid put(ByteView payload);
  // Throws kNotFound, kIntegrityViolation, kStoreUnavailable.
  Bytes get(const Cid& cid) const;
  bool contains(const Cid& cid) const;
  BlobInfo stat(const Cid& cid) const;  // throws kNotFound
  std::size_t size() const;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_for(const Cid& cid) const;

 private:
  std::filesystem::path root_;
};

}  // namespace oflw3::cidstore
