#include "oflw3/cidstore.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <system_error>
#include <thread>

#include "oflw3/error.hpp"

namespace oflw3::cidstore {

namespace fs = std::filesystem;

namespace {

std::string temp_suffix() {
  static std::atomic<std::uint64_t> counter{0};
  std::ostringstream os;
  os << ".tmp." << std::this_thread::get_id() << '.' << counter.fetch_add(1);
  return os.str();
}

}  // namespace

CidStore::CidStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec || !fs::is_directory(root_)) {
    throw Error(Errc::kStoreUnavailable,
                "cannot create content root " + root_.string() + ": " + ec.message());
  }
}

fs::path CidStore::path_for(const Cid& cid) const { return root_ / cid.hex(); }

Cid CidStore::put(ByteView payload) {
  const Cid cid = Cid::of(payload);
  const fs::path target = path_for(cid);
  std::error_code ec;
  if (fs::exists(target, ec)) return cid;

  // Write-then-rename: a racing put of the same payload renames identical
  // bytes over the same name.
  const fs::path tmp = root_ / (cid.hex() + temp_suffix());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error(Errc::kStoreUnavailable, "write failed: " + tmp.string());
  }
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(Errc::kStoreUnavailable, "rename failed: " + target.string());
  }
  return cid;
}

Bytes CidStore::get(const Cid& cid) const {
  const fs::path path = path_for(cid);
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::error_code ec;
    if (!fs::exists(path, ec)) throw Error(Errc::kNotFound, "no blob " + cid.hex());
    throw Error(Errc::kStoreUnavailable, "cannot open " + path.string());
  }
  Bytes payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (Cid::of(payload) != cid) {
    throw Error(Errc::kIntegrityViolation, "stored bytes do not hash to " + cid.hex());
  }
  return payload;
}

bool CidStore::contains(const Cid& cid) const {
  std::error_code ec;
  return fs::exists(path_for(cid), ec);
}

BlobInfo CidStore::stat(const Cid& cid) const {
  std::error_code ec;
  const fs::path path = path_for(cid);
  const auto size = fs::file_size(path, ec);
  if (ec) throw Error(Errc::kNotFound, "no blob " + cid.hex());
  return {cid, size, fs::last_write_time(path, ec)};
}

std::size_t CidStore::size() const {
  std::size_t n = 0;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    const auto name = entry.path().filename().string();
    if (name.size() == 64 && name.find('.') == std::string::npos) ++n;
  }
  return n;
}

}  // namespace oflw3::cidstore
