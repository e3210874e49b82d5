#include "cosmovae/archive.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "cosmovae/error.hpp"

namespace cosmovae {
namespace {

constexpr char kMagic[4] = {'C', 'V', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

std::size_t element_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

}  // namespace

const NamedArray* Archive::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : archive.arrays) {
    require(element_count(a.shape) == a.data.size(), ErrorCode::kShapeMismatch,
            "array " + a.name + " does not match its shape");
    header["tensors"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
    offset += a.data.size();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 4) == 0,
          ErrorCode::kCorruptArchive, "not a tensor archive: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&len, bytes.data() + 8, 8);
  require(version == kVersion, ErrorCode::kCorruptArchive, "unsupported archive version");
  require(16 + len <= bytes.size(), ErrorCode::kCorruptArchive, "archive header truncated");
  Archive archive;
  const std::size_t payload = 16 + static_cast<std::size_t>(len);
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(payload));
    archive.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      NamedArray a;
      a.name = t.at("name").get<std::string>();
      a.shape = t.at("shape").get<std::vector<int>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      require(count == element_count(a.shape), ErrorCode::kCorruptArchive,
              "array " + a.name + " count disagrees with shape");
      require(payload + (offset + count) * sizeof(double) <= bytes.size(),
              ErrorCode::kCorruptArchive, "array " + a.name + " runs past end of file");
      a.data.resize(count);
      std::memcpy(a.data.data(), bytes.data() + payload + offset * sizeof(double),
                  count * sizeof(double));
      archive.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptArchive, std::string("bad archive header: ") + e.what());
  }
  return archive;
}

}  // namespace cosmovae
