#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cosmovae {

/// Self-describing container of named float64 arrays plus a JSON metadata tree.
///
/// Layout: "CVTA", u32 version, u64 header length, UTF-8 JSON header
/// {"meta": ..., "tensors": [{"name", "shape", "offset", "count"}]}, then the
/// little-endian payload; offsets count doubles from the payload start.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace cosmovae
