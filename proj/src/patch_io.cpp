#include "cosmovae/patch_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "cosmovae/error.hpp"

namespace cosmovae {
namespace {

using nlohmann::json;

constexpr char kArrayMagic[4] = {'P', 'A', 'R', 'R'};

template <typename T>
void write_array(const std::filesystem::path& path, const Array2D<T>& a, std::uint32_t dtype) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  const auto rows = static_cast<std::uint32_t>(a.rows());
  const auto cols = static_cast<std::uint32_t>(a.cols());
  out.write(kArrayMagic, 4);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(&dtype), 4);
  out.write(reinterpret_cast<const char*>(a.values().data()),
            static_cast<std::streamsize>(a.size() * sizeof(T)));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

template <typename T>
Array2D<T> read_array(const std::filesystem::path& path, std::uint32_t dtype) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kArrayMagic, 4) == 0,
          ErrorCode::kMalformedHeader, "not an array file: " + path.string());
  std::uint32_t header[3];
  std::memcpy(header, bytes.data() + 4, 12);
  require(header[2] == dtype, ErrorCode::kMalformedHeader, "unexpected dtype in " + path.string());
  Array2D<T> a(static_cast<int>(header[0]), static_cast<int>(header[1]));
  require(bytes.size() - 16 == a.size() * sizeof(T), ErrorCode::kLengthMismatch,
          "array payload size mismatch in " + path.string());
  std::memcpy(a.values().data(), bytes.data() + 16, a.size() * sizeof(T));
  return a;
}

const char* mode_name(NormMode m) { return m == NormMode::kMinMax ? "minmax" : "zscore"; }
const char* source_name(NormSource s) {
  return s == NormSource::kGlobalMap ? "global-map" : "per-patch";
}

json spec_to_json(const PatchSpec& s) {
  return {{"patch_id", s.patch_id},
          {"center_lat_deg", s.center_lat_deg},
          {"center_lon_deg", s.center_lon_deg},
          {"lat_half_extent_deg", s.lat_half_extent_deg},
          {"lon_half_extent_deg", s.lon_half_extent_deg},
          {"height_px", s.height_px},
          {"width_px", s.width_px}};
}

PatchSpec spec_from_json(const json& j) {
  PatchSpec s;
  s.patch_id = j.at("patch_id").get<int>();
  s.center_lat_deg = j.at("center_lat_deg").get<double>();
  s.center_lon_deg = j.at("center_lon_deg").get<double>();
  s.lat_half_extent_deg = j.at("lat_half_extent_deg").get<double>();
  s.lon_half_extent_deg = j.at("lon_half_extent_deg").get<double>();
  s.height_px = j.at("height_px").get<int>();
  s.width_px = j.at("width_px").get<int>();
  return s;
}

std::string file_stem(int patch_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "patch_%06d", patch_id);
  return buf;
}

}  // namespace

void save_array(const std::filesystem::path& path, const Image& image) {
  write_array(path, image, 0);
}
void save_array(const std::filesystem::path& path, const Mask& mask) { write_array(path, mask, 1); }
Image load_image_array(const std::filesystem::path& path) { return read_array<double>(path, 0); }
Mask load_mask_array(const std::filesystem::path& path) {
  Mask m = read_array<std::uint8_t>(path, 1);
  for (auto v : m.values()) require(v <= 1, ErrorCode::kNonBinaryMask, "non-binary mask array");
  return m;
}

void save_bundle(const std::filesystem::path& dir, const std::vector<Patch>& patches,
                 const PatchGrid& grid) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "cosmovae-patch-bundle";
  manifest["version"] = 1;
  manifest["grid"] = {{"lat_step_deg", grid.lat_step_deg},
                      {"lon_step_deg", grid.lon_step_deg},
                      {"n_side", grid.n_side},
                      {"specs", json::array()}};
  for (const auto& s : grid.specs) manifest["grid"]["specs"].push_back(spec_to_json(s));
  manifest["patches"] = json::array();
  for (const Patch& p : patches) {
    const std::string stem = file_stem(p.spec.patch_id);
    save_array(dir / (stem + "_image.bin"), p.image);
    save_array(dir / (stem + "_mask.bin"), p.mask);
    json entry = spec_to_json(p.spec);
    entry["image"] = stem + "_image.bin";
    entry["mask"] = stem + "_mask.bin";
    entry["norm"] = {{"mode", mode_name(p.norm.mode)},
                     {"param_a", p.norm.param_a},
                     {"param_b", p.norm.param_b},
                     {"source", source_name(p.norm.source)}};
    manifest["patches"].push_back(entry);
  }
  std::ofstream out(dir / "manifest.json");
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

PatchBundle load_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  require(static_cast<bool>(in), ErrorCode::kIo, "no bundle manifest at " + manifest_path.string());
  PatchBundle bundle;
  try {
    const json manifest = json::parse(in);
    require(manifest.at("format") == "cosmovae-patch-bundle", ErrorCode::kMalformedHeader,
            "not a patch bundle manifest");
    const json& g = manifest.at("grid");
    bundle.grid.lat_step_deg = g.at("lat_step_deg").get<double>();
    bundle.grid.lon_step_deg = g.at("lon_step_deg").get<double>();
    bundle.grid.n_side = g.at("n_side").get<std::int64_t>();
    for (const auto& s : g.at("specs")) bundle.grid.specs.push_back(spec_from_json(s));
    for (const auto& e : manifest.at("patches")) {
      Patch p;
      p.spec = spec_from_json(e);
      p.image = load_image_array(dir / e.at("image").get<std::string>());
      p.mask = load_mask_array(dir / e.at("mask").get<std::string>());
      require(p.image.rows() == p.spec.height_px && p.image.cols() == p.spec.width_px &&
                  p.mask.same_shape(p.image),
              ErrorCode::kShapeMismatch, "bundle arrays disagree with manifest shape");
      const json& n = e.at("norm");
      p.norm.mode = n.at("mode") == "zscore" ? NormMode::kZScore : NormMode::kMinMax;
      p.norm.source = n.at("source") == "per-patch" ? NormSource::kPerPatch : NormSource::kGlobalMap;
      p.norm.param_a = n.at("param_a").get<double>();
      p.norm.param_b = n.at("param_b").get<double>();
      validate(p.norm);
      bundle.patches.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedHeader, std::string("bad bundle manifest: ") + e.what());
  }
  return bundle;
}

}  // namespace cosmovae
