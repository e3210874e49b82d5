#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

namespace cosmovae {

enum class Ordering : std::uint32_t { kRing = 0, kNested = 1 };

/// Full-sky scalar field on the equal-area grid. Values are held in ring order.
struct SphereMap {
  std::int64_t n_side = 0;
  Ordering ordering = Ordering::kRing;
  std::vector<double> values;
  std::optional<double> bad_value;

  std::int64_t npix() const { return 12 * n_side * n_side; }
  bool is_bad(std::size_t pixel) const {
    return bad_value.has_value() && values[pixel] == *bad_value;
  }
  bool operator==(const SphereMap&) const = default;
};

/// Binary mask on the same grid; 1 marks a missing (hole) pixel, 0 a clean one.
struct MaskMap {
  std::int64_t n_side = 0;
  Ordering ordering = Ordering::kRing;
  std::vector<std::uint8_t> values;

  std::int64_t npix() const { return 12 * n_side * n_side; }
  bool operator==(const MaskMap&) const = default;
};

enum class MapKind { kMap, kMask };
enum class MapFormat { kRaw, kFits };

/// Throws unless the map satisfies the grid and finiteness invariants.
void validate(const SphereMap& map);
void validate(const MaskMap& mask);

bool same_geometry(const SphereMap& map, const MaskMap& mask);

/// Returns a copy reordered to ring ordering.
SphereMap to_ring(SphereMap map);
MaskMap to_ring(MaskMap mask);

SphereMap make_constant_map(std::int64_t n_side, double value);
MaskMap make_empty_mask(std::int64_t n_side);

/// Reads either accepted format (detected from the leading bytes). The result
/// is validated and ring ordered.
std::variant<SphereMap, MaskMap> load_map(const std::filesystem::path& path, MapKind kind);
SphereMap load_sphere_map(const std::filesystem::path& path);
MaskMap load_mask_map(const std::filesystem::path& path);

void save_map(const std::filesystem::path& path, const SphereMap& map,
              MapFormat format = MapFormat::kRaw);
void save_map(const std::filesystem::path& path, const MaskMap& mask,
              MapFormat format = MapFormat::kRaw);

/// Format choice from the file extension: ".fits"/".fit" -> FITS, otherwise raw.
MapFormat format_for_path(const std::filesystem::path& path);

}  // namespace cosmovae
