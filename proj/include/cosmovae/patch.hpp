#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cosmovae/sphere_map.hpp"
#include "cosmovae/tensor.hpp"

namespace cosmovae {

/// Geometry of one flat patch cut from the sphere (plate carree).
struct PatchSpec {
  double center_lat_deg = 0.0;
  double center_lon_deg = 0.0;
  double lat_half_extent_deg = 5.0;
  double lon_half_extent_deg = 10.0;
  int height_px = 400;
  int width_px = 400;
  int patch_id = 0;

  bool operator==(const PatchSpec&) const = default;
};

enum class NormMode { kMinMax, kZScore };
enum class NormSource { kGlobalMap, kPerPatch };
enum class Interp { kNearest, kBilinear };

/// Affine map between physical and normalized units.
/// minmax: v' = (v - a) / (b - a); zscore: v' = (v - a) / b.
struct NormalizationRecord {
  NormMode mode = NormMode::kMinMax;
  double param_a = 0.0;
  double param_b = 1.0;
  NormSource source = NormSource::kGlobalMap;

  bool operator==(const NormalizationRecord&) const = default;
};

struct Patch {
  Image image;
  Mask mask;  // 1 = hole
  PatchSpec spec;
  NormalizationRecord norm;

  bool has_holes() const;
};

struct PatchGrid {
  std::vector<PatchSpec> specs;
  double lat_step_deg = 10.0;
  double lon_step_deg = 20.0;
  std::int64_t n_side = 0;  // geometry of the map the grid is meant for; 0 = unbound

  const PatchSpec* find(int patch_id) const;
};

struct SegmentOptions {
  NormMode norm_mode = NormMode::kMinMax;
  NormSource norm_source = NormSource::kGlobalMap;
  Interp interp = Interp::kNearest;
};

struct Segmentation {
  std::vector<Patch> train;  // no hole pixels
  std::vector<Patch> test;   // at least one hole pixel
};

void validate(const PatchSpec& spec);
void validate(const NormalizationRecord& record);

/// Sphere direction of the center of flat pixel (row, col); row 0 is the
/// southern edge of the patch, col 0 the western edge.
struct LatLon {
  double lat_deg;
  double lon_deg;
};
LatLon pixel_center(const PatchSpec& spec, int row, int col);

/// Centers on a lat-major, lon-minor lattice whose patches never cross a pole.
PatchGrid make_grid(double lat_step_deg, double lon_step_deg, const PatchSpec& patch_defaults,
                    std::int64_t n_side = 0);

Image project_patch(const SphereMap& map, const PatchSpec& spec, Interp interp);
Mask project_mask(const MaskMap& mask, const PatchSpec& spec);

/// Ring-order pixel index containing the center of flat pixel (row, col).
std::int64_t nearest_sphere_pixel(std::int64_t n_side, const PatchSpec& spec, int row, int col);

NormalizationRecord fit_normalization(std::span<const double> values, NormMode mode,
                                      NormSource source);
double normalize(double value, const NormalizationRecord& record);
double denormalize(double value, const NormalizationRecord& record);
std::vector<double> normalize(std::span<const double> values, const NormalizationRecord& record);
std::vector<double> denormalize(std::span<const double> values, const NormalizationRecord& record);

/// Cuts every grid cell from map and mask. Pixels carrying the map's bad-value
/// sentinel become holes with image value 0.
Segmentation segment(const SphereMap& map, const MaskMap& mask, const PatchGrid& grid,
                     const SegmentOptions& options = {});

/// Writes denormalized hole pixels of each patch back onto a copy of base.
/// Each hole flat pixel contributes to the sphere pixel containing its center;
/// a sphere pixel receiving several contributions takes their mean. All other
/// pixels are copied from base unchanged.
SphereMap reassemble(const SphereMap& base, std::span<const Patch> patches, const PatchGrid& grid);

}  // namespace cosmovae
