#include "cosmovae/patch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cosmovae/error.hpp"
#include "cosmovae/healpix.hpp"

namespace cosmovae {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kAngleTol = 1e-9;

double wrap_lon(double lon) {
  double l = std::fmod(lon, 360.0);
  if (l < 0.0) l += 360.0;
  if (l >= 360.0) l = 0.0;
  return l;
}

healpix::Angles to_angles(LatLon ll) {
  const double theta = std::clamp((90.0 - ll.lat_deg) * kDeg, 0.0, std::numbers::pi);
  return {theta, wrap_lon(ll.lon_deg) * kDeg};
}

}  // namespace

bool Patch::has_holes() const {
  return std::any_of(mask.values().begin(), mask.values().end(), [](auto m) { return m != 0; });
}

const PatchSpec* PatchGrid::find(int patch_id) const {
  if (patch_id >= 0 && patch_id < static_cast<int>(specs.size()) &&
      specs[static_cast<std::size_t>(patch_id)].patch_id == patch_id) {
    return &specs[static_cast<std::size_t>(patch_id)];
  }
  for (const auto& s : specs) {
    if (s.patch_id == patch_id) return &s;
  }
  return nullptr;
}

void validate(const PatchSpec& spec) {
  require(spec.lat_half_extent_deg > 0.0 && spec.lon_half_extent_deg > 0.0,
          ErrorCode::kInvalidArgument, "patch extents must be positive");
  require(spec.lon_half_extent_deg <= 180.0, ErrorCode::kInvalidArgument,
          "longitude extent exceeds the full circle");
  require(spec.height_px > 0 && spec.width_px > 0, ErrorCode::kInvalidArgument,
          "patch pixel dimensions must be positive");
  require(spec.center_lat_deg >= -90.0 && spec.center_lat_deg <= 90.0,
          ErrorCode::kInvalidArgument, "center latitude outside [-90, 90]");
  require(spec.center_lon_deg >= 0.0 && spec.center_lon_deg < 360.0, ErrorCode::kInvalidArgument,
          "center longitude outside [0, 360)");
  require(std::abs(spec.center_lat_deg) + spec.lat_half_extent_deg <= 90.0 + kAngleTol,
          ErrorCode::kPoleCrossing, "patch " + std::to_string(spec.patch_id) + " crosses a pole");
}

void validate(const NormalizationRecord& record) {
  require(std::isfinite(record.param_a) && std::isfinite(record.param_b),
          ErrorCode::kDegenerateNormalization, "normalization parameters must be finite");
  if (record.mode == NormMode::kMinMax) {
    require(record.param_b > record.param_a, ErrorCode::kDegenerateNormalization,
            "minmax normalization needs max > min");
  } else {
    require(record.param_b != 0.0, ErrorCode::kDegenerateNormalization,
            "zscore normalization needs a nonzero standard deviation");
  }
}

LatLon pixel_center(const PatchSpec& spec, int row, int col) {
  const double lat = spec.center_lat_deg - spec.lat_half_extent_deg +
                     (row + 0.5) * (2.0 * spec.lat_half_extent_deg / spec.height_px);
  const double lon = spec.center_lon_deg - spec.lon_half_extent_deg +
                     (col + 0.5) * (2.0 * spec.lon_half_extent_deg / spec.width_px);
  return {lat, lon};
}

PatchGrid make_grid(double lat_step_deg, double lon_step_deg, const PatchSpec& patch_defaults,
                    std::int64_t n_side) {
  require(lat_step_deg > 0.0 && lon_step_deg > 0.0, ErrorCode::kInvalidArgument,
          "grid steps must be positive");
  const double half = patch_defaults.lat_half_extent_deg;
  require(half > 0.0 && patch_defaults.lon_half_extent_deg > 0.0, ErrorCode::kInvalidArgument,
          "patch extents must be positive");
  const double lat_lo = -90.0 + half;
  const double lat_hi = 90.0 - half;
  const double lat_range = lat_hi - lat_lo;
  require(lat_range >= 0.0, ErrorCode::kEmptyGrid, "latitude extent leaves no valid centers");
  require(lat_step_deg <= lat_range + kAngleTol || lat_range == 0.0, ErrorCode::kEmptyGrid,
          "latitude step larger than the valid center range");
  require(lon_step_deg <= 360.0, ErrorCode::kEmptyGrid, "longitude step exceeds 360 degrees");

  PatchGrid grid;
  grid.lat_step_deg = lat_step_deg;
  grid.lon_step_deg = lon_step_deg;
  grid.n_side = n_side;
  const auto n_lat = static_cast<int>(std::floor(lat_range / lat_step_deg + kAngleTol)) + 1;
  const auto n_lon = static_cast<int>(std::ceil(360.0 / lon_step_deg - kAngleTol));
  int id = 0;
  for (int a = 0; a < n_lat; ++a) {
    for (int b = 0; b < n_lon; ++b) {
      PatchSpec spec = patch_defaults;
      spec.center_lat_deg = lat_lo + a * lat_step_deg;
      spec.center_lon_deg = b * lon_step_deg;
      spec.patch_id = id++;
      validate(spec);
      grid.specs.push_back(spec);
    }
  }
  require(!grid.specs.empty(), ErrorCode::kEmptyGrid, "grid has no patches");
  return grid;
}

std::int64_t nearest_sphere_pixel(std::int64_t n_side, const PatchSpec& spec, int row, int col) {
  const healpix::Angles a = to_angles(pixel_center(spec, row, col));
  return healpix::ang2pix_ring(n_side, a.theta, a.phi);
}

Image project_patch(const SphereMap& map, const PatchSpec& spec, Interp interp) {
  validate(spec);
  require(static_cast<std::int64_t>(map.values.size()) == map.npix(), ErrorCode::kLengthMismatch,
          "map length does not match n_side");
  Image out(spec.height_px, spec.width_px);
  if (interp == Interp::kNearest) {
    for (int i = 0; i < spec.height_px; ++i) {
      for (int j = 0; j < spec.width_px; ++j) {
        out(i, j) = map.values[static_cast<std::size_t>(nearest_sphere_pixel(map.n_side, spec, i, j))];
      }
    }
    return out;
  }
  // Bad pixels would poison the interpolation; substitute the mean of good ones.
  std::span<const double> values = map.values;
  std::vector<double> filled;
  if (map.bad_value) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < map.values.size(); ++p) {
      if (!map.is_bad(p)) {
        sum += map.values[p];
        ++n;
      }
    }
    const double fill = n > 0 ? sum / static_cast<double>(n) : 0.0;
    filled = map.values;
    for (std::size_t p = 0; p < filled.size(); ++p) {
      if (map.is_bad(p)) filled[p] = fill;
    }
    values = filled;
  }
  for (int i = 0; i < spec.height_px; ++i) {
    for (int j = 0; j < spec.width_px; ++j) {
      const healpix::Angles a = to_angles(pixel_center(spec, i, j));
      out(i, j) = healpix::interpolate_ring(map.n_side, values, a.theta, a.phi);
    }
  }
  return out;
}

Mask project_mask(const MaskMap& mask, const PatchSpec& spec) {
  validate(spec);
  Mask out(spec.height_px, spec.width_px);
  for (int i = 0; i < spec.height_px; ++i) {
    for (int j = 0; j < spec.width_px; ++j) {
      out(i, j) = mask.values[static_cast<std::size_t>(nearest_sphere_pixel(mask.n_side, spec, i, j))];
    }
  }
  return out;
}

NormalizationRecord fit_normalization(std::span<const double> values, NormMode mode,
                                      NormSource source) {
  require(!values.empty(), ErrorCode::kDegenerateNormalization, "no values to normalize");
  NormalizationRecord record;
  record.mode = mode;
  record.source = source;
  if (mode == NormMode::kMinMax) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    record.param_a = *lo;
    record.param_b = *hi;
  } else {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    record.param_a = mean;
    record.param_b = std::sqrt(var);
  }
  validate(record);
  return record;
}

double normalize(double value, const NormalizationRecord& r) {
  return r.mode == NormMode::kMinMax ? (value - r.param_a) / (r.param_b - r.param_a)
                                     : (value - r.param_a) / r.param_b;
}

double denormalize(double value, const NormalizationRecord& r) {
  return r.mode == NormMode::kMinMax ? value * (r.param_b - r.param_a) + r.param_a
                                     : value * r.param_b + r.param_a;
}

std::vector<double> normalize(std::span<const double> values, const NormalizationRecord& record) {
  validate(record);
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return normalize(v, record); });
  return out;
}

std::vector<double> denormalize(std::span<const double> values, const NormalizationRecord& record) {
  validate(record);
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return denormalize(v, record); });
  return out;
}

Segmentation segment(const SphereMap& map, const MaskMap& mask, const PatchGrid& grid,
                     const SegmentOptions& options) {
  validate(map);
  validate(mask);
  require(same_geometry(map, mask), ErrorCode::kGeometryMismatch,
          "map and mask differ in n_side or ordering");
  require(grid.n_side == 0 || grid.n_side == map.n_side, ErrorCode::kGeometryMismatch,
          "grid was built for a different n_side");

  NormalizationRecord global;
  if (options.norm_source == NormSource::kGlobalMap) {
    std::vector<double> good;
    good.reserve(map.values.size());
    for (std::size_t p = 0; p < map.values.size(); ++p) {
      if (!map.is_bad(p)) good.push_back(map.values[p]);
    }
    global = fit_normalization(good, options.norm_mode, NormSource::kGlobalMap);
  }

  Segmentation out;
  std::vector<const PatchSpec*> ordered;
  for (const auto& s : grid.specs) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const PatchSpec* a, const PatchSpec* b) { return a->patch_id < b->patch_id; });
  for (const PatchSpec* spec : ordered) {
    Patch patch;
    patch.spec = *spec;
    Image raw = project_patch(map, *spec, options.interp);
    patch.mask = project_mask(mask, *spec);
    std::vector<double> good;
    for (int i = 0; i < spec->height_px; ++i) {
      for (int j = 0; j < spec->width_px; ++j) {
        const auto p = static_cast<std::size_t>(nearest_sphere_pixel(map.n_side, *spec, i, j));
        if (map.is_bad(p)) {
          patch.mask(i, j) = 1;
          raw(i, j) = std::numeric_limits<double>::quiet_NaN();
        } else if (options.norm_source == NormSource::kPerPatch) {
          good.push_back(raw(i, j));
        }
      }
    }
    patch.norm = options.norm_source == NormSource::kGlobalMap
                     ? global
                     : fit_normalization(good, options.norm_mode, NormSource::kPerPatch);
    patch.image = Image(spec->height_px, spec->width_px);
    for (std::size_t k = 0; k < raw.size(); ++k) {
      patch.image[k] = patch.mask[k] != 0 && !std::isfinite(raw[k]) ? 0.0 : normalize(raw[k], patch.norm);
    }
    (patch.has_holes() ? out.test : out.train).push_back(std::move(patch));
  }
  return out;
}

SphereMap reassemble(const SphereMap& base, std::span<const Patch> patches,
                     const PatchGrid& grid) {
  validate(base);
  std::vector<double> sum(base.values.size(), 0.0);
  std::vector<std::uint32_t> count(base.values.size(), 0);
  for (const Patch& patch : patches) {
    const PatchSpec* spec = grid.find(patch.spec.patch_id);
    require(spec != nullptr, ErrorCode::kUnknownPatch,
            "patch id " + std::to_string(patch.spec.patch_id) + " is not in the grid");
    require(patch.image.rows() == spec->height_px && patch.image.cols() == spec->width_px &&
                patch.mask.same_shape(patch.image),
            ErrorCode::kShapeMismatch, "patch shape differs from its grid spec");
    for (int i = 0; i < spec->height_px; ++i) {
      for (int j = 0; j < spec->width_px; ++j) {
        if (patch.mask(i, j) == 0) continue;
        const auto p = static_cast<std::size_t>(nearest_sphere_pixel(base.n_side, *spec, i, j));
        sum[p] += denormalize(patch.image(i, j), patch.norm);
        ++count[p];
      }
    }
  }
  SphereMap out = base;
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    if (count[p] > 0) out.values[p] = sum[p] / static_cast<double>(count[p]);
  }
  return out;
}

}  // namespace cosmovae
