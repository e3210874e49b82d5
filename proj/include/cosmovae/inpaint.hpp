#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cosmovae/patch.hpp"
#include "cosmovae/sphere_map.hpp"
#include "cosmovae/vae.hpp"

namespace cosmovae::inpaint {

struct UQResult {
  Image mean_image;
  Image std_image;  // population standard deviation, exactly 0 off-hole
  int n_samples = 0;
  std::uint64_t seed = 0;
};

/// (1 - M) * x + M * y_hat: holes take the network output, every other pixel
/// is copied bit-exactly. The returned patch has an all-zero mask.
Patch inpaint_patch(const vae::VaeModel& model, const Patch& patch, std::uint64_t noise_seed);

/// Composited outputs for n_samples latent draws, reduced to per-pixel mean
/// and population standard deviation.
UQResult quantify_uncertainty(const vae::VaeModel& model, const Patch& patch, int n_samples = 100,
                              std::uint64_t seed = 0);
/// One draw per model of an ensemble (at least two models).
UQResult quantify_uncertainty(std::span<const vae::VaeModel> models, const Patch& patch,
                              std::uint64_t seed = 0);

struct SkyOptions {
  std::uint64_t seed = 0;
  int n_samples = 1;  // 1: single draw per patch; >= 2: fill with the UQ mean
  SegmentOptions segment;
};

struct PatchUQ {
  int patch_id = 0;
  UQResult uq;
};

struct SkyResult {
  SphereMap map;
  std::vector<Patch> inpainted;  // holes filled, masks as segmented
  std::vector<PatchUQ> uncertainty;  // empty when n_samples == 1
};

/// Segments base_map with mask_map, fills every patch that has holes and
/// writes the filled hole pixels back onto a copy of base_map.
SkyResult inpaint_sky(const vae::VaeModel& model, const SphereMap& base_map,
                      const MaskMap& mask_map, const PatchGrid& grid,
                      const SkyOptions& options = {});

/// uq_<id>_mean.bin / uq_<id>_std.bin per patch plus manifest.json.
void save_uq(const std::filesystem::path& dir, std::span<const PatchUQ> results);
std::vector<PatchUQ> load_uq(const std::filesystem::path& dir);

}  // namespace cosmovae::inpaint
