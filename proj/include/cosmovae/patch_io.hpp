#pragma once

#include <filesystem>
#include <vector>

#include "cosmovae/patch.hpp"
#include "cosmovae/tensor.hpp"

namespace cosmovae {

// Flat array file: "PARR", u32 rows, u32 cols, u32 dtype (0 = f64, 1 = u8),
// then row-major little-endian payload.
void save_array(const std::filesystem::path& path, const Image& image);
void save_array(const std::filesystem::path& path, const Mask& mask);
Image load_image_array(const std::filesystem::path& path);
Mask load_mask_array(const std::filesystem::path& path);

/// Directory holding manifest.json plus one image and one mask file per patch.
void save_bundle(const std::filesystem::path& dir, const std::vector<Patch>& patches,
                 const PatchGrid& grid);

struct PatchBundle {
  std::vector<Patch> patches;
  PatchGrid grid;
};

PatchBundle load_bundle(const std::filesystem::path& dir);

}  // namespace cosmovae
