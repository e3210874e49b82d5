#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "cosmovae/engine.hpp"
#include "cosmovae/losses.hpp"
#include "cosmovae/patch.hpp"
#include "cosmovae/vae.hpp"

namespace cosmovae {

struct SynthConfig {
  std::int64_t n_side = 16;
  int ell_max = 16;
  bool apply_t_cmb = false;
  int mask_holes = 3;  // spherical caps in the synthetic mask; 0 gives an empty mask
  double mask_radius_deg = 8.0;
};

struct GridConfig {
  double lat_step_deg = 10.0;
  double lon_step_deg = 20.0;
  PatchSpec patch;  // extents and pixel size shared by every cell
  SegmentOptions segment;
};

/// One document describing a whole pipeline run. Module seeds are derived
/// from the global seed; relative paths resolve against base_dir.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> spectrum_path;
  std::optional<std::filesystem::path> prior_spectrum_path;
  SynthConfig synth;
  GridConfig grid;
  vae::ModelConfig model;
  engine::TrainConfig train;
  int mask_pool_size = 64;
  double mask_max_fraction = 0.25;
  losses::FeatureExtractorSpec extractor;
  int inpaint_samples = 1;
  int uq_samples = 100;
  std::filesystem::path base_dir = ".";

  std::uint64_t synth_seed() const;
  std::uint64_t mask_seed() const;
  std::uint64_t mask_pool_seed() const;
  std::uint64_t inpaint_seed() const;
  std::uint64_t uq_seed() const;
};

/// Re-derives the model and training seeds from config.seed.
void apply_seed(RunConfig& config, std::uint64_t seed);

/// Unknown keys at any level are rejected. Missing model height/width follow
/// the grid's patch size.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

/// Structural checks plus existence of every referenced input file.
void validate(const RunConfig& config);

}  // namespace cosmovae
