#include "cosmovae/config.hpp"

#include <fstream>

#include "cosmovae/error.hpp"
#include "cosmovae/healpix.hpp"

namespace cosmovae {
namespace {

using nlohmann::json;

enum SeedStream : std::uint64_t {
  kModelSeed = 11,
  kTrainSeed = 12,
  kSynthSeed = 13,
  kMaskSeed = 14,
  kPoolSeed = 15,
  kInpaintSeed = 16,
  kUqSeed = 17,
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename F>
void for_each_key(const json& j, const char* section, F&& handle) {
  require(j.is_object(), ErrorCode::kConfig, std::string(section) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!handle(key, value)) {
      fail(ErrorCode::kConfig, "unknown key '" + key + "' in " + section);
    }
  }
}

const char* norm_mode_name(NormMode m) { return m == NormMode::kMinMax ? "minmax" : "zscore"; }
const char* norm_source_name(NormSource s) {
  return s == NormSource::kGlobalMap ? "global" : "per-patch";
}
const char* interp_name(Interp i) { return i == Interp::kNearest ? "nearest" : "bilinear"; }

}  // namespace

std::uint64_t RunConfig::synth_seed() const { return engine::derive_seed(seed, kSynthSeed); }
std::uint64_t RunConfig::mask_seed() const { return engine::derive_seed(seed, kMaskSeed); }
std::uint64_t RunConfig::mask_pool_seed() const { return engine::derive_seed(seed, kPoolSeed); }
std::uint64_t RunConfig::inpaint_seed() const { return engine::derive_seed(seed, kInpaintSeed); }
std::uint64_t RunConfig::uq_seed() const { return engine::derive_seed(seed, kUqSeed); }

void apply_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.model.seed = engine::derive_seed(seed, kModelSeed);
  config.train.seed = engine::derive_seed(seed, kTrainSeed);
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  std::optional<json> model_json;
  try {
    for_each_key(j, "config", [&](const std::string& key, const json& v) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "paths") {
        for_each_key(v, "paths", [&](const std::string& k, const json& p) {
          if (p.is_null()) return k == "spectrum" || k == "prior_spectrum";
          if (k == "spectrum") c.spectrum_path = resolve(base_dir, p.get<std::string>());
          else if (k == "prior_spectrum") c.prior_spectrum_path = resolve(base_dir, p.get<std::string>());
          else return false;
          return true;
        });
      } else if (key == "synth") {
        for_each_key(v, "synth", [&](const std::string& k, const json& s) {
          if (k == "n_side") c.synth.n_side = s.get<std::int64_t>();
          else if (k == "ell_max") c.synth.ell_max = s.get<int>();
          else if (k == "apply_t_cmb") c.synth.apply_t_cmb = s.get<bool>();
          else if (k == "mask_holes") c.synth.mask_holes = s.get<int>();
          else if (k == "mask_radius_deg") c.synth.mask_radius_deg = s.get<double>();
          else return false;
          return true;
        });
      } else if (key == "grid") {
        for_each_key(v, "grid", [&](const std::string& k, const json& g) {
          if (k == "lat_step_deg") c.grid.lat_step_deg = g.get<double>();
          else if (k == "lon_step_deg") c.grid.lon_step_deg = g.get<double>();
          else if (k == "lat_half_extent_deg") c.grid.patch.lat_half_extent_deg = g.get<double>();
          else if (k == "lon_half_extent_deg") c.grid.patch.lon_half_extent_deg = g.get<double>();
          else if (k == "height_px") c.grid.patch.height_px = g.get<int>();
          else if (k == "width_px") c.grid.patch.width_px = g.get<int>();
          else if (k == "norm_mode") {
            const auto s = g.get<std::string>();
            require(s == "minmax" || s == "zscore", ErrorCode::kConfig, "norm_mode must be minmax|zscore");
            c.grid.segment.norm_mode = s == "minmax" ? NormMode::kMinMax : NormMode::kZScore;
          } else if (k == "norm_source") {
            const auto s = g.get<std::string>();
            require(s == "global" || s == "per-patch", ErrorCode::kConfig,
                    "norm_source must be global|per-patch");
            c.grid.segment.norm_source = s == "global" ? NormSource::kGlobalMap : NormSource::kPerPatch;
          } else if (k == "interp") {
            const auto s = g.get<std::string>();
            require(s == "nearest" || s == "bilinear", ErrorCode::kConfig, "interp must be nearest|bilinear");
            c.grid.segment.interp = s == "nearest" ? Interp::kNearest : Interp::kBilinear;
          } else {
            return false;
          }
          return true;
        });
      } else if (key == "model") {
        require(v.is_object() && !v.contains("seed"), ErrorCode::kConfig,
                "model must be an object without its own seed");
        model_json = v;
      } else if (key == "train") {
        json train = v;
        require(train.is_object() && !train.contains("seed"), ErrorCode::kConfig,
                "train must be an object without its own seed");
        if (train.contains("mask_pool_size")) {
          c.mask_pool_size = train.at("mask_pool_size").get<int>();
          train.erase("mask_pool_size");
        }
        if (train.contains("mask_max_fraction")) {
          c.mask_max_fraction = train.at("mask_max_fraction").get<double>();
          train.erase("mask_max_fraction");
        }
        c.train = engine::train_config_from_json(train);
      } else if (key == "extractor") {
        c.extractor = losses::extractor_spec_from_json(v);
        if (c.extractor.weights_path) {
          c.extractor.weights_path = resolve(base_dir, c.extractor.weights_path->string());
        }
      } else if (key == "inpaint") {
        for_each_key(v, "inpaint", [&](const std::string& k, const json& s) {
          if (k != "n_samples") return false;
          c.inpaint_samples = s.get<int>();
          return true;
        });
      } else if (key == "uq") {
        for_each_key(v, "uq", [&](const std::string& k, const json& s) {
          if (k != "n_samples") return false;
          c.uq_samples = s.get<int>();
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad config value: ") + e.what());
  }
  json mj = model_json.value_or(json::object());
  if (!mj.contains("height")) mj["height"] = c.grid.patch.height_px;
  if (!mj.contains("width")) mj["width"] = c.grid.patch.width_px;
  c.model = vae::model_config_from_json(mj);
  apply_seed(c, c.seed);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kConfig, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path().empty() ? "." : path.parent_path());
}

json to_json(const RunConfig& c) {
  json model = vae::to_json(c.model);
  model.erase("seed");
  json train = engine::to_json(c.train);
  train.erase("seed");
  train["mask_pool_size"] = c.mask_pool_size;
  train["mask_max_fraction"] = c.mask_max_fraction;
  json paths = {{"spectrum", nullptr}, {"prior_spectrum", nullptr}};
  if (c.spectrum_path) paths["spectrum"] = std::filesystem::absolute(*c.spectrum_path).string();
  if (c.prior_spectrum_path) {
    paths["prior_spectrum"] = std::filesystem::absolute(*c.prior_spectrum_path).string();
  }
  json extractor = losses::to_json(c.extractor);
  if (c.extractor.weights_path) {
    extractor["weights_path"] = std::filesystem::absolute(*c.extractor.weights_path).string();
  }
  return {{"seed", c.seed},
          {"paths", paths},
          {"synth",
           {{"n_side", c.synth.n_side},
            {"ell_max", c.synth.ell_max},
            {"apply_t_cmb", c.synth.apply_t_cmb},
            {"mask_holes", c.synth.mask_holes},
            {"mask_radius_deg", c.synth.mask_radius_deg}}},
          {"grid",
           {{"lat_step_deg", c.grid.lat_step_deg},
            {"lon_step_deg", c.grid.lon_step_deg},
            {"lat_half_extent_deg", c.grid.patch.lat_half_extent_deg},
            {"lon_half_extent_deg", c.grid.patch.lon_half_extent_deg},
            {"height_px", c.grid.patch.height_px},
            {"width_px", c.grid.patch.width_px},
            {"norm_mode", norm_mode_name(c.grid.segment.norm_mode)},
            {"norm_source", norm_source_name(c.grid.segment.norm_source)},
            {"interp", interp_name(c.grid.segment.interp)}}},
          {"model", model},
          {"train", train},
          {"extractor", extractor},
          {"inpaint", {{"n_samples", c.inpaint_samples}}},
          {"uq", {{"n_samples", c.uq_samples}}}};
}

void validate(const RunConfig& c) {
  require(healpix::is_valid_nside(c.synth.n_side), ErrorCode::kConfig,
          "synth.n_side must be a power of two");
  require(c.synth.ell_max >= 0 && c.synth.ell_max <= grf::kDirectSumEllMax, ErrorCode::kConfig,
          "synth.ell_max must lie in [0, " + std::to_string(grf::kDirectSumEllMax) + "]");
  require(c.synth.mask_holes >= 0 && c.synth.mask_radius_deg > 0.0, ErrorCode::kConfig,
          "synth mask needs mask_holes >= 0 and a positive radius");
  validate(c.grid.patch);
  require(c.model.height == c.grid.patch.height_px && c.model.width == c.grid.patch.width_px,
          ErrorCode::kConfig, "model input size must equal the grid patch size");
  vae::validate(c.model);
  engine::validate(c.train);
  require(c.mask_pool_size >= 1, ErrorCode::kConfig, "mask_pool_size must be >= 1");
  require(c.mask_max_fraction > 0.0 && c.mask_max_fraction <= 1.0, ErrorCode::kConfig,
          "mask_max_fraction must lie in (0, 1]");
  require(c.inpaint_samples >= 1, ErrorCode::kConfig, "inpaint.n_samples must be >= 1");
  require(c.uq_samples >= 2, ErrorCode::kConfig, "uq.n_samples must be >= 2");
  for (const auto* p : {&c.spectrum_path, &c.prior_spectrum_path}) {
    if (*p) {
      require(std::filesystem::is_regular_file(**p), ErrorCode::kConfig,
              "referenced file does not exist: " + (*p)->string());
    }
  }
  if (c.extractor.mode == losses::ExtractorMode::kPretrained) {
    require(c.extractor.weights_path && std::filesystem::is_regular_file(*c.extractor.weights_path),
            ErrorCode::kConfig, "pretrained extractor needs an existing weights_path");
  }
}

}  // namespace cosmovae
