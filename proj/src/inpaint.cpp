#include "cosmovae/inpaint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "cosmovae/engine.hpp"
#include "cosmovae/error.hpp"
#include "cosmovae/patch_io.hpp"

namespace cosmovae::inpaint {
namespace {

using nlohmann::json;

constexpr std::uint64_t kUqStream = 101;
constexpr std::uint64_t kSkyStream = 102;

void check_size(const vae::VaeModel& model, const Patch& patch) {
  require(patch.image.rows() == model.config.height && patch.image.cols() == model.config.width &&
              patch.mask.same_shape(patch.image),
          ErrorCode::kShapeMismatch,
          "patch " + std::to_string(patch.image.rows()) + "x" + std::to_string(patch.image.cols()) +
              " does not match model input " + std::to_string(model.config.height) + "x" +
              std::to_string(model.config.width));
}

Image composite(const Patch& patch, const Image& y_hat) {
  Image out = patch.image;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (patch.mask[k] != 0) out[k] = y_hat[k];
  }
  return out;
}

Image draw(const vae::VaeModel& model, const Patch& patch, std::uint64_t noise_seed) {
  const auto noise = vae::standard_normal(static_cast<std::size_t>(model.config.latent_dim), noise_seed);
  return composite(patch, vae::forward(model, patch.image, patch.mask, noise).output);
}

UQResult reduce(const Patch& patch, const std::vector<Image>& samples, std::uint64_t seed) {
  UQResult r;
  r.n_samples = static_cast<int>(samples.size());
  r.seed = seed;
  r.mean_image = Image(patch.image.rows(), patch.image.cols());
  r.std_image = Image(patch.image.rows(), patch.image.cols());
  const double n = static_cast<double>(samples.size());
  for (std::size_t k = 0; k < patch.image.size(); ++k) {
    if (patch.mask[k] == 0) {
      r.mean_image[k] = patch.image[k];
      continue;
    }
    double sum = 0.0;
    for (const auto& s : samples) sum += s[k];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& s : samples) ss += (s[k] - mean) * (s[k] - mean);
    r.mean_image[k] = mean;
    r.std_image[k] = std::sqrt(ss / n);
  }
  return r;
}

std::string stem(int patch_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "uq_%06d", patch_id);
  return buf;
}

}  // namespace

Patch inpaint_patch(const vae::VaeModel& model, const Patch& patch, std::uint64_t noise_seed) {
  check_size(model, patch);
  Patch out;
  out.spec = patch.spec;
  out.norm = patch.norm;
  out.mask = Mask(patch.mask.rows(), patch.mask.cols());
  out.image = patch.has_holes() ? draw(model, patch, noise_seed) : patch.image;
  return out;
}

UQResult quantify_uncertainty(const vae::VaeModel& model, const Patch& patch, int n_samples,
                              std::uint64_t seed) {
  require(n_samples >= 2, ErrorCode::kInvalidArgument, "uncertainty needs at least 2 samples");
  check_size(model, patch);
  std::vector<Image> samples;
  samples.reserve(static_cast<std::size_t>(n_samples));
  for (int k = 0; k < n_samples; ++k) {
    samples.push_back(draw(model, patch, engine::derive_seed(seed, kUqStream, static_cast<std::uint64_t>(k))));
  }
  return reduce(patch, samples, seed);
}

UQResult quantify_uncertainty(std::span<const vae::VaeModel> models, const Patch& patch,
                              std::uint64_t seed) {
  require(models.size() >= 2, ErrorCode::kInvalidArgument, "an ensemble needs at least 2 models");
  std::vector<Image> samples;
  for (std::size_t k = 0; k < models.size(); ++k) {
    check_size(models[k], patch);
    samples.push_back(draw(models[k], patch, engine::derive_seed(seed, kUqStream, k)));
  }
  return reduce(patch, samples, seed);
}

SkyResult inpaint_sky(const vae::VaeModel& model, const SphereMap& base_map, const MaskMap& mask_map,
                      const PatchGrid& grid, const SkyOptions& options) {
  require(options.n_samples >= 1, ErrorCode::kInvalidArgument, "n_samples must be >= 1");
  Segmentation seg = segment(base_map, mask_map, grid, options.segment);
  SkyResult result;
  for (Patch& p : seg.test) {
    check_size(model, p);
    const auto id = static_cast<std::uint64_t>(p.spec.patch_id);
    if (options.n_samples >= 2) {
      UQResult uq = quantify_uncertainty(model, p, options.n_samples,
                                         engine::derive_seed(options.seed, kSkyStream, id));
      p.image = uq.mean_image;
      result.uncertainty.push_back({p.spec.patch_id, std::move(uq)});
    } else {
      p.image = draw(model, p, engine::derive_seed(options.seed, kSkyStream, id));
    }
    result.inpainted.push_back(std::move(p));
  }
  result.map = reassemble(base_map, result.inpainted, grid);
  return result;
}

void save_uq(const std::filesystem::path& dir, std::span<const PatchUQ> results) {
  std::filesystem::create_directories(dir);
  json manifest = {{"format", "cosmovae-uq"}, {"version", 1}, {"patches", json::array()}};
  for (const auto& r : results) {
    const std::string s = stem(r.patch_id);
    save_array(dir / (s + "_mean.bin"), r.uq.mean_image);
    save_array(dir / (s + "_std.bin"), r.uq.std_image);
    manifest["patches"].push_back({{"patch_id", r.patch_id},
                                   {"n_samples", r.uq.n_samples},
                                   {"seed", r.uq.seed},
                                   {"mean", s + "_mean.bin"},
                                   {"std", s + "_std.bin"}});
  }
  std::ofstream out(dir / "manifest.json");
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write UQ manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::vector<PatchUQ> load_uq(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(static_cast<bool>(in), ErrorCode::kIo, "no UQ manifest in " + dir.string());
  std::vector<PatchUQ> out;
  try {
    const json manifest = json::parse(in);
    require(manifest.at("format") == "cosmovae-uq", ErrorCode::kMalformedHeader, "not a UQ manifest");
    for (const auto& e : manifest.at("patches")) {
      PatchUQ r;
      r.patch_id = e.at("patch_id").get<int>();
      r.uq.n_samples = e.at("n_samples").get<int>();
      r.uq.seed = e.at("seed").get<std::uint64_t>();
      r.uq.mean_image = load_image_array(dir / e.at("mean").get<std::string>());
      r.uq.std_image = load_image_array(dir / e.at("std").get<std::string>());
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedHeader, std::string("bad UQ manifest: ") + e.what());
  }
  return out;
}

}  // namespace cosmovae::inpaint
