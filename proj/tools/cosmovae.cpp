#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cosmovae/config.hpp"
#include "cosmovae/engine.hpp"
#include "cosmovae/error.hpp"
#include "cosmovae/grf.hpp"
#include "cosmovae/healpix.hpp"
#include "cosmovae/inpaint.hpp"
#include "cosmovae/patch_io.hpp"
#include "cosmovae/sphere_map.hpp"

namespace fs = std::filesystem;
using namespace cosmovae;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool dry_run = false;
};

struct Inputs {
  std::string map;
  std::string mask;
  std::string bundle;
  std::string checkpoint;
  std::string truth;
  std::string resume;
  std::int64_t steps = -1;
  int n_samples = -1;
  int ell_max = -1;
};

RunConfig resolve_config(const Common& common) {
  RunConfig config = common.config_path.empty() ? run_config_from_json(nlohmann::json::object())
                                                : load_run_config(common.config_path);
  if (common.seed) apply_seed(config, *common.seed);
  return config;
}

fs::path input_or(const std::string& given, const fs::path& fallback, const char* what) {
  const fs::path p = given.empty() ? fallback : fs::path(given);
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
  return p;
}

void write_resolved(const fs::path& out, const std::string& command, const RunConfig& config) {
  fs::create_directories(out);
  std::ofstream f(out / ("resolved_config_" + command + ".json"));
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write resolved config in " + out.string());
  nlohmann::json j = to_json(config);
  j["command"] = command;
  f << j.dump(2) << '\n';
}

MaskMap cap_mask(std::int64_t n_side, int holes, double radius_deg, std::uint64_t seed) {
  MaskMap mask = make_empty_mask(n_side);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cos_r = std::cos(radius_deg * std::numbers::pi / 180.0);
  for (int h = 0; h < holes; ++h) {
    const double z = 2.0 * u(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * u(rng);
    const double s = std::sqrt(1.0 - z * z);
    for (std::int64_t p = 0; p < mask.npix(); ++p) {
      const auto a = healpix::pix2ang_ring(n_side, p);
      const double pz = std::cos(a.theta);
      const double ps = std::sin(a.theta);
      const double c = pz * z + ps * s * std::cos(a.phi - phi);
      if (c >= cos_r) mask.values[static_cast<std::size_t>(p)] = 1;
    }
  }
  return mask;
}

PatchGrid grid_for(const RunConfig& config, std::int64_t n_side) {
  return make_grid(config.grid.lat_step_deg, config.grid.lon_step_deg, config.grid.patch, n_side);
}

int cmd_synth(const Common& common, const RunConfig& config) {
  if (!config.spectrum_path) throw UsageError("synth needs paths.spectrum in the config");
  const fs::path out(common.out);
  const grf::PowerSpectrum full = grf::read_spectrum(*config.spectrum_path);
  require(full.ell_max() >= config.synth.ell_max, ErrorCode::kConfig,
          "spectrum file stops at ell " + std::to_string(full.ell_max()) + " < synth.ell_max");
  grf::PowerSpectrum spectrum;
  spectrum.values.assign(full.values.begin(), full.values.begin() + config.synth.ell_max + 1);
  const grf::AlmSet alm = grf::sample_alm(spectrum, config.synth_seed());
  std::optional<grf::FieldConstants> constants;
  if (config.synth.apply_t_cmb) constants = grf::FieldConstants{};
  const SphereMap map = grf::synthesize(alm, config.synth.n_side, constants);
  const MaskMap mask = cap_mask(config.synth.n_side, config.synth.mask_holes,
                                config.synth.mask_radius_deg, config.mask_seed());
  save_map(out / "sky.smap", map);
  save_map(out / "mask.smap", mask);
  std::size_t holes = 0;
  for (auto v : mask.values) holes += v;
  std::cout << "synth: n_side " << config.synth.n_side << ", " << map.npix() << " pixels, " << holes
            << " hole pixels -> " << (out / "sky.smap").string() << '\n';
  return 0;
}

int cmd_segment(const Common& common, const RunConfig& config, const Inputs& in) {
  const fs::path out(common.out);
  const SphereMap map = load_sphere_map(input_or(in.map, out / "sky.smap", "map"));
  const MaskMap mask = load_mask_map(input_or(in.mask, out / "mask.smap", "mask"));
  const PatchGrid grid = grid_for(config, map.n_side);
  const Segmentation seg = segment(map, mask, grid, config.grid.segment);
  save_bundle(out / "train", seg.train, grid);
  save_bundle(out / "test", seg.test, grid);
  std::cout << "segment: " << grid.specs.size() << " patches, " << seg.train.size() << " train, "
            << seg.test.size() << " test\n";
  return 0;
}

int cmd_train(const Common& common, RunConfig config, const Inputs& in) {
  const fs::path out(common.out);
  const fs::path bundle_dir = input_or(in.bundle, out / "train", "train bundle");
  if (!fs::exists(bundle_dir / "manifest.json")) {
    throw UsageError("no bundle manifest in " + bundle_dir.string());
  }
  if (in.steps >= 0) config.train.max_steps = in.steps;
  if (config.prior_spectrum_path) config.train.prior_spectrum = grf::read_spectrum(*config.prior_spectrum_path);
  PatchBundle bundle = load_bundle(bundle_dir);
  require(!bundle.patches.empty(), ErrorCode::kInvalidArgument, "train bundle holds no patches");

  config.train.checkpoint_dir = out / "checkpoints";
  config.train.metrics_path = out / "metrics.csv";
  const auto pool = engine::make_mask_pool(static_cast<std::size_t>(config.mask_pool_size),
                                           config.model.height, config.model.width,
                                           config.mask_pool_seed(), config.mask_max_fraction);
  losses::FeatureExtractor extractor = losses::build_extractor(config.extractor);
  std::optional<engine::Trainer> trainer;
  if (!in.resume.empty()) {
    trainer.emplace(engine::Trainer::resume(input_or(in.resume, {}, "checkpoint"),
                                            std::move(bundle.patches), pool, config.train,
                                            std::move(extractor)));
  } else {
    fs::remove(*config.train.metrics_path);
    trainer.emplace(vae::init_model(config.model), std::move(bundle.patches), pool, config.train,
                    std::move(extractor));
  }
  std::cout << "train: " << trainer->train_size() << " train / " << trainer->validation_size()
            << " validation patches, " << trainer->model().parameter_count() << " parameters\n";
  const auto result = trainer->run([](const engine::MetricsRow& row) {
    std::cout << "  epoch " << row.epoch << " step " << row.step << " total " << row.loss.total
              << " mse " << row.metrics.mse << '\n';
  });
  vae::save_model(out / "model.cvt", trainer->model());
  std::cout << "train: " << trainer->step_count() << " steps, " << result.checkpoints.size()
            << " checkpoints -> " << (out / "model.cvt").string() << '\n';
  return 0;
}

vae::VaeModel load_checked_model(const RunConfig& config, const Inputs& in, const fs::path& out) {
  vae::VaeModel model = vae::load_model(input_or(in.checkpoint, out / "model.cvt", "checkpoint"));
  require(model.config.height == config.grid.patch.height_px &&
              model.config.width == config.grid.patch.width_px,
          ErrorCode::kShapeMismatch, "checkpoint input size does not match the grid patch size");
  return model;
}

int cmd_inpaint(const Common& common, const RunConfig& config, const Inputs& in, bool uq) {
  const fs::path out(common.out);
  const int n = uq ? (in.n_samples >= 0 ? in.n_samples : config.uq_samples)
                   : (in.n_samples >= 0 ? in.n_samples : config.inpaint_samples);
  if (uq && n < 2) throw UsageError("uq needs at least 2 samples");
  if (n < 1) throw UsageError("inpaint needs at least 1 sample");
  const vae::VaeModel model = load_checked_model(config, in, out);
  const SphereMap map = load_sphere_map(input_or(in.map, out / "sky.smap", "map"));
  const MaskMap mask = load_mask_map(input_or(in.mask, out / "mask.smap", "mask"));
  inpaint::SkyOptions options;
  options.seed = uq ? config.uq_seed() : config.inpaint_seed();
  options.n_samples = n;
  options.segment = config.grid.segment;
  const auto result = inpaint::inpaint_sky(model, map, mask, grid_for(config, map.n_side), options);
  const fs::path map_out = out / (uq ? "uq_mean.smap" : "inpainted.smap");
  save_map(map_out, result.map);
  if (uq) inpaint::save_uq(out / "uq", result.uncertainty);
  std::cout << (uq ? "uq: " : "inpaint: ") << result.inpainted.size() << " patches filled -> "
            << map_out.string() << '\n';
  return 0;
}

int cmd_spectrum(const Common& common, const RunConfig& config, const Inputs& in) {
  const fs::path out(common.out);
  const SphereMap map = load_sphere_map(input_or(in.map, out / "sky.smap", "map"));
  const int ell_max = in.ell_max >= 0 ? in.ell_max : config.synth.ell_max;
  const grf::PowerSpectrum spectrum = grf::estimate_spectrum(grf::analyze(map, ell_max));
  grf::write_spectrum(out / "spectrum.txt", spectrum);
  std::cout << "spectrum: ell_max " << ell_max << " -> " << (out / "spectrum.txt").string() << '\n';
  return 0;
}

int cmd_eval(const Common& common, const Inputs& in) {
  const fs::path out(common.out);
  const SphereMap truth = load_sphere_map(input_or(in.truth, out / "sky.smap", "truth map"));
  const SphereMap map = load_sphere_map(input_or(in.map, out / "inpainted.smap", "map"));
  const MaskMap mask = load_mask_map(input_or(in.mask, out / "mask.smap", "mask"));
  require(map.n_side == truth.n_side && same_geometry(truth, mask), ErrorCode::kGeometryMismatch,
          "eval inputs disagree in n_side");
  double lo = truth.values.front();
  double hi = lo;
  for (double v : truth.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double peak = hi > lo ? hi - lo : 1.0;
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t p = 0; p < truth.values.size(); ++p) {
    if (mask.values[p] == 0) continue;
    a.push_back(map.values[p]);
    b.push_back(truth.values[p]);
  }
  nlohmann::json j = {{"peak", peak}, {"hole_pixels", a.size()}};
  if (!a.empty()) {
    Image ia(1, static_cast<int>(a.size()));
    Image ib(1, static_cast<int>(b.size()));
    ia.values() = a;
    ib.values() = b;
    const auto m = engine::compute_metrics(ia, ib, peak);
    j["mse"] = m.mse;
    j["mae"] = m.mae;
    j["psnr"] = std::isinf(m.psnr) ? nlohmann::json("inf") : nlohmann::json(m.psnr);
  }
  std::ofstream f(out / "eval.json");
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write eval.json");
  f << j.dump(2) << '\n';
  std::cout << "eval: " << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sky-map inpainting with a spectrum-informed variational autoencoder"};
  app.require_subcommand(1);
  Common common;
  Inputs in;
  std::uint64_t seed_value = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_value, "global seed overriding the config");
    sub->add_option("--out", common.out, "workspace directory for inputs and outputs");
    sub->add_flag("--dry-run", common.dry_run, "validate the configuration and exit");
  };

  auto* synth = app.add_subcommand("synth", "sample a Gaussian sky and a cap mask");
  auto* seg = app.add_subcommand("segment", "cut map and mask into train/test patch bundles");
  seg->add_option("--map", in.map, "sky map (default OUT/sky.smap)");
  seg->add_option("--mask", in.mask, "mask map (default OUT/mask.smap)");
  auto* train = app.add_subcommand("train", "train the autoencoder on the train bundle");
  train->add_option("--bundle", in.bundle, "train bundle directory (default OUT/train)");
  train->add_option("--steps", in.steps, "optimizer step limit");
  train->add_option("--resume", in.resume, "checkpoint to continue from");
  auto* inp = app.add_subcommand("inpaint", "fill the masked pixels of a map");
  auto* uq = app.add_subcommand("uq", "inpaint with per-pixel uncertainty");
  for (auto* sub : {inp, uq}) {
    sub->add_option("--checkpoint", in.checkpoint, "model file (default OUT/model.cvt)");
    sub->add_option("--map", in.map, "sky map (default OUT/sky.smap)");
    sub->add_option("--mask", in.mask, "mask map (default OUT/mask.smap)");
    sub->add_option("--n", in.n_samples, "latent draws per patch");
  }
  auto* spec = app.add_subcommand("spectrum", "estimate the angular power spectrum of a map");
  spec->add_option("--map", in.map, "sky map (default OUT/sky.smap)");
  spec->add_option("--ell-max", in.ell_max, "largest multipole (default synth.ell_max)");
  auto* ev = app.add_subcommand("eval", "hole-pixel metrics of an inpainted map");
  ev->add_option("--truth", in.truth, "reference map (default OUT/sky.smap)");
  ev->add_option("--map", in.map, "inpainted map (default OUT/inpainted.smap)");
  ev->add_option("--mask", in.mask, "mask map (default OUT/mask.smap)");
  for (auto* sub : {synth, seg, train, inp, uq, spec, ev}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  if (cmd->count("--seed") > 0) common.seed = seed_value;
  try {
    const RunConfig config = resolve_config(common);
    validate(config);
    write_resolved(common.out, name, config);
    if (common.dry_run) {
      std::cout << name << ": configuration valid (dry run)\n";
      return 0;
    }
    if (name == "synth") return cmd_synth(common, config);
    if (name == "segment") return cmd_segment(common, config, in);
    if (name == "train") return cmd_train(common, config, in);
    if (name == "inpaint") return cmd_inpaint(common, config, in, false);
    if (name == "uq") return cmd_inpaint(common, config, in, true);
    if (name == "spectrum") return cmd_spectrum(common, config, in);
    return cmd_eval(common, in);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
