#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cosmovae/config.hpp"
#include "cosmovae/grf.hpp"
#include "cosmovae/sphere_map.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace cosmovae;
using testutil::fails_with;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + COSMOVAE_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json toy_json() {
  std::ifstream in(fs::path(COSMOVAE_SOURCE_DIR) / "configs" / "toy.json");
  nlohmann::json j = nlohmann::json::parse(in);
  j["paths"]["spectrum"] = (fs::path(COSMOVAE_SOURCE_DIR) / "data" / "toy_spectrum.txt").string();
  j["model"]["encoder_widths"] = {4, 4, 4};
  j["model"]["fc_width"] = 8;
  j["model"]["latent_dim"] = 4;
  return j;
}

fs::path write_config(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit = {}) {
  nlohmann::json j = toy_json();
  if (edit) edit(j);
  const fs::path out = dir / "config.json";
  std::ofstream(out) << j.dump(2);
  return out;
}

std::string common(const fs::path& cfg, const fs::path& dir) {
  return "--config \"" + cfg.string() + "\" --out \"" + dir.string() + "\"";
}

}  // namespace

TEST(RunConfig, RelativePathsAndSeeds) {
  const auto dir = testutil::scratch("cfg");
  fs::create_directories(dir / "data");
  grf::write_spectrum(dir / "data" / "s.txt", grf::PowerSpectrum{{1.0, 2.0}});
  nlohmann::json j = {{"seed", 7}, {"paths", {{"spectrum", "data/s.txt"}}}};
  const RunConfig c = run_config_from_json(j, dir);
  EXPECT_EQ(*c.spectrum_path, dir / "data" / "s.txt");
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.model.height, c.grid.patch.height_px);
  RunConfig other = c;
  apply_seed(other, 8);
  EXPECT_NE(other.model.seed, c.model.seed);
  EXPECT_NE(other.train.seed, c.train.seed);
  EXPECT_NE(c.synth_seed(), c.mask_seed());

  const RunConfig again = run_config_from_json(to_json(c), "/nonexistent");
  EXPECT_EQ(again.model, c.model);
  EXPECT_EQ(*again.spectrum_path, fs::absolute(*c.spectrum_path));
}

TEST(RunConfig, Rejections) {
  EXPECT_TRUE(fails_with([] { run_config_from_json({{"sed", 1}}); }, ErrorCode::kConfig));
  EXPECT_TRUE(fails_with([] { run_config_from_json({{"synth", {{"nside", 8}}}}); }, ErrorCode::kConfig));
  EXPECT_TRUE(fails_with([] { run_config_from_json({{"model", {{"seed", 3}}}}); }, ErrorCode::kConfig));
  EXPECT_TRUE(fails_with([] { run_config_from_json({{"grid", {{"interp", "cubic"}}}}); }, ErrorCode::kConfig));
  const RunConfig missing = run_config_from_json({{"paths", {{"spectrum", "/no/such/file.txt"}}}});
  EXPECT_TRUE(fails_with([&] { validate(missing); }, ErrorCode::kConfig));
  const RunConfig pool = run_config_from_json({{"train", {{"mask_pool_size", 5}}}});
  EXPECT_EQ(pool.mask_pool_size, 5);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  const auto dir = testutil::scratch("cli_usage");
  const auto cfg = write_config(dir);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("inpaint " + common(cfg, dir)), 2);
  EXPECT_EQ(run_cli("train " + common(cfg, dir)), 2);
  EXPECT_EQ(run_cli("uq " + common(cfg, dir) + " --n 1"), 2);
  const auto bad = write_config(dir, [](nlohmann::json& j) { j["grid"]["colour"] = "red"; });
  EXPECT_EQ(run_cli("synth " + common(bad, dir)), 2);
}

TEST(Cli, DryRunWritesNothingButResolvedConfig) {
  const auto dir = testutil::scratch("cli_dry");
  const auto cfg = write_config(dir);
  EXPECT_EQ(run_cli("synth " + common(cfg, dir) + " --dry-run"), 0);
  EXPECT_FALSE(fs::exists(dir / "sky.smap"));
}

TEST(Cli, SynthIsSeededAndSpectrumRecoversInput) {
  const auto a = testutil::scratch("cli_synth_a");
  const auto b = testutil::scratch("cli_synth_b");
  for (const auto& dir : {a, b}) {
    const auto cfg = write_config(dir);
    ASSERT_EQ(run_cli("synth " + common(cfg, dir) + " --seed 5"), 0);
  }
  EXPECT_EQ(slurp(a / "sky.smap"), slurp(b / "sky.smap"));
  EXPECT_EQ(slurp(a / "mask.smap"), slurp(b / "mask.smap"));
  EXPECT_TRUE(fs::exists(a / "resolved_config_synth.json"));

  const auto cfg = write_config(a);
  ASSERT_EQ(run_cli("spectrum " + common(cfg, a) + " --ell-max 16"), 0);
  const auto est = grf::read_spectrum(a / "spectrum.txt");
  const auto truth = grf::read_spectrum(fs::path(COSMOVAE_SOURCE_DIR) / "data" / "toy_spectrum.txt");
  ASSERT_EQ(est.ell_max(), 16);
  // One realization: each multipole scatters by sqrt(2 / (2l + 1)) of C_l.
  for (int l = 2; l <= 16; ++l) {
    const double c = truth.values[static_cast<std::size_t>(l)];
    EXPECT_NEAR(est.values[static_cast<std::size_t>(l)], c, 5.0 * c * std::sqrt(2.0 / (2 * l + 1))) << l;
  }
}

TEST(Cli, FullPipeline) {
  const auto dir = testutil::scratch("cli_full");
  const auto cfg = write_config(dir);
  const std::string c = common(cfg, dir);
  ASSERT_EQ(run_cli("synth " + c), 0);
  ASSERT_EQ(run_cli("segment " + c), 0);
  ASSERT_EQ(run_cli("train " + c + " --steps 3"), 0);
  ASSERT_EQ(run_cli("inpaint " + c), 0);
  ASSERT_EQ(run_cli("uq " + c + " --n 2"), 0);
  ASSERT_EQ(run_cli("eval " + c), 0);
  for (const char* f : {"model.cvt", "metrics.csv", "inpainted.smap", "uq_mean.smap", "eval.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const SphereMap sky = load_sphere_map(dir / "sky.smap");
  const SphereMap filled = load_sphere_map(dir / "inpainted.smap");
  const MaskMap mask = load_mask_map(dir / "mask.smap");
  for (std::size_t p = 0; p < sky.values.size(); ++p) {
    if (!mask.values[p]) ASSERT_EQ(filled.values[p], sky.values[p]);
  }
  std::ifstream in(dir / "eval.json");
  const auto report = nlohmann::json::parse(in);
  EXPECT_TRUE(report.contains("mse"));

  EXPECT_EQ(run_cli("train " + c + " --resume \"" + (dir / "model.cvt").string() + "\" --steps 4"), 1);
  const auto ckpt = dir / "checkpoints" / "step_00000003.cvt";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(run_cli("train " + c + " --resume \"" + ckpt.string() + "\" --steps 4"), 0);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "step_00000004.cvt"));
}
