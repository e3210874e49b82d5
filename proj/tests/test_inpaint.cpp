#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cosmovae/engine.hpp"
#include "cosmovae/grf.hpp"
#include "cosmovae/inpaint.hpp"
#include "test_util.hpp"

using namespace cosmovae;
using testutil::fails_with;

namespace {

vae::VaeModel tiny_model() {
  vae::ModelConfig c;
  c.height = c.width = 16;
  c.encoder_widths = {4, 6, 8};
  c.decoder_widths = {8, 6, 4};
  c.fc_width = 12;
  c.latent_dim = 4;
  c.seed = 2;
  return vae::init_model(c);
}

Patch holed_patch(unsigned seed, int r0 = 4, int r1 = 10) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Patch p;
  p.image = Image(16, 16);
  p.mask = Mask(16, 16, 0);
  p.spec.height_px = p.spec.width_px = 16;
  for (double& v : p.image.values()) v = u(rng);
  for (int i = r0; i < r1; ++i) {
    for (int j = r0; j < r1; ++j) p.mask(i, j) = 1;
  }
  return p;
}

}  // namespace

TEST(Inpaint, CompositesNetworkIntoHoles) {
  const auto model = tiny_model();
  const Patch p = holed_patch(1);
  const Patch out = inpaint::inpaint_patch(model, p, 42);
  const auto raw = vae::forward(model, p, vae::standard_normal(4, 42)).output;
  for (std::size_t k = 0; k < p.image.size(); ++k) {
    ASSERT_EQ(out.image[k], p.mask[k] ? raw[k] : p.image[k]);
  }
  EXPECT_FALSE(out.has_holes());
  EXPECT_EQ(out.spec, p.spec);
  EXPECT_EQ(inpaint::inpaint_patch(model, p, 42).image, out.image);
}

TEST(Inpaint, MaskExtremes) {
  const auto model = tiny_model();
  Patch clean = holed_patch(2, 0, 0);
  EXPECT_EQ(inpaint::inpaint_patch(model, clean, 1).image, clean.image);
  Patch full = holed_patch(3, 0, 16);
  const auto out = inpaint::inpaint_patch(model, full, 1);
  EXPECT_EQ(out.image, vae::forward(model, full, vae::standard_normal(4, 1)).output);
}

TEST(Inpaint, SizeMismatch) {
  Patch p = holed_patch(1);
  p.image = Image(8, 8);
  p.mask = Mask(8, 8, 1);
  EXPECT_TRUE(fails_with([&] { inpaint::inpaint_patch(tiny_model(), p, 1); }, ErrorCode::kShapeMismatch));
}

TEST(Uncertainty, PopulationStatistics) {
  const auto model = tiny_model();
  const Patch p = holed_patch(4);
  const int n = 6;
  const auto uq = inpaint::quantify_uncertainty(model, p, n, 9);
  EXPECT_EQ(uq.n_samples, n);
  std::vector<Image> draws;
  for (int k = 0; k < n; ++k) {
    draws.push_back(vae::forward(model, p, vae::standard_normal(4, engine::derive_seed(9, 101, k))).output);
  }
  for (std::size_t k = 0; k < p.image.size(); ++k) {
    if (!p.mask[k]) {
      ASSERT_EQ(uq.mean_image[k], p.image[k]);
      ASSERT_EQ(uq.std_image[k], 0.0);
      continue;
    }
    double mean = 0.0;
    for (const auto& d : draws) mean += d[k] / n;
    double var = 0.0;
    for (const auto& d : draws) var += (d[k] - mean) * (d[k] - mean) / n;
    EXPECT_NEAR(uq.mean_image[k], mean, 1e-14);
    EXPECT_NEAR(uq.std_image[k], std::sqrt(var), 1e-12);
    EXPECT_GT(uq.std_image[k], 0.0);
  }
}

TEST(Uncertainty, NeedsTwoSamples) {
  EXPECT_TRUE(fails_with([] { inpaint::quantify_uncertainty(tiny_model(), holed_patch(1), 1, 0); },
                         ErrorCode::kInvalidArgument));
  const std::vector<vae::VaeModel> one{tiny_model()};
  EXPECT_THROW(inpaint::quantify_uncertainty(one, holed_patch(1), 0), Error);
}

TEST(Uncertainty, EnsembleOfIdenticalModelsSharesOneNoiseStream) {
  const std::vector<vae::VaeModel> models{tiny_model(), tiny_model(), tiny_model()};
  const auto ens = inpaint::quantify_uncertainty(models, holed_patch(5), 3);
  const auto single = inpaint::quantify_uncertainty(models[0], holed_patch(5), 3, 3);
  EXPECT_EQ(ens.mean_image, single.mean_image);
  EXPECT_EQ(ens.std_image, single.std_image);
}

TEST(Uncertainty, SaveLoadRoundTrip) {
  const auto dir = testutil::scratch("uq");
  const auto model = tiny_model();
  std::vector<inpaint::PatchUQ> results;
  for (int id : {3, 17}) {
    results.push_back({id, inpaint::quantify_uncertainty(model, holed_patch(static_cast<unsigned>(id)), 4, 8)});
  }
  inpaint::save_uq(dir, results);
  const auto back = inpaint::load_uq(dir);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].patch_id, results[k].patch_id);
    EXPECT_EQ(back[k].uq.mean_image, results[k].uq.mean_image);
    EXPECT_EQ(back[k].uq.std_image, results[k].uq.std_image);
    EXPECT_EQ(back[k].uq.n_samples, 4);
    EXPECT_EQ(back[k].uq.seed, 8u);
  }
}

TEST(Sky, OnlyHolePixelsChange) {
  grf::PowerSpectrum s;
  for (int l = 0; l <= 12; ++l) s.values.push_back(l < 2 ? 0.0 : 1.0 / (l * (l + 1.0)));
  const SphereMap map = grf::synthesize(grf::sample_alm(s, 1), 16);
  MaskMap mask = make_empty_mask(16);
  PatchSpec spec;
  spec.height_px = spec.width_px = 16;
  const PatchGrid grid = make_grid(10.0, 20.0, spec, 16);
  for (int i = 6; i < 10; ++i) {
    for (int j = 6; j < 10; ++j) {
      mask.values[static_cast<std::size_t>(nearest_sphere_pixel(16, grid.specs[150], i, j))] = 1;
    }
  }
  inpaint::SkyOptions opts;
  opts.seed = 4;
  const auto single = inpaint::inpaint_sky(tiny_model(), map, mask, grid, opts);
  EXPECT_TRUE(single.uncertainty.empty());
  ASSERT_FALSE(single.inpainted.empty());
  int changed = 0;
  for (std::size_t p = 0; p < map.values.size(); ++p) {
    if (!mask.values[p]) ASSERT_EQ(single.map.values[p], map.values[p]);
    else changed += single.map.values[p] != map.values[p];
  }
  EXPECT_GT(changed, 0);
  EXPECT_EQ(inpaint::inpaint_sky(tiny_model(), map, mask, grid, opts).map, single.map);

  opts.n_samples = 3;
  const auto sampled = inpaint::inpaint_sky(tiny_model(), map, mask, grid, opts);
  EXPECT_EQ(sampled.uncertainty.size(), sampled.inpainted.size());
}
