#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cosmovae/archive.hpp"
#include "cosmovae/losses.hpp"
#include "test_util.hpp"

using namespace cosmovae;
using namespace cosmovae::losses;
using testutil::fails_with;

namespace {

Image random_image(int h, int w, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w);
  for (double& v : img.values()) v = u(rng);
  return img;
}

Mask random_mask(int h, int w, unsigned seed, double p = 0.3) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Mask m(h, w);
  for (auto& v : m.values()) v = b(rng) ? 1 : 0;
  return m;
}

// Window OR, written without reference to the library's loop structure.
Mask dilate_oracle(const Mask& m, bool eight) {
  Mask out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      bool hit = false;
      for (int a = std::max(0, i - 1); a <= std::min(m.rows() - 1, i + 1); ++a) {
        for (int b = std::max(0, j - 1); b <= std::min(m.cols() - 1, j + 1); ++b) {
          const bool diagonal = a != i && b != j;
          if (m(a, b) && (eight || !diagonal)) hit = true;
        }
      }
      out(i, j) = hit ? 1 : 0;
    }
  }
  return out;
}

FeatureExtractor small_extractor() {
  FeatureExtractorSpec spec;
  spec.stage_widths = {4, 6};
  spec.convs_per_stage = {1, 2};
  spec.n_stages = 2;
  return build_extractor(spec);
}

}  // namespace

TEST(RecLoss, HandValuesAndPartition) {
  Image a(2, 2, 0.0), b(2, 2, 0.0);
  a(0, 0) = 2.0;
  b(1, 1) = 2.0;
  Mask m(2, 2, 0);
  EXPECT_DOUBLE_EQ(rec_loss(a, b, m), 1.0);

  const Image y = random_image(9, 7, 1), y_hat = random_image(9, 7, 2);
  const Mask mask = random_mask(9, 7, 3);
  double hole = 0.0, valid = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) (mask[k] ? hole : valid) += std::abs(y_hat[k] - y[k]);
  const double n = static_cast<double>(y.size());
  EXPECT_NEAR(rec_loss(y_hat, y, mask), hole / n + valid / n, 1e-15);
  EXPECT_NEAR(rec_loss(y_hat, y, mask), rec_loss(y_hat, y, Mask(9, 7, 0)), 1e-15);
  EXPECT_DOUBLE_EQ(rec_loss(y_hat, y, mask), rec_loss(y, y_hat, mask));
  EXPECT_EQ(rec_loss(y, y, mask), 0.0);
}

TEST(RecLoss, ShapeMismatch) {
  EXPECT_TRUE(fails_with([] { rec_loss(Image(2, 2), Image(2, 3), Mask(2, 2)); }, ErrorCode::kShapeMismatch));
}

TEST(KlLoss, HandValuesAndGradient) {
  vae::LatentDistribution d{{0.0, 0.0}, {0.0, std::log(4.0)}};
  const std::vector<double> prior = {1.0, 4.0};
  EXPECT_NEAR(kl_loss(d, prior), 0.0, 1e-15);
  vae::LatentDistribution one{{1.0}, {0.0}};
  EXPECT_NEAR(kl_loss(one, std::vector<double>{1.0}), 0.5, 1e-15);
  vae::LatentDistribution wide{{0.0}, {0.0}};
  EXPECT_NEAR(kl_loss(wide, std::vector<double>{2.0}), 0.5 * (std::log(2.0) - 0.5), 1e-15);

  vae::LatentDistribution r{{0.3, -1.2, 0.7}, {0.4, -0.9, 1.1}};
  const std::vector<double> c2 = {0.5, 2.0, 1.3};
  std::vector<double> gm, gl;
  kl_loss_grad(r, c2, gm, gl);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    auto p = r, m = r;
    p.mu[k] += h;
    m.mu[k] -= h;
    EXPECT_NEAR(gm[k], (kl_loss(p, c2) - kl_loss(m, c2)) / (2 * h), 1e-8);
    p = r;
    m = r;
    p.log_var[k] += h;
    m.log_var[k] -= h;
    EXPECT_NEAR(gl[k], (kl_loss(p, c2) - kl_loss(m, c2)) / (2 * h), 1e-8);
  }
}

TEST(KlLoss, NonNegative) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int k = 0; k < 2000; ++k) {
    vae::LatentDistribution d{{u(rng)}, {u(rng)}};
    EXPECT_GE(kl_loss(d, std::vector<double>{std::exp(u(rng))}), 0.0);
  }
}

TEST(Extractor, DeterministicAndShaped) {
  const auto a = small_extractor();
  const auto b = small_extractor();
  const Image img = random_image(16, 12, 5);
  const auto sa = a.stage_outputs(img);
  const auto sb = b.stage_outputs(img);
  ASSERT_EQ(sa.size(), 2u);
  EXPECT_EQ(sa[0], sb[0]);
  EXPECT_EQ(sa[1], sb[1]);
  EXPECT_EQ(sa[0].channels(), 4);
  EXPECT_EQ(sa[0].height(), 8);
  EXPECT_EQ(sa[0].width(), 6);
  EXPECT_EQ(sa[1].channels(), 6);
  EXPECT_EQ(sa[1].height(), 4);
  for (const Tensor& t : sa) {
    const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
    EXPECT_LT(*lo, *hi);
  }
}

TEST(Extractor, SpecJson) {
  FeatureExtractorSpec spec = FeatureExtractorSpec::vgg16_pool3("w.cvt");
  EXPECT_EQ(spec.stage_widths, (std::vector<int>{64, 128, 256}));
  EXPECT_EQ(spec.convs_per_stage, (std::vector<int>{2, 2, 3}));
  const auto back = extractor_spec_from_json(to_json(spec));
  EXPECT_EQ(back.stage_widths, spec.stage_widths);
  EXPECT_EQ(back.mode, ExtractorMode::kPretrained);
  auto j = to_json(spec);
  j["layers"] = 16;
  EXPECT_TRUE(fails_with([&] { extractor_spec_from_json(j); }, ErrorCode::kConfig));
}

TEST(Extractor, PretrainedWeightsAreLoaded) {
  const auto dir = testutil::scratch("fx");
  FeatureExtractorSpec spec;
  spec.mode = ExtractorMode::kPretrained;
  spec.n_stages = 1;
  spec.stage_widths = {2};
  spec.convs_per_stage = {1};
  spec.in_channels = 3;
  spec.weights_path = dir / "w.cvt";
  Archive ar;
  ar.arrays.push_back({"conv1_1.weight", {2, 3, 3, 3}, std::vector<double>(54, 0.0)});
  ar.arrays.push_back({"conv1_1.bias", {2}, {0.5, -0.5}});
  write_archive(*spec.weights_path, ar);
  const auto fx = build_extractor(spec);
  const auto out = fx.stage_outputs(random_image(6, 6, 1));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(out[0](0, i, j), 0.5);
      EXPECT_DOUBLE_EQ(out[0](1, i, j), 0.0);
    }
  }

  ar.arrays[0].shape = {2, 3, 1, 9};
  write_archive(*spec.weights_path, ar);
  EXPECT_TRUE(fails_with([&] { build_extractor(spec); }, ErrorCode::kCorruptArchive));
  spec.weights_path = dir / "absent.cvt";
  EXPECT_THROW(build_extractor(spec), Error);
}

TEST(Perceptual, ZeroAtTargetAndGrowsWithError) {
  const auto fx = small_extractor();
  const Image y = random_image(16, 16, 6);
  EXPECT_EQ(perceptual_loss(y, y, fx), 0.0);
  const Image delta = random_image(16, 16, 7);
  Image one = y, two = y;
  for (std::size_t k = 0; k < y.size(); ++k) {
    one[k] += 0.1 * (delta[k] - 0.5);
    two[k] += 0.2 * (delta[k] - 0.5);
  }
  EXPECT_GT(perceptual_loss(one, y, fx), 0.0);
  EXPECT_GE(perceptual_loss(two, y, fx), perceptual_loss(one, y, fx));
}

TEST(Perceptual, MeanNormalizationDividesEachStage) {
  const auto fx = small_extractor();
  const Image y = random_image(8, 8, 1), y_hat = random_image(8, 8, 2);
  const auto a = fx.stage_outputs(y_hat), b = fx.stage_outputs(y);
  double mean = 0.0, raw = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    double sum = 0.0;
    for (std::size_t k = 0; k < a[s].size(); ++k) sum += std::abs(a[s][k] - b[s][k]);
    mean += sum / static_cast<double>(a[s].size());
    raw += sum;
  }
  EXPECT_NEAR(perceptual_loss(y_hat, y, fx), mean, 1e-12);
  EXPECT_NEAR(perceptual_loss(y_hat, y, fx, PerceptualNorm::kRawSum), raw, 1e-10);
}

TEST(Dilation, MatchesOracleOnEvery3x3Mask) {
  for (int bits = 0; bits < 512; ++bits) {
    Mask m(3, 3);
    for (int k = 0; k < 9; ++k) m[static_cast<std::size_t>(k)] = (bits >> k) & 1;
    ASSERT_EQ(dilate_mask(m), dilate_oracle(m, true)) << bits;
    ASSERT_EQ(dilate_mask(m, Connectivity::kFour), dilate_oracle(m, false)) << bits;
  }
}

TEST(Dilation, MatchesOracleOnRandomMasks) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    const Mask m = random_mask(16, 16, seed, 0.1);
    ASSERT_EQ(dilate_mask(m), dilate_oracle(m, true));
    ASSERT_EQ(dilate_mask(m, Connectivity::kFour), dilate_oracle(m, false));
  }
  Mask bad(2, 2);
  bad(0, 0) = 3;
  EXPECT_TRUE(fails_with([&] { dilate_mask(bad); }, ErrorCode::kNonBinaryMask));
}

TEST(Tv, HandValueAndInvariances) {
  Image img(2, 2, 0.0);
  img(0, 1) = 1.0;
  const Mask all(2, 2, 1);
  EXPECT_DOUBLE_EQ(tv_loss(img, all, 2), 1.0);
  EXPECT_EQ(tv_loss(Image(5, 5, 0.7), Mask(5, 5, 1), 3), 0.0);

  const Image y = random_image(10, 10, 8);
  const Mask region = dilate_mask(random_mask(10, 10, 9, 0.1));
  Image shifted = y;
  for (double& v : shifted.values()) v += 3.0;
  EXPECT_NEAR(tv_loss(y, region, 7), tv_loss(shifted, region, 7), 1e-12);
  EXPECT_EQ(tv_loss(y, Mask(10, 10, 0), 0), 0.0);
  EXPECT_THROW(tv_loss(y, region, 0), Error);
}

TEST(Tv, OnlyPairsInsideRegionCount) {
  Image img(1, 4);
  img.values() = {0.0, 1.0, 5.0, 6.0};
  Mask region(1, 4);
  region.values() = {1, 1, 0, 1};
  EXPECT_DOUBLE_EQ(tv_loss(img, region, 1), 1.0);
}

TEST(Composite, SelectorAndRecomposition) {
  const auto fx = small_extractor();
  const Image y = random_image(12, 12, 10), y_hat = random_image(12, 12, 11);
  const Mask mask = random_mask(12, 12, 12, 0.2);
  vae::LatentDistribution d{{0.2, -0.1}, {0.3, -0.4}};
  const std::vector<double> prior = {1.0, 0.5};

  const auto only_rec = composite_loss(y_hat, y, mask, d, prior, fx, {1.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(only_rec.total, rec_loss(y_hat, y, mask));

  const LossWeights w;
  const auto r = composite_loss(y_hat, y, mask, d, prior, fx, w);
  EXPECT_EQ(r.total, w.rec * r.rec + w.kl * r.kl + w.perceptual * r.perceptual + w.tv * r.tv);
  EXPECT_EQ(r.rec, rec_loss(y_hat, y, mask));
  EXPECT_EQ(r.kl, kl_loss(d, prior));
  EXPECT_EQ(r.perceptual, perceptual_loss(y_hat, y, fx));
  int n_hole = 0;
  for (auto v : mask.values()) n_hole += v;
  EXPECT_EQ(r.tv, tv_loss(y_hat, dilate_mask(mask), n_hole));
}

TEST(Composite, OptimumIsZero) {
  const auto fx = small_extractor();
  const Image y(12, 12, 0.4);
  const Mask mask = random_mask(12, 12, 13, 0.2);
  vae::LatentDistribution d{{0.0, 0.0}, {0.0, std::log(0.5)}};
  const auto r = composite_loss(y, y, mask, d, std::vector<double>{1.0, 0.5}, fx, LossWeights{});
  EXPECT_NEAR(r.total, 0.0, 1e-15);
}

TEST(Composite, GradientAgreesWithFiniteDifference) {
  const auto fx = small_extractor();
  const Image y = random_image(8, 8, 14);
  Image y_hat = random_image(8, 8, 15);
  const Mask mask = random_mask(8, 8, 16, 0.3);
  vae::LatentDistribution d{{0.2}, {0.1}};
  const std::vector<double> prior = {0.7};
  LossGradients g;
  composite_loss(y_hat, y, mask, d, prior, fx, LossWeights{}, &g);
  const double h = 1e-6;
  double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
  for (std::size_t k = 0; k < y_hat.size(); ++k) {
    const double keep = y_hat[k];
    y_hat[k] = keep + h;
    const double up = composite_loss(y_hat, y, mask, d, prior, fx, LossWeights{}).total;
    y_hat[k] = keep - h;
    const double down = composite_loss(y_hat, y, mask, d, prior, fx, LossWeights{}).total;
    y_hat[k] = keep;
    const double fd = (up - down) / (2 * h);
    diff2 += (fd - g.d_y_hat[k]) * (fd - g.d_y_hat[k]);
    fd2 += fd * fd;
    an2 += g.d_y_hat[k] * g.d_y_hat[k];
  }
  EXPECT_LT(std::sqrt(diff2) / (std::sqrt(fd2) + std::sqrt(an2)), 1e-6);
}

TEST(Composite, NonFiniteTermIsNamed) {
  const auto fx = small_extractor();
  Image y_hat = random_image(8, 8, 1);
  vae::LatentDistribution d{{1e200}, {0.0}};
  try {
    composite_loss(y_hat, y_hat, Mask(8, 8), d, std::vector<double>{1e-200}, fx, LossWeights{});
    FAIL() << "expected a non-finite loss";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("kl"), std::string::npos);
  }
}
