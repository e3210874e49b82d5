// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 3 5`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosmovae/engine.hpp"
#include "cosmovae/grf.hpp"
#include "cosmovae/inpaint.hpp"
#include "cosmovae/losses.hpp"
#include "cosmovae/patch.hpp"
#include "cosmovae/sphere_map.hpp"
#include "cosmovae/vae.hpp"

namespace fs = std::filesystem;
using namespace cosmovae;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. KL against a Monte Carlo estimate of E_q[log q - log p]

double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * (std::log(2.0 * M_PI * var) + (x - mean) * (x - mean) / var);
}

Outcome kl_oracle() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> mu_d(-2.0, 2.0);
  std::uniform_real_distribution<double> lv_d(-2.0, 2.0);
  std::uniform_real_distribution<double> lc_d(std::log(0.1), std::log(10.0));
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr int kTriples = 100;
  constexpr int kSamples = 1'000'000;
  int outside = 0;
  double worst_z = 0.0;
  double min_kl = 0.0;
  for (int t = 0; t < kTriples; ++t) {
    const double mu = mu_d(rng);
    const double lv = lv_d(rng);
    const double c2 = std::exp(lc_d(rng));
    vae::LatentDistribution d{{mu}, {lv}};
    const double prior[1] = {c2};
    const double kl = losses::kl_loss(d, prior);
    min_kl = std::min(min_kl, kl);
    const double var = std::exp(lv);
    const double sd = std::sqrt(var);
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int s = 0; s < kSamples; ++s) {
      const double z = mu + sd * normal(rng);
      const double f = log_normal_pdf(z, mu, var) - log_normal_pdf(z, 0.0, c2);
      sum += f;
      sum_sq += f * f;
    }
    const double mean = sum / kSamples;
    const double var_f = std::max(0.0, sum_sq / kSamples - mean * mean);
    const double se = std::sqrt(var_f / kSamples);
    const double dev = std::abs(kl - mean);
    if (dev > 3.0 * se) ++outside;
    if (se > 0.0) worst_z = std::max(worst_z, dev / se);
  }
  // Non-negativity over a wider random sweep of vector-valued inputs.
  std::uniform_real_distribution<double> wide(-8.0, 8.0);
  for (int t = 0; t < 10000; ++t) {
    vae::LatentDistribution d;
    std::vector<double> prior;
    for (int k = 0; k < 8; ++k) {
      d.mu.push_back(wide(rng));
      d.log_var.push_back(wide(rng));
      prior.push_back(std::exp(wide(rng)));
    }
    min_kl = std::min(min_kl, losses::kl_loss(d, prior));
  }
  Outcome o;
  o.pass = outside == 0 && min_kl >= -1e-12;
  o.detail = std::to_string(outside) + "/100 beyond 3 SE (worst " + num(worst_z) + " SE), min KL " +
             num(min_kl);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Central finite differences on a 16x16 toy model

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

std::vector<double> fd_gradient(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double down = f(x);
    x[k] = keep;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

Image as_image(const std::vector<double>& v, int h, int w) {
  Image img(h, w);
  img.values() = v;
  return img;
}

Outcome gradient_suite() {
  constexpr int H = 16;
  constexpr int W = 16;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image y(H, W);
  Image y_hat(H, W);
  for (std::size_t k = 0; k < y.size(); ++k) {
    y[k] = u(rng);
    y_hat[k] = u(rng);
  }
  const Mask mask = engine::random_irregular_mask(H, W, 5, 0.3);
  const int n_hole = static_cast<int>(std::count(mask.values().begin(), mask.values().end(), 1));
  const Mask region = losses::dilate_mask(mask);
  losses::FeatureExtractorSpec fx_spec;
  fx_spec.stage_widths = {4, 6, 8};
  const auto extractor = losses::build_extractor(fx_spec);

  std::vector<std::pair<std::string, double>> errors;
  const auto yh = y_hat.values();

  errors.emplace_back("rec", rel_error(losses::rec_loss_grad(y_hat, y, mask).values(),
                                       fd_gradient(yh, [&](const std::vector<double>& v) {
                                         return losses::rec_loss(as_image(v, H, W), y, mask);
                                       })));
  errors.emplace_back("perceptual",
                      rel_error(losses::perceptual_loss_grad(y_hat, y, extractor).values(),
                                fd_gradient(yh, [&](const std::vector<double>& v) {
                                  return losses::perceptual_loss(as_image(v, H, W), y, extractor);
                                })));
  errors.emplace_back("tv", rel_error(losses::tv_loss_grad(y_hat, region, n_hole).values(),
                                      fd_gradient(yh, [&](const std::vector<double>& v) {
                                        return losses::tv_loss(as_image(v, H, W), region, n_hole);
                                      })));

  vae::LatentDistribution dist;
  std::vector<double> prior;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < 6; ++k) {
    dist.mu.push_back(normal(rng));
    dist.log_var.push_back(normal(rng));
    prior.push_back(0.5 + u(rng));
  }
  std::vector<double> d_mu;
  std::vector<double> d_lv;
  losses::kl_loss_grad(dist, prior, d_mu, d_lv);
  std::vector<double> analytic = d_mu;
  analytic.insert(analytic.end(), d_lv.begin(), d_lv.end());
  std::vector<double> packed = dist.mu;
  packed.insert(packed.end(), dist.log_var.begin(), dist.log_var.end());
  errors.emplace_back("kl", rel_error(analytic, fd_gradient(packed, [&](const std::vector<double>& v) {
                                        vae::LatentDistribution d;
                                        d.mu.assign(v.begin(), v.begin() + 6);
                                        d.log_var.assign(v.begin() + 6, v.end());
                                        return losses::kl_loss(d, prior);
                                      })));

  // Composite loss through the full network, w.r.t. every parameter.
  vae::ModelConfig mc;
  mc.height = H;
  mc.width = W;
  mc.encoder_widths = {4, 4, 8, 8};
  mc.decoder_widths = {8, 8, 4, 4};
  mc.fc_layers = 3;
  mc.fc_width = 8;
  mc.latent_dim = 6;
  mc.seed = 3;
  vae::VaeModel model = vae::init_model(mc);
  const auto noise = vae::standard_normal(6, 17);
  const losses::LossWeights weights;
  auto total = [&](const vae::VaeModel& m) {
    const auto fw = vae::forward(m, y, mask, noise);
    return losses::composite_loss(fw.output, y, mask, fw.dist, prior, extractor, weights).total;
  };
  const auto trace = vae::forward_trace(model, y, mask, noise);
  losses::LossGradients lg;
  losses::composite_loss(trace.output, y, mask, trace.dist, prior, extractor, weights, &lg);
  std::vector<double> grads(model.params.size(), 0.0);
  vae::backward(model, trace, lg.d_y_hat, lg.d_mu, lg.d_log_var, grads);
  vae::VaeModel probe = model;
  const auto numeric = fd_gradient(model.params.values(), [&](const std::vector<double>& v) {
    probe.params.values() = v;
    return total(probe);
  });
  errors.emplace_back("network", rel_error(grads, numeric));

  Outcome o;
  o.pass = true;
  for (const auto& [name, e] : errors) {
    o.pass = o.pass && e < 1e-4;
    o.detail += name + " " + num(e) + "; ";
  }
  o.detail += std::to_string(model.params.size()) + " network parameters";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Sample -> synthesize -> analyze -> estimate, averaged over 50 seeds

Outcome grf_round_trip() {
  grf::PowerSpectrum cl;
  for (int l = 0; l <= 16; ++l) cl.values.push_back(1000.0 / (l * (l + 1) + 1.0));
  constexpr int kSeeds = 50;
  std::vector<double> mean(17, 0.0);
  for (int s = 0; s < kSeeds; ++s) {
    const auto map = grf::synthesize(grf::sample_alm(cl, 1000 + static_cast<std::uint64_t>(s)), 16);
    const auto est = grf::estimate_spectrum(grf::analyze(map, 16));
    for (int l = 0; l <= 16; ++l) mean[static_cast<std::size_t>(l)] += est.values[static_cast<std::size_t>(l)] / kSeeds;
  }
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  int worst_l = 0;
  for (int l = 2; l <= 16; ++l) {
    const double c = cl.values[static_cast<std::size_t>(l)];
    const double tol = 3.0 * std::sqrt(2.0 / (2 * l + 1)) / std::sqrt(double{kSeeds}) * c;
    const double ratio = std::abs(mean[static_cast<std::size_t>(l)] - c) / tol;
    if (ratio > worst) {
      worst = ratio;
      worst_l = l;
    }
    o.pass = o.pass && ratio <= 1.0;
  }
  o.detail = "worst |mean - C_l| / tolerance = " + num(worst) + " at l=" + std::to_string(worst_l);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Hand-computed loss values

Outcome hand_values() {
  Image y(2, 2);
  Image y_hat(2, 2);
  const double d[4] = {1.0, -1.0, 0.0, 2.0};
  for (std::size_t k = 0; k < 4; ++k) {
    y[k] = 0.25 * static_cast<double>(k);
    y_hat[k] = y[k] + d[k];
  }
  Mask m(2, 2);
  m(0, 1) = 1;
  const double rec = losses::rec_loss(y_hat, y, m);

  Image row(1, 3);
  row[0] = 0.0;
  row[1] = 1.0;
  row[2] = 3.0;
  const double tv = losses::tv_loss(row, Mask(1, 3, 1), 3);

  vae::LatentDistribution dist{{1.0}, {0.0}};
  const double prior[1] = {4.0};
  const double kl = losses::kl_loss(dist, prior);
  const double p = engine::psnr(0.01, 1.0);

  Outcome o;
  o.pass = rec == 1.0 && tv == 1.0 && std::abs(kl - 0.4431) <= 1e-4 && p == 20.0;
  o.detail = "rec " + num(rec) + ", tv " + num(tv) + ", kl " + num(kl) + ", psnr " + num(p);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Training smoke run on synthetic 32x32 patches

std::vector<Patch> synthetic_patches(int count, int size, std::uint64_t seed) {
  grf::PowerSpectrum cl;
  for (int l = 0; l <= 48; ++l) cl.values.push_back(l < 2 ? 0.0 : 1000.0 / (l * (l + 1) + 1.0));
  const SphereMap map = grf::synthesize(grf::sample_alm(cl, seed), 32);
  PatchSpec spec;
  spec.height_px = size;
  spec.width_px = size;
  const PatchGrid grid = make_grid(10.0, 20.0, spec, 32);
  SegmentOptions opts;
  opts.interp = Interp::kBilinear;
  Segmentation seg = segment(map, make_empty_mask(32), grid, opts);
  std::vector<Patch> out(seg.train.begin(), seg.train.begin() + std::min<std::size_t>(count, seg.train.size()));
  return out;
}

double hole_mse(const Image& a, const Image& b, const Mask& m) {
  double s = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (m[k] == 0) continue;
    s += (a[k] - b[k]) * (a[k] - b[k]);
    ++n;
  }
  return n == 0 ? 0.0 : s / n;
}

Outcome training_smoke() {
  constexpr int kSize = 32;
  auto all = synthetic_patches(256 + 20, kSize, 4242);
  if (all.size() < 276) return {false, "only " + std::to_string(all.size()) + " patches available"};
  std::vector<Patch> train(all.begin(), all.begin() + 256);
  std::vector<Patch> test(all.begin() + 256, all.end());

  vae::ModelConfig mc;
  mc.height = kSize;
  mc.width = kSize;
  mc.encoder_widths = {16, 32, 64, 64, 64, 64};
  mc.decoder_widths = {64, 64, 64, 64, 32, 16};
  mc.latent_dim = 16;
  mc.seed = 11;
  engine::TrainConfig tc;
  tc.seed = 12;
  tc.max_steps = 200;
  tc.validation_fraction = 0.0;
  const auto pool = engine::make_mask_pool(64, kSize, kSize, 13);
  const auto extractor = losses::build_extractor({});
  const auto prior = engine::prior_for(tc, mc.latent_dim);

  // Fixed evaluation pairs drawn from the training set.
  std::vector<Patch> eval_patches;
  std::vector<Mask> eval_masks;
  for (std::size_t k = 0; k < 32; ++k) {
    eval_patches.push_back(train[k * 8]);
    eval_masks.push_back(pool[k % pool.size()]);
  }
  engine::Trainer trainer(vae::init_model(mc), train, pool, tc, extractor);
  const auto before = engine::evaluate_loss(trainer.model(), eval_patches, eval_masks, prior, extractor,
                                            tc.weights, 77);
  trainer.run();
  const auto after = engine::evaluate_loss(trainer.model(), eval_patches, eval_masks, prior, extractor,
                                           tc.weights, 77);

  const auto test_masks = engine::make_mask_pool(test.size(), kSize, kSize, 14);
  double model_mse = 0.0;
  double base_mse = 0.0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    Patch p = test[k];
    p.mask = test_masks[k];
    const Patch filled = inpaint::inpaint_patch(trainer.model(), p, 1000 + k);
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < p.image.size(); ++i) {
      if (p.mask[i] == 0) {
        sum += p.image[i];
        ++n;
      }
    }
    Image mean_fill = p.image;
    for (std::size_t i = 0; i < p.image.size(); ++i) {
      if (p.mask[i] != 0) mean_fill[i] = sum / n;
    }
    model_mse += hole_mse(filled.image, test[k].image, p.mask) / test.size();
    base_mse += hole_mse(mean_fill, test[k].image, p.mask) / test.size();
  }
  Outcome o;
  const double ratio = after.total / before.total;
  o.pass = ratio <= 0.5 && model_mse < base_mse;
  o.detail = "loss " + num(before.total) + " -> " + num(after.total) + " (ratio " + num(ratio) +
             ", rec " + num(before.rec) + "->" + num(after.rec) + ", kl " + num(before.kl) + "->" +
             num(after.kl) + ", perc " + num(before.perceptual) + "->" + num(after.perceptual) +
             ", tv " + num(before.tv) + "->" + num(after.tv) + "); hole MSE model " + num(model_mse) +
             " vs mean-fill " + num(base_mse);
  return o;
}


// ---------------------------------------------------------------------------
// Shared CLI helpers

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cosmovae_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + COSMOVAE_CLI + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// The repository's toy configuration with an absolute spectrum path and
/// optional overrides, written into dir.
fs::path toy_config(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit = {}) {
  const fs::path source = fs::path(COSMOVAE_SOURCE_DIR) / "configs" / "toy.json";
  std::ifstream in(source);
  nlohmann::json j = nlohmann::json::parse(in);
  j["paths"]["spectrum"] = (fs::path(COSMOVAE_SOURCE_DIR) / "data" / "toy_spectrum.txt").string();
  if (edit) edit(j);
  const fs::path out = dir / "config.json";
  std::ofstream(out) << j.dump(2);
  return out;
}

// ---------------------------------------------------------------------------
// 6. Identity of segment -> reassemble and of CLI inpainting under an empty mask

Outcome pipeline_identity() {
  grf::PowerSpectrum cl;
  for (int l = 0; l <= 16; ++l) cl.values.push_back(1000.0 / (l * (l + 1) + 1.0));
  const SphereMap map = grf::synthesize(grf::sample_alm(cl, 8), 16);
  PatchSpec spec;
  spec.height_px = 32;
  spec.width_px = 32;
  const PatchGrid grid = make_grid(10.0, 20.0, spec, 16);
  Segmentation seg = segment(map, make_empty_mask(16), grid);
  std::vector<Patch> all = seg.train;
  all.insert(all.end(), seg.test.begin(), seg.test.end());
  const SphereMap back = reassemble(map, all, grid);
  const bool library_ok = back == map;

  const fs::path dir = scratch_dir("identity");
  const fs::path cfg = toy_config(dir, [](nlohmann::json& j) { j["synth"]["mask_holes"] = 0; });
  const std::string common = "--config \"" + cfg.string() + "\" --out \"" + dir.string() + "\"";
  const bool cli_ran = run_cli("synth " + common) && run_cli("segment " + common) &&
                       run_cli("train " + common + " --steps 2") && run_cli("inpaint " + common);
  bool cli_ok = false;
  if (cli_ran) {
    const SphereMap in = load_sphere_map(dir / "sky.smap");
    const SphereMap out = load_sphere_map(dir / "inpainted.smap");
    cli_ok = in == out && slurp(dir / "sky.smap") == slurp(dir / "inpainted.smap");
  }
  Outcome o;
  o.pass = library_ok && cli_ran && cli_ok;
  o.detail = std::string("segment/reassemble ") + (library_ok ? "bit-exact" : "differs") + "; CLI " +
             (!cli_ran ? "failed to run" : (cli_ok ? "inpaint output bit-identical" : "output differs"));
  return o;
}

// ---------------------------------------------------------------------------
// 7. Uncertainty quantification contract

Outcome uq_contract() {
  vae::ModelConfig mc;
  mc.height = 32;
  mc.width = 32;
  mc.encoder_widths = {8, 16, 16, 16};
  mc.decoder_widths = {16, 16, 16, 8};
  mc.fc_width = 32;
  mc.latent_dim = 8;
  mc.seed = 5;
  vae::VaeModel model = vae::init_model(mc);
  Patch patch = synthetic_patches(1, 32, 77).front();
  patch.mask = engine::random_irregular_mask(32, 32, 78, 0.3);

  const auto a = inpaint::quantify_uncertainty(model, patch, 100, 9);
  const auto b = inpaint::quantify_uncertainty(model, patch, 100, 9);
  bool off_zero = true;
  bool on_nonneg = true;
  double on_max = 0.0;
  for (std::size_t k = 0; k < patch.image.size(); ++k) {
    if (patch.mask[k] == 0) {
      off_zero = off_zero && a.std_image[k] == 0.0;
    } else {
      on_nonneg = on_nonneg && a.std_image[k] >= 0.0;
      on_max = std::max(on_max, a.std_image[k]);
    }
  }
  const bool deterministic = a.mean_image == b.mean_image && a.std_image == b.std_image;

  // Collapse the posterior: the log-variance head outputs a constant far
  // below the clamp.
  const nn::Dense& head = model.encoder_fc.back();
  auto& w = model.params.values();
  for (int r = mc.latent_dim; r < head.out_features; ++r) {
    for (int c = 0; c < head.in_features; ++c) {
      w[head.weight_offset + static_cast<std::size_t>(r) * head.in_features + c] = 0.0;
    }
    w[head.bias_offset + static_cast<std::size_t>(r)] = -100.0;
  }
  const auto collapsed = inpaint::quantify_uncertainty(model, patch, 100, 9);
  double collapsed_max = 0.0;
  for (std::size_t k = 0; k < patch.image.size(); ++k) {
    if (patch.mask[k] != 0) collapsed_max = std::max(collapsed_max, collapsed.std_image[k]);
  }
  Outcome o;
  o.pass = off_zero && on_nonneg && deterministic && collapsed_max < 1e-3;
  o.detail = std::string("off-hole std ") + (off_zero ? "== 0" : "NONZERO") + ", on-hole std " +
             (on_nonneg ? ">= 0" : "NEGATIVE") + " (max " + num(on_max) + "), " +
             (deterministic ? "bit-deterministic" : "NOT deterministic") +
             ", collapsed max on-hole std " + num(collapsed_max);
  return o;
}

// ---------------------------------------------------------------------------
// 8. Two full CLI runs with one seed

Outcome cli_determinism() {
  std::vector<fs::path> dirs;
  for (const char* name : {"determinism_a", "determinism_b"}) {
    const fs::path dir = scratch_dir(name);
    const fs::path cfg = toy_config(dir);
    const std::string common =
        "--config \"" + cfg.string() + "\" --out \"" + dir.string() + "\" --seed 1234";
    if (!(run_cli("synth " + common) && run_cli("segment " + common) &&
          run_cli("train " + common + " --steps 50") && run_cli("inpaint " + common))) {
      return {false, std::string("CLI run failed in ") + dir.string()};
    }
    dirs.push_back(dir);
  }
  const std::string csv_a = slurp(dirs[0] / "metrics.csv");
  const bool csv_same = !csv_a.empty() && csv_a == slurp(dirs[1] / "metrics.csv");
  const bool map_same = slurp(dirs[0] / "inpainted.smap") == slurp(dirs[1] / "inpainted.smap");
  const bool model_same = slurp(dirs[0] / "model.cvt") == slurp(dirs[1] / "model.cvt");
  const auto rows = std::count(csv_a.begin(), csv_a.end(), '\n') - 1;
  Outcome o;
  o.pass = csv_same && map_same && model_same;
  o.detail = std::string("metrics CSV ") + (csv_same ? "identical" : "DIFFERS") + " (" +
             std::to_string(rows) + " rows), inpainted map " + (map_same ? "identical" : "DIFFERS") +
             ", model " + (model_same ? "identical" : "DIFFERS");
  return o;
}

// ---------------------------------------------------------------------------
// 9. Full-size architecture against shape arithmetic

Outcome architecture_shape() {
  const vae::ModelConfig config = vae::ModelConfig::paper();
  const vae::VaeModel model = vae::build_architecture(config);

  const std::vector<long> enc = {64, 128, 256, 512, 512, 512};
  const std::vector<long> dec = {512, 512, 512, 256, 128, 64};
  const long latent = 2507;
  const long fc = 512;
  std::vector<long> skip_channels = {2};
  long h = 400;
  long w = 400;
  long count = 0;
  long in = 2;
  for (long out : enc) {
    count += in * out * 9 + out;
    skip_channels.push_back(out);
    in = out;
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  const long flat = in * h * w;
  count += flat * fc + fc + fc * fc + fc + fc * 2 * latent + 2 * latent;
  count += latent * fc + fc + fc * fc + fc + fc * flat + flat;
  long channels = in;
  for (std::size_t j = 0; j < dec.size(); ++j) {
    const long cin = channels + skip_channels[skip_channels.size() - 2 - j];
    count += cin * dec[j] * 9 + dec[j];
    channels = dec[j];
  }
  count += channels + 1;

  std::vector<long> got_widths;
  for (const auto& c : model.encoder_convs) got_widths.push_back(c.out_channels);
  const bool widths_ok = got_widths == enc;
  const bool dense_ok = model.encoder_fc.size() == 3 && model.decoder_fc.size() == 3;
  const bool latent_ok = model.encoder_fc.back().out_features == 2 * latent &&
                         model.decoder_fc.front().in_features == latent && config.latent_dim == latent;
  const bool count_ok = static_cast<long>(model.parameter_count()) == count;
  Outcome o;
  o.pass = widths_ok && dense_ok && latent_ok && count_ok;
  o.detail = std::string("widths ") + (widths_ok ? "64-128-256-512-512-512" : "WRONG") + ", dense " +
             (dense_ok ? "3+3" : "WRONG") + ", latent " + (latent_ok ? "2507" : "WRONG") +
             ", parameters " + std::to_string(model.parameter_count()) + " vs oracle " +
             std::to_string(count) + ", bottleneck " + std::to_string(in) + "x" + std::to_string(h) +
             "x" + std::to_string(w);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "KL Monte Carlo oracle", kl_oracle},
      {2, "gradient suite", gradient_suite},
      {3, "GRF round trip", grf_round_trip},
      {4, "loss hand values", hand_values},
      {5, "training smoke", training_smoke},
      {6, "pipeline identity", pipeline_identity},
      {7, "UQ contract", uq_contract},
      {8, "CLI determinism", cli_determinism},
      {9, "architecture shape", architecture_shape},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && selected.count(c.id) == 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << " (" << num(secs)
              << " s): " << o.detail << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
