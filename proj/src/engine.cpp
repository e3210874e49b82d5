#include "cosmovae/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <thread>

#include "cosmovae/archive.hpp"
#include "cosmovae/error.hpp"

namespace cosmovae::engine {
namespace {

using nlohmann::json;

enum Stream : std::uint64_t {
  kShuffle = 1,
  kMaskDraw = 2,
  kNoise = 3,
  kSplit = 4,
  kValMasks = 5,
  kValNoise = 6,
  kEvalNoise = 7,
};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct SampleWork {
  losses::LossReport loss;
  Metrics metrics;
  std::vector<double> grads;
};

SampleWork run_sample(const vae::VaeModel& model, const Patch& patch, const Mask& mask,
                      std::span<const double> noise, std::span<const double> prior_var,
                      const losses::FeatureExtractor& extractor, const TrainConfig& config) {
  SampleWork w;
  const vae::ForwardTrace trace = vae::forward_trace(model, patch.image, mask, noise);
  losses::LossGradients lg;
  w.loss = losses::composite_loss(trace.output, patch.image, mask, trace.dist, prior_var, extractor,
                                  config.weights, &lg, config.loss_options);
  w.metrics = compute_metrics(trace.output, patch.image, config.peak);
  w.grads.assign(model.params.size(), 0.0);
  vae::backward(model, trace, lg.d_y_hat, lg.d_mu, lg.d_log_var, w.grads);
  return w;
}

void add_report(losses::LossReport& acc, const losses::LossReport& r, double scale) {
  acc.rec += scale * r.rec;
  acc.kl += scale * r.kl;
  acc.perceptual += scale * r.perceptual;
  acc.tv += scale * r.tv;
  acc.total += scale * r.total;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Paints the disc, adding new hole pixels only while holes < cap.
void draw_disc(Mask& m, double cy, double cx, double r, std::size_t& holes, std::size_t cap) {
  const int i0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int i1 = std::min(m.rows() - 1, static_cast<int>(std::ceil(cy + r)));
  const int j0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int j1 = std::min(m.cols() - 1, static_cast<int>(std::ceil(cx + r)));
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) {
      const double dy = i - cy;
      const double dx = j - cx;
      if (dy * dy + dx * dx <= r * r && m(i, j) == 0 && holes < cap) {
        m(i, j) = 1;
        ++holes;
      }
    }
  }
}

std::size_t count_holes(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

}  // namespace

void validate(const TrainConfig& c) {
  require(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0, ErrorCode::kInvalidArgument,
          "learning_rate must be finite and non-negative");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0,
          ErrorCode::kInvalidArgument, "Adam betas must lie in [0, 1)");
  require(c.epsilon > 0.0, ErrorCode::kInvalidArgument, "Adam epsilon must be positive");
  require(c.batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  require(c.max_epochs >= 1, ErrorCode::kInvalidArgument, "max_epochs must be >= 1");
  require(c.max_steps >= 0, ErrorCode::kInvalidArgument, "max_steps must be >= 0");
  require(c.checkpoint_every >= 0, ErrorCode::kInvalidArgument, "checkpoint_every must be >= 0");
  require(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0, ErrorCode::kInvalidArgument,
          "validation_fraction must lie in [0, 1)");
  require(c.peak > 0.0, ErrorCode::kInvalidArgument, "peak must be positive");
  losses::validate(c.weights);
  if (!c.prior_spectrum.values.empty()) grf::validate(c.prior_spectrum);
}

json to_json(const TrainConfig& c) {
  json j = {{"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"max_steps", c.max_steps},
            {"seed", c.seed},
            {"weights",
             {{"rec", c.weights.rec},
              {"kl", c.weights.kl},
              {"perceptual", c.weights.perceptual},
              {"tv", c.weights.tv}}},
            {"checkpoint_every", c.checkpoint_every},
            {"validation_fraction", c.validation_fraction},
            {"peak", c.peak},
            {"perceptual_norm",
             c.loss_options.perceptual_norm == losses::PerceptualNorm::kMeanPerElement ? "mean"
                                                                                       : "sum"},
            {"dilation", c.loss_options.dilation == losses::Connectivity::kEight ? 8 : 4}};
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  require(j.is_object(), ErrorCode::kConfig, "train config must be an object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "max_epochs") c.max_epochs = value.get<int>();
      else if (key == "max_steps") c.max_steps = value.get<std::int64_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::int64_t>();
      else if (key == "validation_fraction") c.validation_fraction = value.get<double>();
      else if (key == "peak") c.peak = value.get<double>();
      else if (key == "perceptual_norm") {
        const auto s = value.get<std::string>();
        require(s == "mean" || s == "sum", ErrorCode::kConfig, "perceptual_norm must be mean|sum");
        c.loss_options.perceptual_norm =
            s == "mean" ? losses::PerceptualNorm::kMeanPerElement : losses::PerceptualNorm::kRawSum;
      } else if (key == "dilation") {
        const int d = value.get<int>();
        require(d == 8 || d == 4, ErrorCode::kConfig, "dilation must be 8 or 4");
        c.loss_options.dilation = d == 8 ? losses::Connectivity::kEight : losses::Connectivity::kFour;
      } else if (key == "weights") {
        require(value.is_object(), ErrorCode::kConfig, "weights must be an object");
        for (const auto& [wk, wv] : value.items()) {
          if (wk == "rec") c.weights.rec = wv.get<double>();
          else if (wk == "kl") c.weights.kl = wv.get<double>();
          else if (wk == "perceptual") c.weights.perceptual = wv.get<double>();
          else if (wk == "tv") c.weights.tv = wv.get<double>();
          else fail(ErrorCode::kConfig, "unknown weights key '" + wk + "'");
        }
      } else {
        fail(ErrorCode::kConfig, "unknown train config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad train config value: ") + e.what());
  }
  return c;
}

std::vector<double> prior_for(const TrainConfig& config, int latent_dim) {
  if (config.prior_spectrum.values.empty()) {
    return std::vector<double>(static_cast<std::size_t>(latent_dim), 1.0);
  }
  return grf::prior_variances(config.prior_spectrum, latent_dim);
}

AdamState make_adam_state(std::size_t n) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(nn::ParamStore& params, std::span<const double> grads, AdamState& state,
               const TrainConfig& config) {
  require(grads.size() == params.size() && state.m.size() == params.size() &&
              state.v.size() == params.size(),
          ErrorCode::kShapeMismatch, "adam_step: size mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!std::isfinite(grads[k])) {
      fail(ErrorCode::kNonFiniteGradient,
           "non-finite gradient in parameter segment '" + params.segment_of(k).name + "'");
    }
  }
  state.t += 1;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto& w = params.values();
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const double g = grads[k];
    state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
    state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    w[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ stream);
  h = splitmix(h ^ a);
  return splitmix(h ^ b);
}

std::vector<Pairing> pair_masks(std::size_t n_patches, std::span<const Mask> mask_pool,
                                std::uint64_t seed, std::int64_t epoch) {
  require(!mask_pool.empty(), ErrorCode::kEmptyMaskPool, "mask pool is empty");
  for (std::size_t k = 0; k < mask_pool.size(); ++k) {
    require(count_holes(mask_pool[k]) > 0, ErrorCode::kInvalidArgument,
            "mask " + std::to_string(k) + " of the pool has no hole pixel");
  }
  std::vector<std::size_t> order(n_patches);
  for (std::size_t k = 0; k < n_patches; ++k) order[k] = k;
  std::mt19937_64 shuffle_rng(derive_seed(seed, kShuffle, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::mt19937_64 mask_rng(derive_seed(seed, kMaskDraw, static_cast<std::uint64_t>(epoch)));
  std::uniform_int_distribution<std::size_t> pick(0, mask_pool.size() - 1);
  std::vector<Pairing> out(n_patches);
  for (std::size_t k = 0; k < n_patches; ++k) out[k] = {order[k], pick(mask_rng)};
  return out;
}

Mask random_irregular_mask(int height, int width, std::uint64_t seed, double max_fraction) {
  require(height >= 1 && width >= 1, ErrorCode::kInvalidArgument, "mask extent must be positive");
  require(max_fraction > 0.0 && max_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "max_fraction must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double total = static_cast<double>(height) * width;
  const auto cap = static_cast<std::size_t>(std::max(1.0, std::floor(max_fraction * total)));
  const auto target = std::min(cap, static_cast<std::size_t>(std::max(
                                        1.0, std::floor((0.5 + 0.5 * u01(rng)) * max_fraction * total))));
  const double max_radius = std::max(1.0, std::min(height, width) / 16.0);
  const double max_len = std::max(2.0, std::max(height, width) / 4.0);
  Mask m(height, width);
  std::size_t holes = 0;
  while (holes < target) {
    double y = u01(rng) * (height - 1);
    double x = u01(rng) * (width - 1);
    const double radius = 0.5 + u01(rng) * max_radius;
    const int vertices = 2 + static_cast<int>(u01(rng) * 6.0);
    draw_disc(m, y, x, radius, holes, cap);
    for (int v = 0; v < vertices && holes < target; ++v) {
      const double angle = u01(rng) * 2.0 * std::numbers::pi;
      const double len = 1.0 + u01(rng) * max_len;
      const int steps = static_cast<int>(std::ceil(len));
      for (int s = 1; s <= steps; ++s) {
        const double ny = std::clamp(y + std::sin(angle) * s * len / steps, 0.0, height - 1.0);
        const double nx = std::clamp(x + std::cos(angle) * s * len / steps, 0.0, width - 1.0);
        draw_disc(m, ny, nx, radius, holes, cap);
      }
      y = std::clamp(y + std::sin(angle) * len, 0.0, height - 1.0);
      x = std::clamp(x + std::cos(angle) * len, 0.0, width - 1.0);
    }
  }
  return m;
}

std::vector<Mask> make_mask_pool(std::size_t count, int height, int width, std::uint64_t seed,
                                 double max_fraction) {
  std::vector<Mask> pool;
  pool.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    pool.push_back(random_irregular_mask(height, width, derive_seed(seed, 0, k), max_fraction));
  }
  return pool;
}

double psnr(double mse, double peak) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

Metrics compute_metrics(const Image& y_hat, const Image& y, double peak) {
  require(y_hat.same_shape(y), ErrorCode::kShapeMismatch, "compute_metrics: shape mismatch");
  require(peak > 0.0, ErrorCode::kInvalidArgument, "compute_metrics: peak must be positive");
  Metrics m;
  if (y.size() == 0) return m;
  double se = 0.0;
  double ae = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = y_hat[k] - y[k];
    se += d * d;
    ae += std::abs(d);
  }
  m.mse = se / static_cast<double>(y.size());
  m.mae = ae / static_cast<double>(y.size());
  m.psnr = psnr(m.mse, peak);
  return m;
}

std::string metrics_csv_header() { return "epoch,step,rec,kl,perceptual,tv,total,mse,mae,psnr"; }

std::string metrics_csv_line(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + fmt(r.loss.rec) + "," +
         fmt(r.loss.kl) + "," + fmt(r.loss.perceptual) + "," + fmt(r.loss.tv) + "," +
         fmt(r.loss.total) + "," + fmt(r.metrics.mse) + "," + fmt(r.metrics.mae) + "," +
         fmt(r.metrics.psnr);
}

void append_metrics_csv(const std::filesystem::path& path, const MetricsRow& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot append to " + path.string());
  if (fresh) out << metrics_csv_header() << '\n';
  out << metrics_csv_line(row) << '\n';
}

losses::LossReport evaluate_loss(const vae::VaeModel& model, std::span<const Patch> patches,
                                 std::span<const Mask> masks, std::span<const double> prior_var,
                                 const losses::FeatureExtractor& extractor,
                                 const losses::LossWeights& weights, std::uint64_t noise_seed,
                                 const losses::CompositeOptions& options) {
  require(patches.size() == masks.size() && !patches.empty(), ErrorCode::kInvalidArgument,
          "evaluate_loss needs one mask per patch");
  losses::LossReport acc;
  const double scale = 1.0 / static_cast<double>(patches.size());
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto noise = vae::standard_normal(prior_var.size(), derive_seed(noise_seed, kEvalNoise, k));
    const auto fw = vae::forward(model, patches[k].image, masks[k], noise);
    const auto r = losses::composite_loss(fw.output, patches[k].image, masks[k], fw.dist, prior_var,
                                          extractor, weights, nullptr, options);
    add_report(acc, r, scale);
  }
  return acc;
}

Trainer::Trainer(vae::VaeModel model, std::vector<Patch> patches, std::vector<Mask> mask_pool,
                 TrainConfig config, losses::FeatureExtractor extractor)
    : model_(std::move(model)),
      patches_(std::move(patches)),
      pool_(std::move(mask_pool)),
      config_(std::move(config)),
      extractor_(std::move(extractor)) {
  engine::validate(config_);
  require(!patches_.empty(), ErrorCode::kInvalidArgument, "no training patches");
  require(!pool_.empty(), ErrorCode::kEmptyMaskPool, "mask pool is empty");
  for (const auto& p : patches_) {
    require(!p.has_holes(), ErrorCode::kInvalidArgument, "training patches must be hole-free");
    require(p.image.rows() == model_.config.height && p.image.cols() == model_.config.width,
            ErrorCode::kShapeMismatch, "training patch size does not match the model");
  }
  for (const auto& m : pool_) {
    require(m.rows() == model_.config.height && m.cols() == model_.config.width,
            ErrorCode::kShapeMismatch, "pool mask size does not match the model");
  }
  prior_var_ = prior_for(config_, model_.config.latent_dim);
  adam_ = make_adam_state(model_.params.size());

  std::vector<std::size_t> order(patches_.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  auto n_val = static_cast<std::size_t>(std::floor(config_.validation_fraction * static_cast<double>(order.size())));
  if (n_val >= order.size()) n_val = 0;
  if (n_val > 0) {
    std::mt19937_64 rng(derive_seed(config_.seed, kSplit));
    std::shuffle(order.begin(), order.end(), rng);
  }
  val_idx_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  train_idx_.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx_.begin(), val_idx_.end());
  std::sort(train_idx_.begin(), train_idx_.end());
  std::mt19937_64 mask_rng(derive_seed(config_.seed, kValMasks));
  std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
  for (std::size_t k = 0; k < val_idx_.size(); ++k) val_masks_.push_back(pick(mask_rng));
  const auto b = static_cast<std::size_t>(config_.batch_size);
  steps_per_epoch_ = static_cast<std::int64_t>((train_idx_.size() + b - 1) / b);
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, std::vector<Patch> patches,
                        std::vector<Mask> mask_pool, TrainConfig config,
                        losses::FeatureExtractor extractor) {
  const Archive a = read_archive(checkpoint);
  vae::VaeModel model = vae::from_archive(a);
  Trainer t(std::move(model), std::move(patches), std::move(mask_pool), std::move(config),
            std::move(extractor));
  require(a.meta.contains("train_state"), ErrorCode::kCorruptArchive,
          "checkpoint lacks training state");
  try {
    t.step_ = a.meta.at("train_state").at("step").get<std::int64_t>();
    t.adam_.t = a.meta.at("train_state").at("adam_t").get<std::int64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptArchive, std::string("bad training state: ") + e.what());
  }
  for (const auto& seg : t.model_.params.segments()) {
    for (auto [prefix, target] : {std::pair{"optimizer.m.", &t.adam_.m}, std::pair{"optimizer.v.", &t.adam_.v}}) {
      const NamedArray* arr = a.find(prefix + seg.name);
      require(arr != nullptr && arr->data.size() == seg.size, ErrorCode::kCorruptArchive,
              "checkpoint lacks optimizer state for " + seg.name);
      std::copy(arr->data.begin(), arr->data.end(),
                target->begin() + static_cast<std::ptrdiff_t>(seg.offset));
    }
  }
  return t;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  Archive a = vae::to_archive(model_);
  a.meta["train_state"] = {{"step", step_}, {"adam_t", adam_.t}, {"seed", config_.seed}};
  a.meta["train_config"] = to_json(config_);
  for (const auto& seg : model_.params.segments()) {
    for (auto [prefix, source] : {std::pair{"optimizer.m.", &adam_.m}, std::pair{"optimizer.v.", &adam_.v}}) {
      NamedArray arr;
      arr.name = prefix + seg.name;
      arr.shape = seg.shape;
      arr.data.assign(source->begin() + static_cast<std::ptrdiff_t>(seg.offset),
                      source->begin() + static_cast<std::ptrdiff_t>(seg.offset + seg.size));
      a.arrays.push_back(std::move(arr));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_archive(path, a);
}

const std::vector<Pairing>& Trainer::pairings_for(std::int64_t epoch) {
  if (epoch != cached_epoch_) {
    cached_pairings_ = pair_masks(train_idx_.size(), pool_, config_.seed, epoch);
    cached_epoch_ = epoch;
  }
  return cached_pairings_;
}

StepResult Trainer::step() {
  const std::int64_t epoch = step_ / steps_per_epoch_;
  const std::int64_t offset = step_ % steps_per_epoch_;
  const auto& pairings = pairings_for(epoch);
  const auto b = static_cast<std::size_t>(config_.batch_size);
  const std::size_t first = static_cast<std::size_t>(offset) * b;
  const std::size_t last = std::min(first + b, pairings.size());
  const std::size_t n = last - first;

  std::vector<SampleWork> work(n);
  std::vector<std::vector<double>> noises(n);
  for (std::size_t k = 0; k < n; ++k) {
    noises[k] = vae::standard_normal(prior_var_.size(),
                                     derive_seed(config_.seed, kNoise, static_cast<std::uint64_t>(step_), k));
  }
  auto job = [&](std::size_t k) {
    const Pairing& p = pairings[first + k];
    work[k] = run_sample(model_, patches_[train_idx_[p.patch]], pool_[p.mask], noises[k],
                         prior_var_, extractor_, config_);
  };
  if (n == 1) {
    job(0);
  } else {
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < n; ++k) {
      threads.emplace_back([&, k] {
        try {
          job(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  StepResult result;
  std::vector<double> grads(model_.params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  double mse = 0.0;
  for (const auto& w : work) {
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += w.grads[i];
    add_report(result.loss, w.loss, scale);
    mse += scale * w.metrics.mse;
    result.metrics.mae += scale * w.metrics.mae;
  }
  for (double& g : grads) g *= scale;
  result.metrics.mse = mse;
  result.metrics.psnr = psnr(mse, config_.peak);
  adam_step(model_.params, grads, adam_, config_);
  ++step_;
  return result;
}

Metrics Trainer::validate() const {
  Metrics m;
  if (val_idx_.empty()) return m;
  const double scale = 1.0 / static_cast<double>(val_idx_.size());
  for (std::size_t k = 0; k < val_idx_.size(); ++k) {
    const auto noise = vae::standard_normal(prior_var_.size(), derive_seed(config_.seed, kValNoise, k));
    const Patch& p = patches_[val_idx_[k]];
    const auto fw = vae::forward(model_, p.image, pool_[val_masks_[k]], noise);
    const Metrics one = compute_metrics(fw.output, p.image, config_.peak);
    m.mse += scale * one.mse;
    m.mae += scale * one.mae;
  }
  m.psnr = psnr(m.mse, config_.peak);
  return m;
}

TrainResult Trainer::run(const std::function<void(const MetricsRow&)>& on_row) {
  TrainResult result;
  std::int64_t limit = static_cast<std::int64_t>(config_.max_epochs) * steps_per_epoch_;
  if (config_.max_steps > 0) limit = std::min(limit, config_.max_steps);

  auto checkpoint = [&] {
    if (!config_.checkpoint_dir) return;
    char name[64];
    std::snprintf(name, sizeof name, "step_%08lld.cvt", static_cast<long long>(step_));
    const auto path = *config_.checkpoint_dir / name;
    save_checkpoint(path);
    result.checkpoints.push_back(path);
  };

  MetricsRow row;
  std::int64_t in_epoch = 0;
  Metrics train_metrics;
  auto flush = [&](std::int64_t epoch) {
    const double scale = 1.0 / static_cast<double>(in_epoch);
    row.loss.rec *= scale;
    row.loss.kl *= scale;
    row.loss.perceptual *= scale;
    row.loss.tv *= scale;
    row.loss.total *= scale;
    row.epoch = epoch;
    row.step = step_;
    if (!val_idx_.empty()) {
      row.metrics = validate();
    } else {
      row.metrics.mse = train_metrics.mse * scale;
      row.metrics.mae = train_metrics.mae * scale;
      row.metrics.psnr = psnr(row.metrics.mse, config_.peak);
    }
    if (config_.metrics_path) append_metrics_csv(*config_.metrics_path, row);
    if (on_row) on_row(row);
    result.history.push_back(row);
    row = MetricsRow{};
    train_metrics = Metrics{};
    in_epoch = 0;
  };

  while (step_ < limit) {
    const std::int64_t epoch = step_ / steps_per_epoch_;
    const StepResult s = step();
    add_report(row.loss, s.loss, 1.0);
    train_metrics.mse += s.metrics.mse;
    train_metrics.mae += s.metrics.mae;
    ++in_epoch;
    if (step_ % steps_per_epoch_ == 0) flush(epoch);
    if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0 && step_ < limit) {
      checkpoint();
    }
  }
  if (in_epoch > 0) flush((step_ - 1) / steps_per_epoch_);
  checkpoint();
  return result;
}

}  // namespace cosmovae::engine
