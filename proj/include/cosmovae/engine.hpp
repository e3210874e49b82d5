#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosmovae/grf.hpp"
#include "cosmovae/losses.hpp"
#include "cosmovae/patch.hpp"
#include "cosmovae/vae.hpp"

namespace cosmovae::engine {

struct TrainConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 4;
  int max_epochs = 1000;
  std::int64_t max_steps = 0;  // 0: bounded by max_epochs only
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  /// Prior C_ell per latent component; empty means unit variances.
  grf::PowerSpectrum prior_spectrum;
  std::int64_t checkpoint_every = 0;  // optimizer steps; 0: final checkpoint only
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> metrics_path;
  double validation_fraction = 0.1;
  double peak = 1.0;
  losses::CompositeOptions loss_options;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
/// Rejects unknown keys. prior_spectrum is not part of the document.
TrainConfig train_config_from_json(const nlohmann::json& j);

std::vector<double> prior_for(const TrainConfig& config, int latent_dim);

// --- optimizer --------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  bool operator==(const AdamState&) const = default;
};

AdamState make_adam_state(std::size_t n);

/// One bias-corrected Adam update. A non-finite gradient raises
/// kNonFiniteGradient naming its parameter segment; params are untouched then.
void adam_step(nn::ParamStore& params, std::span<const double> grads, AdamState& state,
               const TrainConfig& config);

// --- data -------------------------------------------------------------------

/// Stateless 64-bit mix of a seed with stream coordinates.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

struct Pairing {
  std::size_t patch = 0;
  std::size_t mask = 0;

  bool operator==(const Pairing&) const = default;
};

/// One epoch: every patch once in a seeded shuffled order, each with a mask
/// drawn uniformly from the pool.
std::vector<Pairing> pair_masks(std::size_t n_patches, std::span<const Mask> mask_pool,
                                std::uint64_t seed, std::int64_t epoch);

/// Irregular hole made of random thick strokes covering between half of and
/// all of max_fraction of the image, and at least one pixel.
Mask random_irregular_mask(int height, int width, std::uint64_t seed, double max_fraction = 0.25);
std::vector<Mask> make_mask_pool(std::size_t count, int height, int width, std::uint64_t seed,
                                 double max_fraction = 0.25);

// --- metrics ----------------------------------------------------------------

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double psnr = 0.0;  // +inf when mse == 0
};

double psnr(double mse, double peak);
Metrics compute_metrics(const Image& y_hat, const Image& y, double peak);

struct MetricsRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  losses::LossReport loss;
  Metrics metrics;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);
void append_metrics_csv(const std::filesystem::path& path, const MetricsRow& row);

// --- training ---------------------------------------------------------------

struct StepResult {
  losses::LossReport loss;
  Metrics metrics;  // of the raw network outputs against the targets
};

/// Mean composite loss of the model over fixed (patch, mask) pairs with
/// seeded latent noise.
losses::LossReport evaluate_loss(const vae::VaeModel& model, std::span<const Patch> patches,
                                 std::span<const Mask> masks, std::span<const double> prior_var,
                                 const losses::FeatureExtractor& extractor,
                                 const losses::LossWeights& weights, std::uint64_t noise_seed,
                                 const losses::CompositeOptions& options = {});

struct TrainResult {
  std::vector<MetricsRow> history;
  std::vector<std::filesystem::path> checkpoints;
};

class Trainer {
 public:
  Trainer(vae::VaeModel model, std::vector<Patch> patches, std::vector<Mask> mask_pool,
          TrainConfig config, losses::FeatureExtractor extractor);

  /// Restores model, optimizer moments and step counter from a checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint, std::vector<Patch> patches,
                        std::vector<Mask> mask_pool, TrainConfig config,
                        losses::FeatureExtractor extractor);

  const vae::VaeModel& model() const { return model_; }
  const AdamState& optimizer() const { return adam_; }
  const TrainConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t train_size() const { return train_idx_.size(); }
  std::size_t validation_size() const { return val_idx_.size(); }

  StepResult step();
  /// Steps until max_epochs / max_steps; one metrics row per finished epoch
  /// (and one for a final partial epoch).
  TrainResult run(const std::function<void(const MetricsRow&)>& on_row = {});
  Metrics validate() const;

  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  const std::vector<Pairing>& pairings_for(std::int64_t epoch);

  vae::VaeModel model_;
  std::vector<Patch> patches_;
  std::vector<Mask> pool_;
  TrainConfig config_;
  losses::FeatureExtractor extractor_;
  std::vector<double> prior_var_;
  AdamState adam_;
  std::int64_t step_ = 0;
  std::vector<std::size_t> train_idx_;
  std::vector<std::size_t> val_idx_;
  std::vector<std::size_t> val_masks_;
  std::int64_t steps_per_epoch_ = 1;
  std::int64_t cached_epoch_ = -1;
  std::vector<Pairing> cached_pairings_;
};

}  // namespace cosmovae::engine
