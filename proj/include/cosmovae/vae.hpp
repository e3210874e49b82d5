#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "cosmovae/archive.hpp"
#include "cosmovae/nn.hpp"
#include "cosmovae/patch.hpp"
#include "cosmovae/tensor.hpp"

namespace cosmovae::vae {

/// How stride-2 blocks treat extents that are not a multiple of 2^depth.
/// kSame follows "same" padding (each level is ceil(n / 2)) and the decoder
/// upsamples back to the mirror level's exact extent; kStrict rejects inputs
/// not divisible by 2^depth.
enum class SizePolicy { kSame, kStrict };

struct ModelConfig {
  int height = 64;
  int width = 64;
  int in_channels = 2;  // 2: masked image + mask channel; 1: masked image only
  std::vector<int> encoder_widths{64, 128, 256, 512, 512, 512};
  std::vector<int> decoder_widths{512, 512, 512, 256, 128, 64};
  int fc_layers = 3;
  int fc_width = 512;
  int latent_dim = 64;
  bool skip_connections = true;
  std::uint64_t seed = 0;
  SizePolicy size_policy = SizePolicy::kSame;

  /// Full-size configuration: 400x400 input, 2507 latent components.
  static ModelConfig paper();

  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);
nlohmann::json to_json(const ModelConfig& config);
/// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LevelShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool operator==(const LevelShape&) const = default;
};

/// Encoder activation shapes e_0 (the network input) .. e_depth (bottleneck).
std::vector<LevelShape> encoder_shapes(const ModelConfig& config);

inline constexpr double kLogVarClamp = 20.0;

struct LatentDistribution {
  std::vector<double> mu;
  std::vector<double> log_var;  // clamped to [-20, 20]
};

class VaeModel {
 public:
  ModelConfig config;
  nn::ParamStore params;
  std::vector<LevelShape> levels;
  std::vector<nn::Conv2d> encoder_convs;
  std::vector<nn::Dense> encoder_fc;
  std::vector<nn::Dense> decoder_fc;
  std::vector<nn::Conv2d> decoder_convs;
  nn::Conv2d output_conv;

  int depth() const { return static_cast<int>(encoder_convs.size()); }
  std::size_t parameter_count() const { return params.size(); }
};

/// Layers and parameter layout for config with all weights zero.
VaeModel build_architecture(const ModelConfig& config);
/// Fan-in scaled uniform kernels (deterministic in config.seed), zero biases.
VaeModel init_model(const ModelConfig& config);

/// Activations e_0 .. e_{depth-1} consumed by the decoder's skip connections.
using SkipFeatures = std::vector<Tensor>;

struct Encoding {
  LatentDistribution dist;
  SkipFeatures skips;
};

/// Network input with holes zeroed: channel 0 = image where mask == 0, else 0;
/// channel 1 = mask (when in_channels == 2).
Tensor make_input(const ModelConfig& config, const Image& image, const Mask& mask);

Encoding encode(const VaeModel& model, const Image& image, const Mask& mask);
std::vector<double> reparameterize(const LatentDistribution& dist, std::span<const double> noise);
Image decode(const VaeModel& model, std::span<const double> z, const SkipFeatures& skips);

struct ForwardResult {
  Image output;
  LatentDistribution dist;
};

ForwardResult forward(const VaeModel& model, const Image& image, const Mask& mask,
                      std::span<const double> noise);
ForwardResult forward(const VaeModel& model, const Patch& patch, std::span<const double> noise);

/// Every intermediate needed by backward().
struct ForwardTrace {
  std::vector<Tensor> enc_act;  // e_0 .. e_depth
  std::vector<Tensor> enc_pre;  // pre-activations of blocks 1..depth
  std::vector<std::vector<double>> enc_fc_in;
  std::vector<std::vector<double>> enc_fc_pre;
  std::vector<double> raw_log_var;
  LatentDistribution dist;
  std::vector<double> noise;
  std::vector<double> z;
  std::vector<std::vector<double>> dec_fc_in;
  std::vector<std::vector<double>> dec_fc_pre;
  Tensor bottleneck;
  std::vector<Tensor> dec_in;   // upsampled (+ skip) input of each decoder block
  std::vector<Tensor> dec_pre;
  std::vector<Tensor> dec_act;
  Tensor out_pre;
  Image output;
};

ForwardTrace forward_trace(const VaeModel& model, const Image& image, const Mask& mask,
                           std::span<const double> noise);
/// Decoder-only trace for a given latent vector (enc_act must hold the skips).
void decode_trace(const VaeModel& model, ForwardTrace& trace);

/// Reverse pass. d_output is d(loss)/d(output image); d_mu and d_log_var are
/// extra direct gradients (e.g. from the KL term) and may be empty. Parameter
/// gradients are accumulated into grads (same layout as model.params).
/// When d_z is non-null it receives d(loss)/d(z) from the decoder alone.
void backward(const VaeModel& model, const ForwardTrace& trace, const Image& d_output,
              std::span<const double> d_mu, std::span<const double> d_log_var,
              std::span<double> grads, std::vector<double>* d_z = nullptr);

/// n independent standard normal draws from a seeded generator.
std::vector<double> standard_normal(std::size_t n, std::uint64_t seed);

/// Checkpoint container: one named array per parameter segment plus the
/// config under meta["model_config"]. Loading validates shape by shape.
Archive to_archive(const VaeModel& model);
VaeModel from_archive(const Archive& archive);
void save_model(const std::filesystem::path& path, const VaeModel& model);
VaeModel load_model(const std::filesystem::path& path);

}  // namespace cosmovae::vae
