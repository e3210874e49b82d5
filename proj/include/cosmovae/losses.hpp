#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cosmovae/nn.hpp"
#include "cosmovae/tensor.hpp"
#include "cosmovae/vae.hpp"

namespace cosmovae::losses {

/// Weights of the reconstruction, KL, perceptual and total-variation terms.
struct LossWeights {
  double rec = 6.0;
  double kl = 0.05;
  double perceptual = 0.05;
  double tv = 0.1;

  bool operator==(const LossWeights&) const = default;
};

void validate(const LossWeights& w);

struct LossReport {
  double rec = 0.0;
  double kl = 0.0;
  double perceptual = 0.0;
  double tv = 0.0;
  double total = 0.0;
};

/// Gradients of a composite loss with respect to the prediction and the
/// posterior parameters.
struct LossGradients {
  Image d_y_hat;
  std::vector<double> d_mu;
  std::vector<double> d_log_var;
};

// --- reconstruction ---------------------------------------------------------

/// (1/N)||(1-M)(y_hat - y)||_1 + (1/N)||M(y_hat - y)||_1 with N = C*H*W.
double rec_loss(const Tensor& y_hat, const Tensor& y, const Mask& mask);
double rec_loss(const Image& y_hat, const Image& y, const Mask& mask);
/// Subgradient sign(y_hat - y) / N (zero where equal).
Image rec_loss_grad(const Image& y_hat, const Image& y, const Mask& mask);

// --- KL against the power-spectrum prior ------------------------------------

/// KL(N(mu, sigma^2) || N(0, c^2)) summed over components, c^2 = prior_var.
double kl_loss(const vae::LatentDistribution& dist, std::span<const double> prior_var);
void kl_loss_grad(const vae::LatentDistribution& dist, std::span<const double> prior_var,
                  std::vector<double>& d_mu, std::vector<double>& d_log_var);

// --- perceptual -------------------------------------------------------------

enum class ExtractorMode { kPretrained, kFixedRandom };
enum class PerceptualNorm { kMeanPerElement, kRawSum };

struct FeatureExtractorSpec {
  ExtractorMode mode = ExtractorMode::kFixedRandom;
  int n_stages = 3;
  std::vector<int> stage_widths{16, 32, 64};
  std::vector<int> convs_per_stage{1, 1, 1};
  int in_channels = 3;
  std::uint64_t seed = 7;
  std::optional<std::filesystem::path> weights_path;

  /// Layout of the first three pooling stages of the 16-layer VGG network.
  static FeatureExtractorSpec vgg16_pool3(const std::filesystem::path& weights);
};

nlohmann::json to_json(const FeatureExtractorSpec& spec);
FeatureExtractorSpec extractor_spec_from_json(const nlohmann::json& j);

/// Frozen stack of (conv3x3 + ReLU){convs_per_stage} + 2x2 max-pool stages.
/// Pretrained weights are read from an archive with arrays named
/// "conv<stage>_<index>.weight" [out, in, 3, 3] and "conv<stage>_<index>.bias".
class FeatureExtractor {
 public:
  struct Trace {
    Tensor input;
    std::vector<std::vector<Tensor>> conv_in;   // per stage, per conv
    std::vector<std::vector<Tensor>> conv_pre;
    std::vector<Tensor> pool_in;
    std::vector<Tensor> stage_out;              // Psi_1 .. Psi_n
  };

  const FeatureExtractorSpec& spec() const { return spec_; }
  int n_stages() const { return static_cast<int>(stages_.size()); }

  /// Single-channel image replicated over the input channels, then the
  /// mode's preprocessing (ImageNet mean/std in pretrained mode).
  Tensor preprocess(const Image& image) const;
  std::vector<Tensor> stage_outputs(const Image& image) const;
  Trace trace(const Image& image) const;
  /// d(loss)/d(image) given gradients on each stage output.
  Image backward(const Trace& trace, const std::vector<Tensor>& d_stage_out) const;

  friend FeatureExtractor build_extractor(const FeatureExtractorSpec& spec);

 private:
  FeatureExtractorSpec spec_;
  nn::ParamStore params_;
  std::vector<std::vector<nn::Conv2d>> stages_;
};

FeatureExtractor build_extractor(const FeatureExtractorSpec& spec);

double perceptual_loss(const Image& y_hat, const Image& y, const FeatureExtractor& extractor,
                       PerceptualNorm norm = PerceptualNorm::kMeanPerElement);
Image perceptual_loss_grad(const Image& y_hat, const Image& y, const FeatureExtractor& extractor,
                           PerceptualNorm norm = PerceptualNorm::kMeanPerElement);

// --- total variation --------------------------------------------------------

enum class Connectivity { kEight, kFour };

/// Mask pixels plus every pixel within one step (8- or 4-neighbourhood).
Mask dilate_mask(const Mask& mask, Connectivity connectivity = Connectivity::kEight);

/// Absolute horizontal and vertical neighbour differences with both endpoints
/// in region, divided by n_hole; 0 for an empty region.
double tv_loss(const Image& y_hat, const Mask& region, int n_hole);
Image tv_loss_grad(const Image& y_hat, const Mask& region, int n_hole);

// --- composite --------------------------------------------------------------

struct CompositeOptions {
  PerceptualNorm perceptual_norm = PerceptualNorm::kMeanPerElement;
  Connectivity dilation = Connectivity::kEight;
};

/// Weighted sum of the four terms. When grads is non-null it receives the
/// gradient of the total.
LossReport composite_loss(const Image& y_hat, const Image& y, const Mask& mask,
                          const vae::LatentDistribution& dist, std::span<const double> prior_var,
                          const FeatureExtractor& extractor, const LossWeights& weights,
                          LossGradients* grads = nullptr, const CompositeOptions& options = {});

}  // namespace cosmovae::losses
