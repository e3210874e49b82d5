#include "cosmovae/losses.hpp"

#include <cmath>
#include <random>

#include "cosmovae/archive.hpp"
#include "cosmovae/error.hpp"

namespace cosmovae::losses {
namespace {

using nlohmann::json;

constexpr double kImageNetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImageNetStd[3] = {0.229, 0.224, 0.225};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_same(const Image& a, const Image& b, const char* what) {
  require(a.same_shape(b), ErrorCode::kShapeMismatch, std::string(what) + ": shape mismatch");
}

std::string conv_name(int stage, int index) {
  return "conv" + std::to_string(stage + 1) + "_" + std::to_string(index + 1);
}

}  // namespace

void validate(const LossWeights& w) {
  require(w.rec >= 0.0 && w.kl >= 0.0 && w.perceptual >= 0.0 && w.tv >= 0.0,
          ErrorCode::kInvalidArgument, "loss weights must be non-negative");
  require(w.rec + w.kl + w.perceptual + w.tv > 0.0, ErrorCode::kInvalidArgument,
          "at least one loss weight must be positive");
}

double rec_loss(const Tensor& y_hat, const Tensor& y, const Mask& mask) {
  require(y_hat.same_shape(y) && mask.rows() == y.height() && mask.cols() == y.width(),
          ErrorCode::kShapeMismatch, "rec_loss: shape mismatch");
  const double n = static_cast<double>(y.size());
  double valid = 0.0;
  double hole = 0.0;
  for (int c = 0; c < y.channels(); ++c) {
    for (int i = 0; i < y.height(); ++i) {
      for (int j = 0; j < y.width(); ++j) {
        const double d = std::abs(y_hat(c, i, j) - y(c, i, j));
        const double m = mask(i, j) != 0 ? 1.0 : 0.0;
        valid += (1.0 - m) * d;
        hole += m * d;
      }
    }
  }
  return valid / n + hole / n;
}

double rec_loss(const Image& y_hat, const Image& y, const Mask& mask) {
  check_same(y_hat, y, "rec_loss");
  return rec_loss(to_tensor(y_hat), to_tensor(y), mask);
}

Image rec_loss_grad(const Image& y_hat, const Image& y, const Mask& mask) {
  check_same(y_hat, y, "rec_loss");
  require(mask.same_shape(y), ErrorCode::kShapeMismatch, "rec_loss: mask shape mismatch");
  Image g(y.rows(), y.cols());
  const double n = static_cast<double>(y.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = sign(y_hat[k] - y[k]) / n;
  return g;
}

double kl_loss(const vae::LatentDistribution& dist, std::span<const double> prior_var) {
  require(dist.mu.size() == prior_var.size() && dist.log_var.size() == prior_var.size(),
          ErrorCode::kShapeMismatch, "kl_loss: length mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < prior_var.size(); ++k) {
    const double c2 = prior_var[k];
    require(c2 > 0.0, ErrorCode::kInvalidArgument, "kl_loss: prior variance must be positive");
    const double s2 = std::exp(dist.log_var[k]);
    sum += std::log(c2) - dist.log_var[k] - 1.0 + (s2 + dist.mu[k] * dist.mu[k]) / c2;
  }
  return 0.5 * sum;
}

void kl_loss_grad(const vae::LatentDistribution& dist, std::span<const double> prior_var,
                  std::vector<double>& d_mu, std::vector<double>& d_log_var) {
  require(dist.mu.size() == prior_var.size() && dist.log_var.size() == prior_var.size(),
          ErrorCode::kShapeMismatch, "kl_loss: length mismatch");
  d_mu.resize(prior_var.size());
  d_log_var.resize(prior_var.size());
  for (std::size_t k = 0; k < prior_var.size(); ++k) {
    const double c2 = prior_var[k];
    d_mu[k] = dist.mu[k] / c2;
    d_log_var[k] = 0.5 * (std::exp(dist.log_var[k]) / c2 - 1.0);
  }
}

FeatureExtractorSpec FeatureExtractorSpec::vgg16_pool3(const std::filesystem::path& weights) {
  FeatureExtractorSpec s;
  s.mode = ExtractorMode::kPretrained;
  s.n_stages = 3;
  s.stage_widths = {64, 128, 256};
  s.convs_per_stage = {2, 2, 3};
  s.in_channels = 3;
  s.weights_path = weights;
  return s;
}

json to_json(const FeatureExtractorSpec& s) {
  json j = {{"mode", s.mode == ExtractorMode::kPretrained ? "pretrained" : "fixed_random"},
            {"n_stages", s.n_stages},
            {"stage_widths", s.stage_widths},
            {"convs_per_stage", s.convs_per_stage},
            {"in_channels", s.in_channels},
            {"seed", s.seed}};
  if (s.weights_path) j["weights_path"] = s.weights_path->string();
  return j;
}

FeatureExtractorSpec extractor_spec_from_json(const json& j) {
  require(j.is_object(), ErrorCode::kConfig, "extractor config must be an object");
  FeatureExtractorSpec s;
  try {
    if (j.contains("mode") && j.at("mode") == "pretrained") {
      s = FeatureExtractorSpec::vgg16_pool3("");
      s.weights_path.reset();
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "mode") {
        const auto m = value.get<std::string>();
        require(m == "pretrained" || m == "fixed_random", ErrorCode::kConfig,
                "extractor mode must be pretrained|fixed_random");
      } else if (key == "n_stages") s.n_stages = value.get<int>();
      else if (key == "stage_widths") s.stage_widths = value.get<std::vector<int>>();
      else if (key == "convs_per_stage") s.convs_per_stage = value.get<std::vector<int>>();
      else if (key == "in_channels") s.in_channels = value.get<int>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "weights_path") s.weights_path = value.get<std::string>();
      else fail(ErrorCode::kConfig, "unknown extractor config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad extractor config value: ") + e.what());
  }
  return s;
}

FeatureExtractor build_extractor(const FeatureExtractorSpec& spec) {
  require(spec.n_stages >= 1 && static_cast<int>(spec.stage_widths.size()) == spec.n_stages &&
              static_cast<int>(spec.convs_per_stage.size()) == spec.n_stages,
          ErrorCode::kInvalidArgument, "extractor stage lists must have n_stages entries");
  require(spec.in_channels >= 1, ErrorCode::kInvalidArgument, "extractor needs input channels");
  FeatureExtractor fx;
  fx.spec_ = spec;
  int channels = spec.in_channels;
  for (int s = 0; s < spec.n_stages; ++s) {
    std::vector<nn::Conv2d> convs;
    require(spec.convs_per_stage[static_cast<std::size_t>(s)] >= 1, ErrorCode::kInvalidArgument,
            "every extractor stage needs a convolution");
    for (int c = 0; c < spec.convs_per_stage[static_cast<std::size_t>(s)]; ++c) {
      const int out = spec.stage_widths[static_cast<std::size_t>(s)];
      convs.push_back(nn::Conv2d::create(fx.params_, conv_name(s, c), channels, out, 3, 1));
      channels = out;
    }
    fx.stages_.push_back(std::move(convs));
  }

  if (spec.mode == ExtractorMode::kFixedRandom) {
    std::mt19937_64 rng(spec.seed);
    for (const auto& stage : fx.stages_) {
      for (const auto& conv : stage) {
        const double bound = std::sqrt(6.0 / static_cast<double>(conv.fan_in()));
        std::uniform_real_distribution<double> u(-bound, bound);
        const std::size_t n = static_cast<std::size_t>(conv.out_channels) * conv.fan_in();
        for (std::size_t k = 0; k < n; ++k) fx.params_.values()[conv.weight_offset + k] = u(rng);
      }
    }
    return fx;
  }

  require(spec.weights_path.has_value() && std::filesystem::exists(*spec.weights_path),
          ErrorCode::kIo, "pretrained extractor needs a readable weights file");
  const Archive archive = read_archive(*spec.weights_path);
  for (const auto& seg : fx.params_.segments()) {
    const NamedArray* a = archive.find(seg.name);
    require(a != nullptr, ErrorCode::kCorruptArchive, "extractor weights lack " + seg.name);
    require(a->shape == seg.shape, ErrorCode::kCorruptArchive,
            "extractor weights " + seg.name + " have the wrong shape");
    for (double v : a->data) {
      require(std::isfinite(v), ErrorCode::kCorruptArchive, "non-finite extractor weight in " + seg.name);
    }
    std::copy(a->data.begin(), a->data.end(), fx.params_.view(seg).begin());
  }
  return fx;
}

Tensor FeatureExtractor::preprocess(const Image& image) const {
  Tensor t(spec_.in_channels, image.rows(), image.cols());
  const bool imagenet = spec_.mode == ExtractorMode::kPretrained && spec_.in_channels == 3;
  for (int c = 0; c < spec_.in_channels; ++c) {
    for (int i = 0; i < image.rows(); ++i) {
      for (int j = 0; j < image.cols(); ++j) {
        const double v = image(i, j);
        t(c, i, j) = imagenet ? (v - kImageNetMean[c]) / kImageNetStd[c] : v;
      }
    }
  }
  return t;
}

FeatureExtractor::Trace FeatureExtractor::trace(const Image& image) const {
  Trace t;
  t.input = preprocess(image);
  const double* p = params_.data();
  Tensor x = t.input;
  for (const auto& stage : stages_) {
    std::vector<Tensor> ins;
    std::vector<Tensor> pres;
    for (const auto& conv : stage) {
      Tensor pre = conv.forward(p, x);
      ins.push_back(std::move(x));
      x = pre;
      nn::activate_inplace(nn::Activation::kRelu, x.span());
      pres.push_back(std::move(pre));
    }
    t.conv_in.push_back(std::move(ins));
    t.conv_pre.push_back(std::move(pres));
    Tensor pooled = nn::max_pool2(x);
    t.pool_in.push_back(std::move(x));
    x = pooled;
    t.stage_out.push_back(std::move(pooled));
  }
  return t;
}

std::vector<Tensor> FeatureExtractor::stage_outputs(const Image& image) const {
  return trace(image).stage_out;
}

Image FeatureExtractor::backward(const Trace& t, const std::vector<Tensor>& d_stage_out) const {
  require(d_stage_out.size() == stages_.size(), ErrorCode::kShapeMismatch,
          "one gradient per extractor stage expected");
  // Parameters are frozen: their gradients go to a scratch buffer.
  std::vector<double> scratch(params_.size(), 0.0);
  const double* p = params_.data();
  Tensor d_x;
  for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
    const auto su = static_cast<std::size_t>(s);
    Tensor d_pool = d_stage_out[su];
    if (d_x.size() != 0) {
      for (std::size_t k = 0; k < d_pool.size(); ++k) d_pool[k] += d_x[k];
    }
    d_x = nn::max_pool2_backward(t.pool_in[su], d_pool);
    for (int c = static_cast<int>(stages_[su].size()) - 1; c >= 0; --c) {
      const auto cu = static_cast<std::size_t>(c);
      nn::activate_backward(nn::Activation::kRelu, t.conv_pre[su][cu].span(), d_x.span());
      d_x = stages_[su][cu].backward(p, t.conv_in[su][cu], d_x, scratch.data(), true);
    }
  }
  const bool imagenet = spec_.mode == ExtractorMode::kPretrained && spec_.in_channels == 3;
  Image d_image(t.input.height(), t.input.width());
  for (int c = 0; c < d_x.channels(); ++c) {
    const double scale = imagenet ? 1.0 / kImageNetStd[c] : 1.0;
    for (int i = 0; i < d_x.height(); ++i) {
      for (int j = 0; j < d_x.width(); ++j) d_image(i, j) += scale * d_x(c, i, j);
    }
  }
  return d_image;
}

double perceptual_loss(const Image& y_hat, const Image& y, const FeatureExtractor& extractor,
                       PerceptualNorm norm) {
  check_same(y_hat, y, "perceptual_loss");
  const auto a = extractor.stage_outputs(y_hat);
  const auto b = extractor.stage_outputs(y);
  double total = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    double sum = 0.0;
    for (std::size_t k = 0; k < a[s].size(); ++k) sum += std::abs(a[s][k] - b[s][k]);
    total += norm == PerceptualNorm::kMeanPerElement ? sum / static_cast<double>(a[s].size()) : sum;
  }
  return total;
}

Image perceptual_loss_grad(const Image& y_hat, const Image& y, const FeatureExtractor& extractor,
                           PerceptualNorm norm) {
  check_same(y_hat, y, "perceptual_loss");
  const auto trace = extractor.trace(y_hat);
  const auto target = extractor.stage_outputs(y);
  std::vector<Tensor> d(trace.stage_out.size());
  for (std::size_t s = 0; s < d.size(); ++s) {
    const Tensor& out = trace.stage_out[s];
    d[s] = Tensor(out.channels(), out.height(), out.width());
    const double scale = norm == PerceptualNorm::kMeanPerElement ? 1.0 / static_cast<double>(out.size()) : 1.0;
    for (std::size_t k = 0; k < out.size(); ++k) d[s][k] = scale * sign(out[k] - target[s][k]);
  }
  return extractor.backward(trace, d);
}

Mask dilate_mask(const Mask& mask, Connectivity connectivity) {
  Mask out(mask.rows(), mask.cols());
  for (int i = 0; i < mask.rows(); ++i) {
    for (int j = 0; j < mask.cols(); ++j) {
      require(mask(i, j) <= 1, ErrorCode::kNonBinaryMask, "dilate_mask: non-binary mask");
      if (mask(i, j) == 0) continue;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (connectivity == Connectivity::kFour && di != 0 && dj != 0) continue;
          const int a = i + di;
          const int b = j + dj;
          if (a >= 0 && a < mask.rows() && b >= 0 && b < mask.cols()) out(a, b) = 1;
        }
      }
    }
  }
  return out;
}

double tv_loss(const Image& y_hat, const Mask& region, int n_hole) {
  require(region.same_shape(y_hat), ErrorCode::kShapeMismatch, "tv_loss: shape mismatch");
  double sum = 0.0;
  bool any = false;
  for (int i = 0; i < y_hat.rows(); ++i) {
    for (int j = 0; j < y_hat.cols(); ++j) {
      if (region(i, j) == 0) continue;
      any = true;
      if (j + 1 < y_hat.cols() && region(i, j + 1) != 0) sum += std::abs(y_hat(i, j + 1) - y_hat(i, j));
      if (i + 1 < y_hat.rows() && region(i + 1, j) != 0) sum += std::abs(y_hat(i + 1, j) - y_hat(i, j));
    }
  }
  if (!any) return 0.0;
  require(n_hole >= 1, ErrorCode::kInvalidArgument, "tv_loss: n_hole must be >= 1 for a nonempty region");
  return sum / static_cast<double>(n_hole);
}

Image tv_loss_grad(const Image& y_hat, const Mask& region, int n_hole) {
  require(region.same_shape(y_hat), ErrorCode::kShapeMismatch, "tv_loss: shape mismatch");
  Image g(y_hat.rows(), y_hat.cols());
  bool any = false;
  for (std::size_t k = 0; k < region.size(); ++k) any = any || region[k] != 0;
  if (!any) return g;
  require(n_hole >= 1, ErrorCode::kInvalidArgument, "tv_loss: n_hole must be >= 1 for a nonempty region");
  const double inv = 1.0 / static_cast<double>(n_hole);
  for (int i = 0; i < y_hat.rows(); ++i) {
    for (int j = 0; j < y_hat.cols(); ++j) {
      if (region(i, j) == 0) continue;
      if (j + 1 < y_hat.cols() && region(i, j + 1) != 0) {
        const double s = sign(y_hat(i, j + 1) - y_hat(i, j)) * inv;
        g(i, j + 1) += s;
        g(i, j) -= s;
      }
      if (i + 1 < y_hat.rows() && region(i + 1, j) != 0) {
        const double s = sign(y_hat(i + 1, j) - y_hat(i, j)) * inv;
        g(i + 1, j) += s;
        g(i, j) -= s;
      }
    }
  }
  return g;
}

LossReport composite_loss(const Image& y_hat, const Image& y, const Mask& mask,
                          const vae::LatentDistribution& dist, std::span<const double> prior_var,
                          const FeatureExtractor& extractor, const LossWeights& weights,
                          LossGradients* grads, const CompositeOptions& options) {
  validate(weights);
  int n_hole = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) n_hole += mask[k] != 0 ? 1 : 0;
  const Mask region = dilate_mask(mask, options.dilation);

  LossReport r;
  r.rec = rec_loss(y_hat, y, mask);
  r.kl = kl_loss(dist, prior_var);
  r.perceptual = perceptual_loss(y_hat, y, extractor, options.perceptual_norm);
  r.tv = tv_loss(y_hat, region, n_hole);
  r.total = weights.rec * r.rec + weights.kl * r.kl + weights.perceptual * r.perceptual +
            weights.tv * r.tv;
  const std::pair<const char*, double> terms[] = {
      {"rec", r.rec}, {"kl", r.kl}, {"perceptual", r.perceptual}, {"tv", r.tv}};
  for (const auto& [name, value] : terms) {
    require(std::isfinite(value), ErrorCode::kNonFiniteLoss,
            std::string("non-finite loss term '") + name + "'");
  }

  if (grads != nullptr) {
    grads->d_y_hat = Image(y.rows(), y.cols());
    if (weights.rec != 0.0) {
      const Image g = rec_loss_grad(y_hat, y, mask);
      for (std::size_t k = 0; k < g.size(); ++k) grads->d_y_hat[k] += weights.rec * g[k];
    }
    if (weights.perceptual != 0.0) {
      const Image g = perceptual_loss_grad(y_hat, y, extractor, options.perceptual_norm);
      for (std::size_t k = 0; k < g.size(); ++k) grads->d_y_hat[k] += weights.perceptual * g[k];
    }
    if (weights.tv != 0.0) {
      const Image g = tv_loss_grad(y_hat, region, n_hole);
      for (std::size_t k = 0; k < g.size(); ++k) grads->d_y_hat[k] += weights.tv * g[k];
    }
    kl_loss_grad(dist, prior_var, grads->d_mu, grads->d_log_var);
    for (double& v : grads->d_mu) v *= weights.kl;
    for (double& v : grads->d_log_var) v *= weights.kl;
  }
  return r;
}

}  // namespace cosmovae::losses
