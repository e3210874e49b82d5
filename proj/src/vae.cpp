#include "cosmovae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cosmovae/error.hpp"

namespace cosmovae::vae {
namespace {

using nlohmann::json;
using nn::Activation;

constexpr Activation kEncoderAct = Activation::kLeakyRelu;
constexpr Activation kDecoderAct = Activation::kRelu;
constexpr Activation kOutputAct = Activation::kSigmoid;

const char* policy_name(SizePolicy p) { return p == SizePolicy::kSame ? "same" : "strict"; }

std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

Tensor as_tensor(const std::vector<double>& flat, const LevelShape& shape) {
  Tensor t(shape.channels, shape.height, shape.width);
  require(flat.size() == t.size(), ErrorCode::kShapeMismatch, "bottleneck size mismatch");
  std::copy(flat.begin(), flat.end(), t.values().begin());
  return t;
}

int skip_channels(const VaeModel& m, int block) {
  // Decoder block j (0-based) mirrors encoder level depth-1-j.
  return m.config.skip_connections ? m.levels[static_cast<std::size_t>(m.depth() - 1 - block)].channels : 0;
}

}  // namespace

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.height = 400;
  c.width = 400;
  c.latent_dim = 2507;
  return c;
}

void validate(const ModelConfig& c) {
  require(c.height > 0 && c.width > 0, ErrorCode::kInvalidArgument, "input extent must be positive");
  require(c.in_channels == 1 || c.in_channels == 2, ErrorCode::kInvalidArgument,
          "in_channels must be 1 (masked image) or 2 (masked image + mask)");
  require(!c.encoder_widths.empty(), ErrorCode::kInvalidArgument, "encoder needs at least one block");
  for (int w : c.encoder_widths) {
    require(w > 0, ErrorCode::kInvalidArgument, "encoder widths must be positive");
  }
  std::vector<int> reversed(c.encoder_widths.rbegin(), c.encoder_widths.rend());
  require(reversed == c.decoder_widths, ErrorCode::kInvalidArgument,
          "decoder widths must mirror the encoder widths");
  require(c.fc_layers >= 1 && c.fc_width >= 1 && c.latent_dim >= 1, ErrorCode::kInvalidArgument,
          "fc_layers, fc_width and latent_dim must be positive");
  if (c.size_policy == SizePolicy::kStrict) {
    const int div = 1 << c.encoder_widths.size();
    require(c.height % div == 0 && c.width % div == 0, ErrorCode::kIndivisibleInput,
            "input " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                " not divisible by 2^" + std::to_string(c.encoder_widths.size()) + " = " +
                std::to_string(div));
  }
}

json to_json(const ModelConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"in_channels", c.in_channels},
          {"encoder_widths", c.encoder_widths},
          {"decoder_widths", c.decoder_widths},
          {"fc_layers", c.fc_layers},
          {"fc_width", c.fc_width},
          {"latent_dim", c.latent_dim},
          {"skip_connections", c.skip_connections},
          {"seed", c.seed},
          {"size_policy", policy_name(c.size_policy)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  require(j.is_object(), ErrorCode::kConfig, "model config must be an object");
  bool decoder_given = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "height") c.height = value.get<int>();
      else if (key == "width") c.width = value.get<int>();
      else if (key == "in_channels") c.in_channels = value.get<int>();
      else if (key == "encoder_widths") c.encoder_widths = value.get<std::vector<int>>();
      else if (key == "decoder_widths") {
        c.decoder_widths = value.get<std::vector<int>>();
        decoder_given = true;
      } else if (key == "fc_layers") c.fc_layers = value.get<int>();
      else if (key == "fc_width") c.fc_width = value.get<int>();
      else if (key == "latent_dim") c.latent_dim = value.get<int>();
      else if (key == "skip_connections") c.skip_connections = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "size_policy") {
        const auto s = value.get<std::string>();
        require(s == "same" || s == "strict", ErrorCode::kConfig, "size_policy must be same|strict");
        c.size_policy = s == "same" ? SizePolicy::kSame : SizePolicy::kStrict;
      } else {
        fail(ErrorCode::kConfig, "unknown model config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad model config value: ") + e.what());
  }
  if (!decoder_given) c.decoder_widths.assign(c.encoder_widths.rbegin(), c.encoder_widths.rend());
  return c;
}

std::vector<LevelShape> encoder_shapes(const ModelConfig& c) {
  std::vector<LevelShape> shapes;
  shapes.push_back({c.in_channels, c.height, c.width});
  for (int w : c.encoder_widths) {
    const LevelShape& prev = shapes.back();
    shapes.push_back({w, (prev.height + 1) / 2, (prev.width + 1) / 2});
  }
  return shapes;
}

VaeModel build_architecture(const ModelConfig& config) {
  validate(config);
  VaeModel m;
  m.config = config;
  m.levels = encoder_shapes(config);
  const int depth = static_cast<int>(config.encoder_widths.size());
  for (int k = 0; k < depth; ++k) {
    m.encoder_convs.push_back(nn::Conv2d::create(
        m.params, "encoder.block" + std::to_string(k + 1) + ".conv",
        m.levels[static_cast<std::size_t>(k)].channels, config.encoder_widths[static_cast<std::size_t>(k)], 3, 2));
  }
  const LevelShape& b = m.levels.back();
  const int flat = b.channels * b.height * b.width;
  for (int i = 0; i < config.fc_layers; ++i) {
    const int in = i == 0 ? flat : config.fc_width;
    const int out = i == config.fc_layers - 1 ? 2 * config.latent_dim : config.fc_width;
    m.encoder_fc.push_back(nn::Dense::create(m.params, "encoder.fc" + std::to_string(i + 1), in, out));
  }
  for (int i = 0; i < config.fc_layers; ++i) {
    const int in = i == 0 ? config.latent_dim : config.fc_width;
    const int out = i == config.fc_layers - 1 ? flat : config.fc_width;
    m.decoder_fc.push_back(nn::Dense::create(m.params, "decoder.fc" + std::to_string(i + 1), in, out));
  }
  int channels = b.channels;
  for (int j = 0; j < depth; ++j) {
    const int in = channels + skip_channels(m, j);
    const int out = config.decoder_widths[static_cast<std::size_t>(j)];
    m.decoder_convs.push_back(
        nn::Conv2d::create(m.params, "decoder.block" + std::to_string(j + 1) + ".conv", in, out, 3, 1));
    channels = out;
  }
  m.output_conv = nn::Conv2d::create(m.params, "decoder.output.conv", channels, 1, 1, 1);
  return m;
}

VaeModel init_model(const ModelConfig& config) {
  VaeModel m = build_architecture(config);
  std::mt19937_64 rng(config.seed);
  // Fan-in uniform with the gain of the nonlinearity that follows the layer.
  const double relu_gain = 2.0;
  const double leaky_gain = 2.0 / (1.0 + nn::kLeakySlope * nn::kLeakySlope);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in, double gain) {
    const double bound = std::sqrt(3.0 * gain / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = 0; k < count; ++k) m.params.values()[offset + k] = u(rng);
  };
  auto fill_conv = [&](const nn::Conv2d& c, double gain) {
    fill(c.weight_offset, static_cast<std::size_t>(c.out_channels) * c.fan_in(), c.fan_in(), gain);
  };
  auto fill_dense = [&](const nn::Dense& d, double gain) {
    fill(d.weight_offset, static_cast<std::size_t>(d.out_features) * d.in_features,
         static_cast<std::size_t>(d.in_features), gain);
  };
  for (const auto& c : m.encoder_convs) fill_conv(c, leaky_gain);
  for (std::size_t i = 0; i < m.encoder_fc.size(); ++i) {
    fill_dense(m.encoder_fc[i], i + 1 < m.encoder_fc.size() ? leaky_gain : 1.0);
  }
  for (const auto& d : m.decoder_fc) fill_dense(d, relu_gain);
  for (const auto& c : m.decoder_convs) fill_conv(c, relu_gain);
  fill_conv(m.output_conv, 1.0);
  return m;
}

Tensor make_input(const ModelConfig& config, const Image& image, const Mask& mask) {
  require(image.rows() == config.height && image.cols() == config.width && mask.same_shape(image),
          ErrorCode::kShapeMismatch,
          "input " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
              " does not match model " + std::to_string(config.height) + "x" +
              std::to_string(config.width));
  Tensor in(config.in_channels, config.height, config.width);
  const std::size_t plane = in.plane();
  for (std::size_t k = 0; k < plane; ++k) {
    in[k] = mask[k] != 0 ? 0.0 : image[k];
    if (config.in_channels == 2) in[plane + k] = mask[k] != 0 ? 1.0 : 0.0;
  }
  return in;
}

std::vector<double> reparameterize(const LatentDistribution& dist, std::span<const double> noise) {
  require(noise.size() == dist.mu.size() && dist.log_var.size() == dist.mu.size(),
          ErrorCode::kShapeMismatch, "noise length must equal latent_dim");
  std::vector<double> z(noise.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    z[k] = dist.mu[k] + std::exp(0.5 * dist.log_var[k]) * noise[k];
  }
  return z;
}

namespace {

void encode_trace(const VaeModel& m, ForwardTrace& t) {
  const double* p = m.params.data();
  for (const auto& conv : m.encoder_convs) {
    Tensor pre = conv.forward(p, t.enc_act.back());
    Tensor act = pre;
    nn::activate_inplace(kEncoderAct, act.span());
    t.enc_pre.push_back(std::move(pre));
    t.enc_act.push_back(std::move(act));
  }
  std::vector<double> h = t.enc_act.back().values();
  for (std::size_t i = 0; i < m.encoder_fc.size(); ++i) {
    std::vector<double> pre = m.encoder_fc[i].forward(p, h);
    t.enc_fc_in.push_back(std::move(h));
    h = pre;
    if (i + 1 < m.encoder_fc.size()) nn::activate_inplace(kEncoderAct, h);
    t.enc_fc_pre.push_back(std::move(pre));
  }
  const auto L = static_cast<std::size_t>(m.config.latent_dim);
  t.dist.mu.assign(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(L));
  t.raw_log_var.assign(h.begin() + static_cast<std::ptrdiff_t>(L), h.end());
  t.dist.log_var.resize(L);
  for (std::size_t k = 0; k < L; ++k) {
    require(std::isfinite(t.dist.mu[k]) && std::isfinite(t.raw_log_var[k]),
            ErrorCode::kNonFiniteValue, "encoder produced a non-finite latent parameter");
    t.dist.log_var[k] = std::clamp(t.raw_log_var[k], -kLogVarClamp, kLogVarClamp);
  }
}

}  // namespace

void decode_trace(const VaeModel& m, ForwardTrace& t) {
  require(t.z.size() == static_cast<std::size_t>(m.config.latent_dim), ErrorCode::kShapeMismatch,
          "latent vector length must equal latent_dim");
  const double* p = m.params.data();
  t.dec_fc_in.clear();
  t.dec_fc_pre.clear();
  t.dec_in.clear();
  t.dec_pre.clear();
  t.dec_act.clear();
  std::vector<double> h = t.z;
  for (const auto& dense : m.decoder_fc) {
    std::vector<double> pre = dense.forward(p, h);
    t.dec_fc_in.push_back(std::move(h));
    h = pre;
    nn::activate_inplace(kDecoderAct, h);
    t.dec_fc_pre.push_back(std::move(pre));
  }
  t.bottleneck = as_tensor(h, m.levels.back());
  const Tensor* x = &t.bottleneck;
  for (int j = 0; j < m.depth(); ++j) {
    const LevelShape& target = m.levels[static_cast<std::size_t>(m.depth() - 1 - j)];
    Tensor up = nn::upsample_nearest(*x, target.height, target.width);
    if (m.config.skip_connections) {
      const Tensor& skip = t.enc_act[static_cast<std::size_t>(m.depth() - 1 - j)];
      require(skip.height() == target.height && skip.width() == target.width &&
                  skip.channels() == target.channels,
              ErrorCode::kShapeMismatch, "skip feature shape mismatch at decoder block " +
                                             std::to_string(j + 1));
      up = nn::concat_channels(up, skip);
    }
    Tensor pre = m.decoder_convs[static_cast<std::size_t>(j)].forward(p, up);
    Tensor act = pre;
    nn::activate_inplace(kDecoderAct, act.span());
    t.dec_in.push_back(std::move(up));
    t.dec_pre.push_back(std::move(pre));
    t.dec_act.push_back(std::move(act));
    x = &t.dec_act.back();
  }
  t.out_pre = m.output_conv.forward(p, t.dec_act.back());
  t.output = Image(m.config.height, m.config.width);
  for (std::size_t k = 0; k < t.output.size(); ++k) {
    t.output[k] = nn::activate(kOutputAct, t.out_pre[k]);
  }
}

ForwardTrace forward_trace(const VaeModel& model, const Image& image, const Mask& mask,
                           std::span<const double> noise) {
  ForwardTrace t;
  t.enc_act.push_back(make_input(model.config, image, mask));
  encode_trace(model, t);
  t.noise = to_vector(noise);
  t.z = reparameterize(t.dist, noise);
  decode_trace(model, t);
  return t;
}

Encoding encode(const VaeModel& model, const Image& image, const Mask& mask) {
  ForwardTrace t;
  t.enc_act.push_back(make_input(model.config, image, mask));
  encode_trace(model, t);
  Encoding e;
  e.dist = std::move(t.dist);
  t.enc_act.pop_back();  // bottleneck is not a skip feature
  e.skips = std::move(t.enc_act);
  return e;
}

Image decode(const VaeModel& model, std::span<const double> z, const SkipFeatures& skips) {
  require(static_cast<int>(skips.size()) == model.depth(), ErrorCode::kShapeMismatch,
          "expected " + std::to_string(model.depth()) + " skip features");
  ForwardTrace t;
  t.enc_act = skips;
  t.z = to_vector(z);
  decode_trace(model, t);
  return std::move(t.output);
}

ForwardResult forward(const VaeModel& model, const Image& image, const Mask& mask,
                      std::span<const double> noise) {
  ForwardTrace t = forward_trace(model, image, mask, noise);
  return {std::move(t.output), std::move(t.dist)};
}

ForwardResult forward(const VaeModel& model, const Patch& patch, std::span<const double> noise) {
  return forward(model, patch.image, patch.mask, noise);
}

void backward(const VaeModel& m, const ForwardTrace& t, const Image& d_output,
              std::span<const double> d_mu, std::span<const double> d_log_var,
              std::span<double> grads, std::vector<double>* d_z_out) {
  require(grads.size() == m.params.size(), ErrorCode::kShapeMismatch, "gradient buffer size mismatch");
  require(d_output.rows() == m.config.height && d_output.cols() == m.config.width,
          ErrorCode::kShapeMismatch, "output gradient shape mismatch");
  const double* p = m.params.data();
  double* g = grads.data();
  const int depth = m.depth();

  Tensor d_pre(1, m.config.height, m.config.width);
  for (std::size_t k = 0; k < d_pre.size(); ++k) {
    d_pre[k] = d_output[k] * nn::activate_grad(kOutputAct, t.out_pre[k]);
  }
  Tensor d_x = m.output_conv.backward(p, t.dec_act.back(), d_pre, g, true);

  std::vector<Tensor> d_enc(static_cast<std::size_t>(depth + 1));
  for (int j = depth - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    nn::activate_backward(kDecoderAct, t.dec_pre[ju].span(), d_x.span());
    Tensor d_in = m.decoder_convs[ju].backward(p, t.dec_in[ju], d_x, g, true);
    const Tensor& src = j == 0 ? t.bottleneck : t.dec_act[ju - 1];
    Tensor d_up;
    if (m.config.skip_connections) {
      auto [up_part, skip_part] = nn::split_channels(d_in, src.channels());
      d_enc[static_cast<std::size_t>(depth - 1 - j)] = std::move(skip_part);
      d_up = std::move(up_part);
    } else {
      d_up = std::move(d_in);
    }
    d_x = nn::upsample_nearest_backward(d_up, src.height(), src.width());
  }

  std::vector<double> d_h = d_x.values();
  for (int i = static_cast<int>(m.decoder_fc.size()) - 1; i >= 0; --i) {
    const auto iu = static_cast<std::size_t>(i);
    nn::activate_backward(kDecoderAct, t.dec_fc_pre[iu], d_h);
    d_h = m.decoder_fc[iu].backward(p, t.dec_fc_in[iu], d_h, g);
  }
  if (d_z_out != nullptr) *d_z_out = d_h;

  const auto L = static_cast<std::size_t>(m.config.latent_dim);
  std::vector<double> d_head(2 * L);
  for (std::size_t k = 0; k < L; ++k) {
    double dm = d_h[k];
    double dlv = d_h[k] * t.noise[k] * 0.5 * std::exp(0.5 * t.dist.log_var[k]);
    if (!d_mu.empty()) dm += d_mu[k];
    if (!d_log_var.empty()) dlv += d_log_var[k];
    const bool inside = t.raw_log_var[k] > -kLogVarClamp && t.raw_log_var[k] < kLogVarClamp;
    d_head[k] = dm;
    d_head[L + k] = inside ? dlv : 0.0;
  }
  std::vector<double> d_f = std::move(d_head);
  for (int i = static_cast<int>(m.encoder_fc.size()) - 1; i >= 0; --i) {
    const auto iu = static_cast<std::size_t>(i);
    if (iu + 1 < m.encoder_fc.size()) nn::activate_backward(kEncoderAct, t.enc_fc_pre[iu], d_f);
    d_f = m.encoder_fc[iu].backward(p, t.enc_fc_in[iu], d_f, g);
  }
  Tensor d_bottom(m.levels.back().channels, m.levels.back().height, m.levels.back().width);
  std::copy(d_f.begin(), d_f.end(), d_bottom.values().begin());
  d_enc[static_cast<std::size_t>(depth)] = std::move(d_bottom);

  for (int k = depth; k >= 1; --k) {
    const auto ku = static_cast<std::size_t>(k);
    Tensor d_act = std::move(d_enc[ku]);
    nn::activate_backward(kEncoderAct, t.enc_pre[ku - 1].span(), d_act.span());
    Tensor d_prev = m.encoder_convs[ku - 1].backward(p, t.enc_act[ku - 1], d_act, g, k > 1);
    if (k > 1) {
      Tensor& acc = d_enc[ku - 1];
      if (acc.size() == 0) {
        acc = std::move(d_prev);
      } else {
        for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += d_prev[q];
      }
    }
  }
}

std::vector<double> standard_normal(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = normal(rng);
  return out;
}

Archive to_archive(const VaeModel& model) {
  Archive a;
  a.meta["kind"] = "cosmovae-model";
  a.meta["model_config"] = to_json(model.config);
  for (const auto& s : model.params.segments()) {
    const auto view = model.params.view(s);
    a.arrays.push_back({s.name, s.shape, {view.begin(), view.end()}});
  }
  return a;
}

VaeModel from_archive(const Archive& archive) {
  require(archive.meta.contains("model_config"), ErrorCode::kCorruptArchive,
          "archive has no model_config");
  VaeModel m = build_architecture(model_config_from_json(archive.meta.at("model_config")));
  for (const auto& s : m.params.segments()) {
    const NamedArray* a = archive.find(s.name);
    require(a != nullptr, ErrorCode::kCorruptArchive, "checkpoint lacks segment " + s.name);
    require(a->shape == s.shape, ErrorCode::kShapeMismatch,
            "checkpoint segment " + s.name + " has the wrong shape");
    std::copy(a->data.begin(), a->data.end(), m.params.view(s).begin());
  }
  for (double v : m.params.values()) {
    require(std::isfinite(v), ErrorCode::kCorruptArchive, "checkpoint holds non-finite weights");
  }
  return m;
}

void save_model(const std::filesystem::path& path, const VaeModel& model) {
  write_archive(path, to_archive(model));
}

VaeModel load_model(const std::filesystem::path& path) { return from_archive(read_archive(path)); }

}  // namespace cosmovae::vae
