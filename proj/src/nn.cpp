#include "cosmovae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cosmovae/error.hpp"

namespace cosmovae::nn {
namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace

std::size_t ParamStore::add(const std::string& name, std::vector<int> shape) {
  require(find(name) == nullptr, ErrorCode::kInvalidArgument, "duplicate segment " + name);
  Segment s;
  s.name = name;
  s.size = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  s.shape = std::move(shape);
  s.offset = values_.size();
  values_.resize(values_.size() + s.size, 0.0);
  segments_.push_back(std::move(s));
  return segments_.back().offset;
}

const Segment* ParamStore::find(const std::string& name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const Segment& ParamStore::segment_of(std::size_t k) const {
  require(k < values_.size(), ErrorCode::kInvalidArgument, "parameter index out of range");
  auto it = std::upper_bound(segments_.begin(), segments_.end(), k,
                             [](std::size_t v, const Segment& s) { return v < s.offset; });
  return *std::prev(it);
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int in_channels,
                      int out_channels, int kernel, int stride) {
  Conv2d c;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  c.kernel = kernel;
  c.stride = stride;
  c.weight_offset = store.add(name + ".weight", {out_channels, in_channels, kernel, kernel});
  c.bias_offset = store.add(name + ".bias", {out_channels});
  return c;
}

Tensor Conv2d::forward(const double* params, const Tensor& in) const {
  require(in.channels() == in_channels, ErrorCode::kShapeMismatch, "conv input channel mismatch");
  const int h = in.height();
  const int w = in.width();
  const int oh = out_extent(h);
  const int ow = out_extent(w);
  const int pad = kernel / 2;
  Tensor out(out_channels, oh, ow);
  const double* weights = params + weight_offset;
  const double* bias = params + bias_offset;
  for (int oc = 0; oc < out_channels; ++oc) {
    double* o = out.data() + static_cast<std::size_t>(oc) * out.plane();
    std::fill(o, o + out.plane(), bias[oc]);
    for (int ic = 0; ic < in_channels; ++ic) {
      const double* src = in.data() + static_cast<std::size_t>(ic) * in.plane();
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const double wv =
              weights[((static_cast<std::size_t>(oc) * in_channels + ic) * kernel + ky) * kernel + kx];
          // ox range with 0 <= ox*stride + kx - pad < w
          const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
          const int ox_hi = std::min(ow, floor_div(w - 1 + pad - kx, stride) + 1);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* srow = src + static_cast<std::size_t>(iy) * w;
            double* orow = o + static_cast<std::size_t>(oy) * ow;
            for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * srow[ox * stride + kx - pad];
          }
        }
      }
    }
  }
  return out;
}

Tensor Conv2d::backward(const double* params, const Tensor& in, const Tensor& d_out,
                        double* grads, bool need_input_grad) const {
  const int h = in.height();
  const int w = in.width();
  const int oh = d_out.height();
  const int ow = d_out.width();
  const int pad = kernel / 2;
  require(d_out.channels() == out_channels && oh == out_extent(h) && ow == out_extent(w),
          ErrorCode::kShapeMismatch, "conv gradient shape mismatch");
  Tensor d_in;
  if (need_input_grad) d_in = Tensor(in_channels, h, w);
  const double* weights = params + weight_offset;
  double* g_weights = grads + weight_offset;
  double* g_bias = grads + bias_offset;
  for (int oc = 0; oc < out_channels; ++oc) {
    const double* g = d_out.data() + static_cast<std::size_t>(oc) * d_out.plane();
    double bsum = 0.0;
    for (std::size_t k = 0; k < d_out.plane(); ++k) bsum += g[k];
    g_bias[oc] += bsum;
    for (int ic = 0; ic < in_channels; ++ic) {
      const double* src = in.data() + static_cast<std::size_t>(ic) * in.plane();
      double* dsrc = need_input_grad ? d_in.data() + static_cast<std::size_t>(ic) * d_in.plane() : nullptr;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const std::size_t widx =
              ((static_cast<std::size_t>(oc) * in_channels + ic) * kernel + ky) * kernel + kx;
          const double wv = weights[widx];
          const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
          const int ox_hi = std::min(ow, floor_div(w - 1 + pad - kx, stride) + 1);
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* srow = src + static_cast<std::size_t>(iy) * w;
            const double* grow = g + static_cast<std::size_t>(oy) * ow;
            for (int ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * srow[ox * stride + kx - pad];
            if (dsrc != nullptr) {
              double* drow = dsrc + static_cast<std::size_t>(iy) * w;
              for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox * stride + kx - pad] += wv * grow[ox];
            }
          }
          g_weights[widx] += acc;
        }
      }
    }
  }
  return d_in;
}

Dense Dense::create(ParamStore& store, const std::string& name, int in_features,
                    int out_features) {
  Dense d;
  d.in_features = in_features;
  d.out_features = out_features;
  d.weight_offset = store.add(name + ".weight", {out_features, in_features});
  d.bias_offset = store.add(name + ".bias", {out_features});
  return d;
}

std::vector<double> Dense::forward(const double* params, std::span<const double> in) const {
  require(static_cast<int>(in.size()) == in_features, ErrorCode::kShapeMismatch,
          "dense input size mismatch");
  std::vector<double> out(static_cast<std::size_t>(out_features));
  const double* weights = params + weight_offset;
  const double* bias = params + bias_offset;
  for (int o = 0; o < out_features; ++o) {
    const double* row = weights + static_cast<std::size_t>(o) * in_features;
    double acc = bias[o];
    for (int i = 0; i < in_features; ++i) acc += row[i] * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

std::vector<double> Dense::backward(const double* params, std::span<const double> in,
                                    std::span<const double> d_out, double* grads) const {
  std::vector<double> d_in(static_cast<std::size_t>(in_features), 0.0);
  const double* weights = params + weight_offset;
  double* g_weights = grads + weight_offset;
  double* g_bias = grads + bias_offset;
  for (int o = 0; o < out_features; ++o) {
    const double g = d_out[static_cast<std::size_t>(o)];
    g_bias[o] += g;
    if (g == 0.0) continue;
    const double* row = weights + static_cast<std::size_t>(o) * in_features;
    double* grow = g_weights + static_cast<std::size_t>(o) * in_features;
    for (int i = 0; i < in_features; ++i) {
      grow[i] += g * in[static_cast<std::size_t>(i)];
      d_in[static_cast<std::size_t>(i)] += g * row[i];
    }
  }
  return d_in;
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kLeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

double activate_grad(Activation a, double pre) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kLeakyRelu: return pre > 0.0 ? 1.0 : kLeakySlope;
    case Activation::kSigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-pre));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

void activate_inplace(Activation a, std::span<double> values) {
  for (double& v : values) v = activate(a, v);
}

void activate_backward(Activation a, std::span<const double> pre, std::span<double> d_values) {
  for (std::size_t k = 0; k < d_values.size(); ++k) d_values[k] *= activate_grad(a, pre[k]);
}

Tensor upsample_nearest(const Tensor& in, int height, int width) {
  require(height <= 2 * in.height() && width <= 2 * in.width() &&
              (height + 1) / 2 <= in.height() && (width + 1) / 2 <= in.width(),
          ErrorCode::kShapeMismatch, "upsample target not within 2x of the input");
  Tensor out(in.channels(), height, width);
  for (int c = 0; c < in.channels(); ++c) {
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j < width; ++j) out(c, i, j) = in(c, i / 2, j / 2);
    }
  }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& d_out, int in_height, int in_width) {
  Tensor d_in(d_out.channels(), in_height, in_width);
  for (int c = 0; c < d_out.channels(); ++c) {
    for (int i = 0; i < d_out.height(); ++i) {
      for (int j = 0; j < d_out.width(); ++j) d_in(c, i / 2, j / 2) += d_out(c, i, j);
    }
  }
  return d_in;
}

Tensor max_pool2(const Tensor& in) {
  const int oh = in.height() / 2;
  const int ow = in.width() / 2;
  require(oh > 0 && ow > 0, ErrorCode::kShapeMismatch, "input too small for 2x2 pooling");
  Tensor out(in.channels(), oh, ow);
  for (int c = 0; c < in.channels(); ++c) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        out(c, i, j) = std::max({in(c, 2 * i, 2 * j), in(c, 2 * i, 2 * j + 1),
                                 in(c, 2 * i + 1, 2 * j), in(c, 2 * i + 1, 2 * j + 1)});
      }
    }
  }
  return out;
}

Tensor max_pool2_backward(const Tensor& in, const Tensor& d_out) {
  Tensor d_in(in.channels(), in.height(), in.width());
  for (int c = 0; c < in.channels(); ++c) {
    for (int i = 0; i < d_out.height(); ++i) {
      for (int j = 0; j < d_out.width(); ++j) {
        // First maximum in scan order receives the gradient.
        int bi = 2 * i;
        int bj = 2 * j;
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            if (in(c, 2 * i + di, 2 * j + dj) > in(c, bi, bj)) {
              bi = 2 * i + di;
              bj = 2 * j + dj;
            }
          }
        }
        d_in(c, bi, bj) += d_out(c, i, j);
      }
    }
  }
  return d_in;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.height() == b.height() && a.width() == b.width(), ErrorCode::kShapeMismatch,
          "concat spatial mismatch");
  Tensor out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels) {
  Tensor a(first_channels, t.height(), t.width());
  Tensor b(t.channels() - first_channels, t.height(), t.width());
  std::copy(t.values().begin(), t.values().begin() + static_cast<std::ptrdiff_t>(a.size()),
            a.values().begin());
  std::copy(t.values().begin() + static_cast<std::ptrdiff_t>(a.size()), t.values().end(),
            b.values().begin());
  return {std::move(a), std::move(b)};
}

}  // namespace cosmovae::nn
