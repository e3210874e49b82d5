#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cosmovae/tensor.hpp"

// Minimal layer kit with explicit forward/backward passes. Parameters live in a
// flat ParamStore; layers only remember offsets into it so gradients can share
// the same layout.
namespace cosmovae::nn {

struct Segment {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  bool operator==(const Segment&) const = default;
};

class ParamStore {
 public:
  /// Appends a zero-initialised segment and returns its offset.
  std::size_t add(const std::string& name, std::vector<int> shape);

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment* find(const std::string& name) const;
  /// Segment holding flat index k.
  const Segment& segment_of(std::size_t k) const;

  std::size_t size() const { return values_.size(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const double* data() const { return values_.data(); }
  std::span<double> view(const Segment& s) { return {values_.data() + s.offset, s.size}; }
  std::span<const double> view(const Segment& s) const {
    return {values_.data() + s.offset, s.size};
  }

  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
};

/// Square-kernel convolution with zero padding kernel/2; output extent
/// (n + 2*pad - kernel) / stride + 1, i.e. ceil(n / 2) for the 3x3 stride-2 case.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  std::size_t weight_offset = 0;  // [out][in][k][k]
  std::size_t bias_offset = 0;    // [out]

  static Conv2d create(ParamStore& store, const std::string& name, int in_channels,
                       int out_channels, int kernel, int stride);
  int out_extent(int n) const { return (n + 2 * (kernel / 2) - kernel) / stride + 1; }
  std::size_t fan_in() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }

  Tensor forward(const double* params, const Tensor& in) const;
  /// Accumulates parameter gradients into grads; returns d(loss)/d(in) when
  /// need_input_grad is set (an empty tensor otherwise).
  Tensor backward(const double* params, const Tensor& in, const Tensor& d_out, double* grads,
                  bool need_input_grad) const;
};

struct Dense {
  int in_features = 0;
  int out_features = 0;
  std::size_t weight_offset = 0;  // [out][in]
  std::size_t bias_offset = 0;

  static Dense create(ParamStore& store, const std::string& name, int in_features,
                      int out_features);
  std::vector<double> forward(const double* params, std::span<const double> in) const;
  std::vector<double> backward(const double* params, std::span<const double> in,
                               std::span<const double> d_out, double* grads) const;
};

enum class Activation { kIdentity, kRelu, kLeakyRelu, kSigmoid };

inline constexpr double kLeakySlope = 0.2;

double activate(Activation a, double x);
/// Derivative expressed through the pre-activation value.
double activate_grad(Activation a, double pre);
void activate_inplace(Activation a, std::span<double> values);
/// d_values *= f'(pre) elementwise.
void activate_backward(Activation a, std::span<const double> pre, std::span<double> d_values);

/// Nearest-neighbour upsampling to an explicit target extent (at most 2x).
Tensor upsample_nearest(const Tensor& in, int height, int width);
Tensor upsample_nearest_backward(const Tensor& d_out, int in_height, int in_width);

/// 2x2 max pooling with floor semantics.
Tensor max_pool2(const Tensor& in);
Tensor max_pool2_backward(const Tensor& in, const Tensor& d_out);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a channel-concatenated gradient back into its two parts.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels);

}  // namespace cosmovae::nn
