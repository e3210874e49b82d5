#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cosmovae/error.hpp"

namespace cosmovae {

/// Row-major dense 2-D array.
template <typename T>
class Array2D {
 public:
  Array2D() = default;
  Array2D(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    require(rows >= 0 && cols >= 0, ErrorCode::kInvalidArgument, "negative array extent");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Array2D& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  template <typename U>
  bool same_shape(const Array2D<U>& other) const {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  T& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  const T& operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Array2D&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using Image = Array2D<double>;
using Mask = Array2D<std::uint8_t>;

/// Channel-major (C, H, W) activation tensor.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c_(channels), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  bool same_shape(const Tensor& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  double& operator()(int c, int i, int j) {
    return data_[(static_cast<std::size_t>(c) * h_ + i) * w_ + j];
  }
  double operator()(int c, int i, int j) const {
    return data_[(static_cast<std::size_t>(c) * h_ + i) * w_ + j];
  }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const Tensor&) const = default;

 private:
  int c_ = 0;
  int h_ = 0;
  int w_ = 0;
  std::vector<double> data_;
};

inline Tensor to_tensor(const Image& image) {
  Tensor t(1, image.rows(), image.cols());
  for (std::size_t k = 0; k < image.size(); ++k) t[k] = image[k];
  return t;
}

inline Image channel_to_image(const Tensor& t, int channel = 0) {
  Image image(t.height(), t.width());
  const std::size_t offset = static_cast<std::size_t>(channel) * t.plane();
  for (std::size_t k = 0; k < image.size(); ++k) image[k] = t[offset + k];
  return image;
}

}  // namespace cosmovae
