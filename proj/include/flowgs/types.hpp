#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace flowgs {

enum class ErrorCode {
  DepthBehindCamera,
  InvalidDepth,
  DegenerateBaseline,
  EmptyInit,
  EmptyScene,
  StaleRenderState,
  DimensionMismatch,
  FormatError,
  InsufficientValidPixels,
  LengthMismatch,
  NonFiniteLoss,
  InvalidArgument,
  ConfigError,
  IoError,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// Dense row-major 2D grid. Pixel (x, y) lives at index y * width + x.
template <class T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, const T& fill = T{})
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * static_cast<size_t>(height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  const T& operator()(int x, int y) const {
    return data_[static_cast<size_t>(y) * width_ + x];
  }
  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(int width, int height) const {
    return width_ == width && height_ == height;
  }
  template <class U>
  bool same_shape(const Grid<U>& other) const {
    return same_shape(other.width(), other.height());
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using RgbImage = Grid<Eigen::Vector3d>;
using DepthMap = Grid<double>;

/// Per-pixel boolean. Stored as bytes so grids stay addressable.
using Mask = Grid<std::uint8_t>;

template <class A, class B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a.width()) + "x" +
                    std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                    "x" + std::to_string(b.height()));
  }
}

}  // namespace flowgs
