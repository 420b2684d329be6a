#pragma once

// Dense tensors, convolution layer specs and the reference convolution.
//
// Layout conventions:
//   Tensor3          row-major (h, w, c)
//   DenseFilterBank  (out_channel, ky, kx, in_channel)
// Convolution is cross-correlation (no kernel flip). Zero padding is applied
// virtually: every kernel tap is visited, out-of-image taps read 0.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fhdnn/errors.hpp"

namespace fhdnn {

/// Accumulator type for every convolution path.
using accum_t = long double;

/// Per-call operation counters filled by instrumented kernels.
struct OpCounter {
  std::uint64_t multiplies = 0;
  std::uint64_t adds = 0;

  OpCounter& operator+=(const OpCounter& o) {
    multiplies += o.multiplies;
    adds += o.adds;
    return *this;
  }
  friend bool operator==(const OpCounter&, const OpCounter&) = default;
};

/// Round a float to the nearest bfloat16 value (ties to even), returned as float.
inline float round_to_bf16(float v) {
  if (std::isnan(v)) return v;
  auto bits = std::bit_cast<std::uint32_t>(v);
  const std::uint32_t lsb = (bits >> 16) & 1u;
  bits += 0x7FFFu + lsb;
  bits &= 0xFFFF0000u;
  return std::bit_cast<float>(bits);
}

template <typename Real = float>
class Tensor3 {
 public:
  using value_type = Real;

  Tensor3() = default;

  Tensor3(std::size_t height, std::size_t width, std::size_t channels)
      : height_(height), width_(width), channels_(channels), data_(height * width * channels, Real{0}) {}

  Tensor3(std::size_t height, std::size_t width, std::size_t channels, std::vector<Real> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(height_) + "x" + std::to_string(width_) + "x" +
                       std::to_string(channels_));
    }
    for (const Real v : data_) {
      if (!std::isfinite(static_cast<double>(v))) throw DataError("tensor contains a non-finite value");
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  std::span<const Real> data() const { return data_; }

  Real operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  /// Value at a possibly out-of-bounds (padded) coordinate; zero outside the image.
  Real padded(std::ptrdiff_t y, std::ptrdiff_t x, std::size_t c) const {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(height_) ||
        x >= static_cast<std::ptrdiff_t>(width_)) {
      return Real{0};
    }
    return (*this)(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
  }

  /// Copy with every value rounded to bfloat16 precision.
  Tensor3 rounded_bf16() const requires std::is_same_v<Real, float> {
    std::vector<Real> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), round_to_bf16);
    return Tensor3(height_, width_, channels_, std::move(out));
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<Real> data_;
};

struct ConvLayerSpec {
  std::uint32_t in_channels = 1;
  std::uint32_t out_channels = 1;
  std::uint32_t kernel = 3;
  std::uint32_t stride = 1;
  std::uint32_t padding = 0;
  std::uint32_t in_height = 1;
  std::uint32_t in_width = 1;

  std::size_t taps() const { return std::size_t{kernel} * kernel * in_channels; }

  std::size_t out_height() const { return out_dim(in_height, "height"); }
  std::size_t out_width() const { return out_dim(in_width, "width"); }
  std::size_t out_pixels() const { return out_height() * out_width(); }

  void validate() const {
    if (kernel != 1 && kernel != 3 && kernel != 5) {
      throw ShapeError("kernel must be 1, 3 or 5 (got " + std::to_string(kernel) + ")");
    }
    if (stride < 1) throw ShapeError("stride must be >= 1");
    if (in_channels < 1 || out_channels < 1) throw ShapeError("channel counts must be >= 1");
    (void)out_height();
    (void)out_width();
  }

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;

 private:
  std::size_t out_dim(std::uint32_t in, const char* axis) const {
    const std::int64_t span = std::int64_t{in} + 2 * std::int64_t{padding} - kernel;
    if (span < 0 || stride == 0 || span % stride != 0) {
      throw ShapeError(std::string("output ") + axis + " is not a positive integer for input " + axis + " " +
                       std::to_string(in));
    }
    return static_cast<std::size_t>(span / stride + 1);
  }
};

template <typename Real = float>
class DenseFilterBank {
 public:
  DenseFilterBank() = default;

  DenseFilterBank(ConvLayerSpec spec, std::vector<Real> weights) : spec_(spec), weights_(std::move(weights)) {
    spec_.validate();
    if (weights_.size() != std::size_t{spec_.out_channels} * spec_.taps()) {
      throw ShapeError("filter bank has " + std::to_string(weights_.size()) + " weights, expected " +
                       std::to_string(std::size_t{spec_.out_channels} * spec_.taps()));
    }
  }

  const ConvLayerSpec& spec() const { return spec_; }
  std::span<const Real> weights() const { return weights_; }

  /// Weights of one output channel, ordered (ky, kx, in_channel).
  std::span<const Real> channel(std::size_t out) const {
    return std::span<const Real>(weights_).subspan(out * spec_.taps(), spec_.taps());
  }

  Real operator()(std::size_t out, std::size_t ky, std::size_t kx, std::size_t in) const {
    return weights_[tap_offset(out, ky, kx, in)];
  }

  std::size_t tap_offset(std::size_t out, std::size_t ky, std::size_t kx, std::size_t in) const {
    return ((out * spec_.kernel + ky) * spec_.kernel + kx) * spec_.in_channels + in;
  }

  friend bool operator==(const DenseFilterBank&, const DenseFilterBank&) = default;

 private:
  ConvLayerSpec spec_;
  std::vector<Real> weights_;
};

/// Throws ShapeError naming the first axis of `input` that disagrees with `spec`.
template <typename Real>
void check_input_shape(const Tensor3<Real>& input, const ConvLayerSpec& spec) {
  if (input.channels() != spec.in_channels) {
    throw ShapeError("channels mismatch: input has " + std::to_string(input.channels()) + ", layer expects " +
                     std::to_string(spec.in_channels));
  }
  if (input.height() != spec.in_height) {
    throw ShapeError("height mismatch: input has " + std::to_string(input.height()) + ", layer expects " +
                     std::to_string(spec.in_height));
  }
  if (input.width() != spec.in_width) {
    throw ShapeError("width mismatch: input has " + std::to_string(input.width()) + ", layer expects " +
                     std::to_string(spec.in_width));
  }
}

/// Reference cross-correlation. Every tap (padding included) costs one multiply and one add.
template <typename Real>
Tensor3<Real> dense_conv2d(const Tensor3<Real>& input, const DenseFilterBank<Real>& bank,
                           OpCounter* counter = nullptr) {
  const ConvLayerSpec& s = bank.spec();
  check_input_shape(input, s);
  const std::size_t oh = s.out_height(), ow = s.out_width();
  std::vector<Real> out(oh * ow * s.out_channels);
  OpCounter local;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
      const auto x0 = static_cast<std::ptrdiff_t>(ox * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        accum_t acc = 0;
        for (std::size_t ky = 0; ky < s.kernel; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel; ++kx) {
            for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
              const accum_t x = input.padded(y0 + static_cast<std::ptrdiff_t>(ky),
                                             x0 + static_cast<std::ptrdiff_t>(kx), ci);
              acc += static_cast<accum_t>(bank(co, ky, kx, ci)) * x;
              ++local.multiplies;
              ++local.adds;
            }
          }
        }
        out[(oy * ow + ox) * s.out_channels + co] = static_cast<Real>(acc);
      }
    }
  }
  if (counter) *counter += local;
  return Tensor3<Real>(oh, ow, s.out_channels, std::move(out));
}

template <typename Real>
Tensor3<Real> relu(const Tensor3<Real>& t) {
  std::vector<Real> out(t.data().begin(), t.data().end());
  for (Real& v : out) v = std::max(v, Real{0});
  return Tensor3<Real>(t.height(), t.width(), t.channels(), std::move(out));
}

/// Non-overlapping max pooling with a square window; trailing rows/cols that do not fill a window are dropped.
template <typename Real>
Tensor3<Real> max_pool2d(const Tensor3<Real>& t, std::size_t window) {
  if (window == 0 || t.height() < window || t.width() < window) {
    throw ShapeError("max_pool2d window " + std::to_string(window) + " larger than input");
  }
  const std::size_t oh = t.height() / window, ow = t.width() / window, c = t.channels();
  std::vector<Real> out(oh * ow * c);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        Real m = t(y * window, x * window, ch);
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) m = std::max(m, t(y * window + dy, x * window + dx, ch));
        out[(y * ow + x) * c + ch] = m;
      }
  return Tensor3<Real>(oh, ow, c, std::move(out));
}

/// Mean over (h, w) per channel.
template <typename Real>
std::vector<Real> global_average_pool(const Tensor3<Real>& t) {
  std::vector<accum_t> sums(t.channels(), 0);
  for (std::size_t y = 0; y < t.height(); ++y)
    for (std::size_t x = 0; x < t.width(); ++x)
      for (std::size_t c = 0; c < t.channels(); ++c) sums[c] += t(y, x, c);
  std::vector<Real> out(t.channels());
  const auto n = static_cast<accum_t>(t.height() * t.width());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<Real>(n > 0 ? sums[c] / n : 0);
  return out;
}

}  // namespace fhdnn
