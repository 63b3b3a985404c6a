#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace subpx {

// Dense (channels, height, width) tensor stored row-major per channel.
// A flat vector is represented as (length, 1, 1).
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
                 static_cast<std::size_t>(w),
             fill) {}

  static Tensor flat(int n, T fill = T(0)) { return Tensor(n, 1, 1, fill); }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int plane() const { return height * width; }

  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

enum class Padding { kValid, kSame };

// Non-owning view of one 3x3 convolution layer. Kernels are laid out as
// (out_ch, in_ch, 3, 3) row-major.
template <typename T>
struct ConvRef {
  int out_channels = 0;
  int in_channels = 0;
  Padding padding = Padding::kValid;
  std::span<const T> kernels;
  std::span<const T> bias;
};

template <typename T>
struct ConvParams {
  int out_channels = 0;
  int in_channels = 0;
  Padding padding = Padding::kValid;
  std::vector<T> kernels;
  std::vector<T> bias;

  ConvParams() = default;
  ConvParams(int out_ch, int in_ch, Padding pad)
      : out_channels(out_ch), in_channels(in_ch), padding(pad),
        kernels(static_cast<std::size_t>(out_ch) * in_ch * 9, T(0)),
        bias(static_cast<std::size_t>(out_ch), T(0)) {}

  T& kernel(int o, int i, int ky, int kx) {
    return kernels[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx];
  }

  ConvRef<T> ref() const { return {out_channels, in_channels, padding, kernels, bias}; }
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;  // empty when not requested
  std::vector<T> kernels;
  std::vector<T> bias;
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvRef<T>& params);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
  return conv2d_forward(input, params.ref());
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvRef<T>& params,
                             const Tensor<T>& grad_out, bool need_input_grad = true);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out, bool need_input_grad = true) {
  return conv2d_backward(input, params.ref(), grad_out, need_input_grad);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Gradient is masked by input > 0; exactly zero input passes no gradient.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

// Divides the channel vector at every spatial location by max(norm, eps).
template <typename T>
Tensor<T> l2_normalize_channels(const Tensor<T>& input, T eps = T(1e-8));

template <typename T>
Tensor<T> l2_normalize_channels_backward(const Tensor<T>& input, const Tensor<T>& grad_out,
                                         T eps = T(1e-8));

// Square P x P score grid, P odd. Cell (row, col) corresponds to the offset
// u = (col - P/2, row - P/2).
template <typename T>
struct ScoreMap {
  int size = 0;
  std::vector<T> values;

  ScoreMap() = default;
  explicit ScoreMap(int p, T fill = T(0))
      : size(p), values(static_cast<std::size_t>(p) * p, fill) {}

  int radius() const { return size / 2; }
  T& at(int row, int col) { return values[static_cast<std::size_t>(row) * size + col]; }
  const T& at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * size + col];
  }
};

template <typename T>
struct SoftArgMax {
  T x = T(0);
  T y = T(0);
  std::vector<T> probs;  // softmax weights, same layout as the score map
};

/// Expected grid offset under softmax(S), with max-subtraction.
template <typename T>
SoftArgMax<T> softargmax2d(const ScoreMap<T>& s);

// Gradient of (x, y) -> scores given upstream (gx, gy).
template <typename T>
ScoreMap<T> softargmax2d_backward(const ScoreMap<T>& s, const SoftArgMax<T>& fwd, T gx,
                                  T gy);

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 1e-4)
      : m(n, T(0)), v(n, T(0)), lr(learning_rate) {}
};

// Bias-corrected Adam update in the PyTorch formulation.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state);

/// Max componentwise relative error between `analytic` and central
/// differences (f(x+h) - f(x-h)) / 2h, with denominator max(|a|, |n|, 1e-12).
/// `indices` selects the components to check; empty means all.
double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> params, std::span<const double> analytic,
                         double step, std::span<const std::size_t> indices = {});

}  // namespace subpx
