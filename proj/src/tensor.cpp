#include "subpx/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "subpx/error.hpp"

namespace subpx {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void check_conv(const Tensor<T>& input, const ConvRef<T>& p) {
  if (input.channels != p.in_channels) {
    throw InvalidInput("conv2d: input has " + std::to_string(input.channels) +
                       " channels, layer expects " + std::to_string(p.in_channels));
  }
  if (p.kernels.size() != static_cast<std::size_t>(p.out_channels) * p.in_channels * 9 ||
      p.bias.size() != static_cast<std::size_t>(p.out_channels)) {
    throw InvalidInput("conv2d: kernel/bias buffers do not match the layer shape");
  }
  if (p.padding == Padding::kValid && (input.height < 3 || input.width < 3)) {
    throw InvalidInput("conv2d: valid padding needs at least 3x3 input");
  }
}

// Column buffer of shape (in_ch * 9, out_h * out_w).
template <typename T>
RowMat<T> im2col(const Tensor<T>& in, int pad, int out_h, int out_w) {
  RowMat<T> cols(in.channels * 9, out_h * out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols.row((c * 3 + ky) * 3 + kx).data();
        for (int y = 0; y < out_h; ++y) {
          const int iy = y + ky - pad;
          for (int x = 0; x < out_w; ++x) {
            const int ix = x + kx - pad;
            row[y * out_w + x] = (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width)
                                     ? in.at(c, iy, ix)
                                     : T(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_add(const RowMat<T>& cols, int pad, int out_h, int out_w, Tensor<T>& grad_in) {
  for (int c = 0; c < grad_in.channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols.row((c * 3 + ky) * 3 + kx).data();
        for (int y = 0; y < out_h; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= grad_in.height) continue;
          for (int x = 0; x < out_w; ++x) {
            const int ix = x + kx - pad;
            if (ix < 0 || ix >= grad_in.width) continue;
            grad_in.at(c, iy, ix) += row[y * out_w + x];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvRef<T>& p) {
  check_conv(input, p);
  const int pad = p.padding == Padding::kSame ? 1 : 0;
  const int oh = input.height + 2 * pad - 2;
  const int ow = input.width + 2 * pad - 2;
  const RowMat<T> cols = im2col(input, pad, oh, ow);
  Eigen::Map<const RowMat<T>> k(p.kernels.data(), p.out_channels, p.in_channels * 9);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(p.bias.data(), p.out_channels);

  Tensor<T> out(p.out_channels, oh, ow);
  Eigen::Map<RowMat<T>> o(out.data.data(), p.out_channels, oh * ow);
  o.noalias() = k * cols;
  o.colwise() += b;
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvRef<T>& p,
                             const Tensor<T>& grad_out, bool need_input_grad) {
  check_conv(input, p);
  const int pad = p.padding == Padding::kSame ? 1 : 0;
  const int oh = input.height + 2 * pad - 2;
  const int ow = input.width + 2 * pad - 2;
  if (grad_out.channels != p.out_channels || grad_out.height != oh || grad_out.width != ow) {
    throw InvalidInput("conv2d_backward: grad_out shape does not match the forward output");
  }
  const RowMat<T> cols = im2col(input, pad, oh, ow);
  Eigen::Map<const RowMat<T>> k(p.kernels.data(), p.out_channels, p.in_channels * 9);
  Eigen::Map<const RowMat<T>> g(grad_out.data.data(), p.out_channels, oh * ow);

  ConvGrads<T> out;
  out.kernels.assign(p.kernels.size(), T(0));
  out.bias.assign(p.bias.size(), T(0));
  Eigen::Map<RowMat<T>> gk(out.kernels.data(), p.out_channels, p.in_channels * 9);
  gk.noalias() = g * cols.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(out.bias.data(), p.out_channels);
  gb = g.rowwise().sum();

  if (need_input_grad) {
    const RowMat<T> gcols = k.transpose() * g;
    out.input = Tensor<T>(input.channels, input.height, input.width);
    col2im_add(gcols, pad, oh, ow, out.input);
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (!input.same_shape(grad_out)) throw InvalidInput("relu_backward: shape mismatch");
  Tensor<T> out = grad_out;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!(input.data[i] > T(0))) out.data[i] = T(0);
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize_channels(const Tensor<T>& input, T eps) {
  Tensor<T> out = input;
  const int plane = input.plane();
  for (int i = 0; i < plane; ++i) {
    T sq = T(0);
    for (int c = 0; c < input.channels; ++c) {
      const T v = input.data[static_cast<std::size_t>(c) * plane + i];
      sq += v * v;
    }
    const T den = std::max(std::sqrt(sq), eps);
    for (int c = 0; c < input.channels; ++c) out.data[static_cast<std::size_t>(c) * plane + i] /= den;
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize_channels_backward(const Tensor<T>& input, const Tensor<T>& grad_out,
                                         T eps) {
  if (!input.same_shape(grad_out)) {
    throw InvalidInput("l2_normalize_channels_backward: shape mismatch");
  }
  Tensor<T> out(input.channels, input.height, input.width);
  const int plane = input.plane();
  for (int i = 0; i < plane; ++i) {
    T sq = T(0);
    for (int c = 0; c < input.channels; ++c) {
      const T v = input.data[static_cast<std::size_t>(c) * plane + i];
      sq += v * v;
    }
    const T norm = std::sqrt(sq);
    if (norm > eps) {
      // d(x/|x|) = (I - y y^T) / |x|
      T ydotg = T(0);
      for (int c = 0; c < input.channels; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + i;
        ydotg += input.data[k] / norm * grad_out.data[k];
      }
      for (int c = 0; c < input.channels; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + i;
        out.data[k] = (grad_out.data[k] - input.data[k] / norm * ydotg) / norm;
      }
    } else {
      for (int c = 0; c < input.channels; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + i;
        out.data[k] = grad_out.data[k] / eps;
      }
    }
  }
  return out;
}

template <typename T>
SoftArgMax<T> softargmax2d(const ScoreMap<T>& s) {
  if (s.size <= 0 || s.size % 2 == 0 ||
      s.values.size() != static_cast<std::size_t>(s.size) * s.size) {
    throw InvalidInput("softargmax2d: score map must be P x P with P odd");
  }
  T mx = s.values.front();
  for (T v : s.values) {
    if (!std::isfinite(v)) throw InvalidInput("softargmax2d: non-finite score");
    mx = std::max(mx, v);
  }
  SoftArgMax<T> out;
  out.probs.resize(s.values.size());
  T total = T(0);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    out.probs[i] = std::exp(s.values[i] - mx);
    total += out.probs[i];
  }
  const int r = s.radius();
  std::vector<T> col_mass(static_cast<std::size_t>(s.size), T(0));
  std::vector<T> row_mass(static_cast<std::size_t>(s.size), T(0));
  for (int row = 0; row < s.size; ++row) {
    for (int col = 0; col < s.size; ++col) {
      T& p = out.probs[static_cast<std::size_t>(row) * s.size + col];
      p /= total;
      col_mass[static_cast<std::size_t>(col)] += p;
      row_mass[static_cast<std::size_t>(row)] += p;
    }
  }
  // Pair mirrored cells so that balanced maps give exactly zero.
  for (int k = 1; k <= r; ++k) {
    const auto hi = static_cast<std::size_t>(r + k);
    const auto lo = static_cast<std::size_t>(r - k);
    out.x += T(k) * (col_mass[hi] - col_mass[lo]);
    out.y += T(k) * (row_mass[hi] - row_mass[lo]);
  }
  // Normalized masses can sum to 1 + ulp, so a saturated map may land a hair
  // past the border cell.
  out.x = std::clamp(out.x, T(-r), T(r));
  out.y = std::clamp(out.y, T(-r), T(r));
  return out;
}

template <typename T>
ScoreMap<T> softargmax2d_backward(const ScoreMap<T>& s, const SoftArgMax<T>& fwd, T gx,
                                  T gy) {
  // d out / d S_j = p_j (u_j - out)
  ScoreMap<T> g(s.size);
  const int r = s.radius();
  for (int row = 0; row < s.size; ++row) {
    for (int col = 0; col < s.size; ++col) {
      const std::size_t k = static_cast<std::size_t>(row) * s.size + col;
      g.values[k] = fwd.probs[k] * (gx * (T(col - r) - fwd.x) + gy * (T(row - r) - fwd.y));
    }
  }
  return g;
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw InvalidInput("adam_step: parameter, gradient and moment sizes differ");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.lr / bc1);
  const T sqrt_bc2 = static_cast<T>(std::sqrt(bc2));
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T denom = std::sqrt(state.v[i]) / sqrt_bc2 + eps;
    params[i] -= step_size * state.m[i] / denom;
  }
}

double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> params, std::span<const double> analytic,
                         double step, std::span<const std::size_t> indices) {
  if (analytic.size() != params.size()) {
    throw InvalidInput("finite_diff_check: gradient size differs from parameter size");
  }
  std::vector<double> x(params.begin(), params.end());
  double worst = 0.0;
  auto check = [&](std::size_t i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[i];
    const double den = std::max({std::abs(a), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(a - numeric) / den);
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) check(i);
  } else {
    for (std::size_t i : indices) check(i);
  }
  return worst;
}

#define SUBPX_INSTANTIATE(T)                                                              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const ConvRef<T>&);                 \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const ConvRef<T>&,              \
                                        const Tensor<T>&, bool);                          \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> l2_normalize_channels(const Tensor<T>&, T);                          \
  template Tensor<T> l2_normalize_channels_backward(const Tensor<T>&, const Tensor<T>&,   \
                                                    T);                                   \
  template SoftArgMax<T> softargmax2d(const ScoreMap<T>&);                                \
  template ScoreMap<T> softargmax2d_backward(const ScoreMap<T>&, const SoftArgMax<T>&, T, \
                                             T);                                          \
  template void adam_step(std::span<T>, std::span<const T>, AdamState<T>&);

SUBPX_INSTANTIATE(float)
SUBPX_INSTANTIATE(double)

#undef SUBPX_INSTANTIATE

}  // namespace subpx
