#include "subpx/refine_net.hpp"

#include <cmath>

#include "subpx/error.hpp"
#include "subpx/rng.hpp"

namespace subpx {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kSamOnly: return "sam-only";
    case Variant::kCnnOnly: return "cnn-only";
    case Variant::kCnnDg: return "cnn-dg";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::kFull;
  if (name == "sam-only") return Variant::kSamOnly;
  if (name == "cnn-only") return Variant::kCnnOnly;
  if (name == "cnn-dg") return Variant::kCnnDg;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected full, sam-only, cnn-only or cnn-dg)");
}

void RefineConfig::validate() const {
  if (input_patch <= 0 || input_patch % 2 == 0 || output_map <= 0 || output_map % 2 == 0) {
    throw ConfigError("refine config: input_patch and output_map must be odd and positive");
  }
  if (input_patch - 6 != output_map) {
    throw ConfigError("refine config: three valid 3x3 layers require input_patch - 6 == output_map");
  }
  const double expected = static_cast<double>(input_patch / 2) / (output_map / 2);
  if (std::abs(sigma - expected) > 1e-12) {
    throw ConfigError("refine config: sigma must equal floor(input_patch/2) / floor(output_map/2)");
  }
  for (int c : hidden_channels) {
    if (c <= 0) throw ConfigError("refine config: channel counts must be positive");
  }
  if (hidden_channels[0] != hidden_channels[1] || hidden_channels[2] != hidden_channels[3]) {
    throw ConfigError("refine config: 'same' layers (2 and 4) need equal in/out channels");
  }
  if (descriptor_dim <= 0) throw ConfigError("refine config: descriptor_dim must be positive");
}

ParameterLayout ParameterLayout::for_config(const RefineConfig& cfg) {
  ParameterLayout l;
  if (!cfg.has_network()) return l;
  const std::array<int, kNumLayers + 1> plan{cfg.in_channels(), cfg.hidden_channels[0],
                                             cfg.hidden_channels[1], cfg.hidden_channels[2],
                                             cfg.hidden_channels[3], cfg.descriptor_dim};
  std::size_t off = 0;
  for (int i = 0; i < kNumLayers; ++i) {
    auto& s = l.layers[i];
    s.in_channels = plan[i];
    s.out_channels = plan[i + 1];
    s.padding = kPaddingPlan[i];
    s.kernel_offset = off;
    off += static_cast<std::size_t>(s.out_channels) * s.in_channels * 9;
    s.bias_offset = off;
    off += static_cast<std::size_t>(s.out_channels);
  }
  l.projection_offset = off;
  l.projection_size = cfg.variant == Variant::kCnnOnly ? cfg.descriptor_dim : 0;
  l.total = off + l.projection_size;
  return l;
}

std::size_t parameter_count(const RefineConfig& cfg) {
  if (!cfg.has_network()) return 0;
  const std::size_t c0 = cfg.in_channels();
  const std::size_t c1 = cfg.hidden_channels[0];
  const std::size_t c2 = cfg.hidden_channels[1];
  const std::size_t c3 = cfg.hidden_channels[2];
  const std::size_t c4 = cfg.hidden_channels[3];
  const std::size_t d = cfg.descriptor_dim;
  std::size_t n = 9 * (c0 * c1 + c1 * c2 + c2 * c3 + c3 * c4 + c4 * d) + c1 + c2 + c3 + c4 + d;
  if (cfg.variant == Variant::kCnnOnly) n += d;
  return n;
}

template <typename T>
RefinementNet<T>::RefinementNet(const RefineConfig& cfg)
    : cfg_(cfg), layout_(ParameterLayout::for_config(cfg)), params_(layout_.total, T(0)) {
  cfg_.validate();
}

template <typename T>
RefinementNet<T> RefinementNet<T>::initialized(const RefineConfig& cfg, std::uint64_t seed) {
  RefinementNet net(cfg);
  Rng rng(seed, Stream::kInit, 0);
  auto p = net.mutable_parameters();
  for (const auto& l : net.layout_.layers) {
    const double bound = std::sqrt(6.0 / (l.in_channels * 9.0));
    const std::size_t n = static_cast<std::size_t>(l.out_channels) * l.in_channels * 9;
    for (std::size_t i = 0; i < n; ++i) {
      p[l.kernel_offset + i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
  if (net.layout_.projection_size > 0) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cfg.descriptor_dim));
    for (std::size_t i = 0; i < net.layout_.projection_size; ++i) {
      p[net.layout_.projection_offset + i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
  return net;
}

template <typename T>
ConvRef<T> RefinementNet<T>::layer(int i) const {
  const auto& l = layout_.layers.at(static_cast<std::size_t>(i));
  const std::span<const T> all(params_);
  return {l.out_channels, l.in_channels, l.padding,
          all.subspan(l.kernel_offset, static_cast<std::size_t>(l.out_channels) * l.in_channels * 9),
          all.subspan(l.bias_offset, static_cast<std::size_t>(l.out_channels))};
}

template <typename T>
std::span<const T> RefinementNet<T>::projection() const {
  return std::span<const T>(params_).subspan(layout_.projection_offset, layout_.projection_size);
}

template <typename T>
void RefinementNet<T>::forward_view(const Tensor<T>& image, const Tensor<T>& score,
                                    std::vector<T> query, ViewCache<T>& c) const {
  const int p = cfg_.input_patch;
  if (image.channels != 1 || image.height != p || image.width != p) {
    throw InvalidInput("refine forward: image patch must be 1 x " + std::to_string(p) + " x " +
                       std::to_string(p));
  }
  const bool needs_score = cfg_.use_score_channel || cfg_.variant == Variant::kSamOnly;
  if (needs_score && (score.channels != 1 || score.height != p || score.width != p)) {
    throw ConfigError("refine forward: configuration requires a detector score patch");
  }

  if (cfg_.variant == Variant::kSamOnly) {
    c.scores = ScoreMap<T>(p);
    c.scores.values = score.data;
    c.soft = softargmax2d(c.scores);
    return;
  }

  if (cfg_.use_score_channel) {
    c.input = Tensor<T>(2, p, p);
    std::copy(image.data.begin(), image.data.end(), c.input.data.begin());
    std::copy(score.data.begin(), score.data.end(), c.input.data.begin() + image.size());
  } else {
    c.input = image;
  }

  const Tensor<T>* x = &c.input;
  for (int i = 0; i < kNumLayers; ++i) {
    c.pre[i] = conv2d_forward(*x, layer(i));
    c.post[i] = i + 1 < kNumLayers ? relu(c.pre[i]) : c.pre[i];
    x = &c.post[i];
  }
  c.features = l2_normalize_channels(c.post[kNumLayers - 1]);

  const int m = cfg_.output_map;
  const int plane = m * m;
  if (cfg_.variant == Variant::kCnnOnly) {
    const auto w = projection();
    query.assign(w.begin(), w.end());
  }
  c.query = std::move(query);
  c.scores = ScoreMap<T>(m);
  for (int ch = 0; ch < cfg_.descriptor_dim; ++ch) {
    const T q = c.query[static_cast<std::size_t>(ch)];
    const T* f = c.features.data.data() + static_cast<std::size_t>(ch) * plane;
    for (int i = 0; i < plane; ++i) c.scores.values[static_cast<std::size_t>(i)] += f[i] * q;
  }
  c.soft = softargmax2d(c.scores);
}

template <typename T>
ForwardResult<T> RefinementNet<T>::forward(const PatchPair<T>& pair) const {
  const auto d = static_cast<std::size_t>(cfg_.descriptor_dim);
  if (cfg_.variant != Variant::kSamOnly && (pair.d1.size() != d || pair.d2.size() != d)) {
    throw InvalidInput("refine forward: descriptor dimension " + std::to_string(pair.d1.size()) +
                       " does not match the network's " + std::to_string(d));
  }
  std::vector<T> q1;
  std::vector<T> q2;
  if (cfg_.variant == Variant::kFull) {
    q1.resize(d);
    for (std::size_t i = 0; i < d; ++i) q1[i] = (pair.d1[i] + pair.d2[i]) / T(2);
    q2 = q1;
  } else if (cfg_.variant == Variant::kCnnDg) {
    q1 = pair.d1;
    q2 = pair.d2;
  }

  ForwardResult<T> out;
  forward_view(pair.image1, pair.score1, std::move(q1), out.cache[0]);
  forward_view(pair.image2, pair.score2, std::move(q2), out.cache[1]);

  const T scale = cfg_.variant == Variant::kSamOnly ? T(1) : static_cast<T>(cfg_.sigma);
  out.delta1 = {scale * out.cache[0].soft.x, scale * out.cache[0].soft.y};
  out.delta2 = {scale * out.cache[1].soft.x, scale * out.cache[1].soft.y};
  out.scores1 = out.cache[0].scores;
  out.scores2 = out.cache[1].scores;
  out.version = version_;
  out.valid = true;
  return out;
}

template <typename T>
void RefinementNet<T>::backward_view(const ForwardResult<T>& fwd, int view,
                                     std::array<T, 2> grad_delta, std::span<T> grads) const {
  if (!fwd.valid || fwd.version != version_) {
    throw InvalidState("refine backward: forward cache is missing or stale");
  }
  if (grads.size() != params_.size()) {
    throw InvalidInput("refine backward: gradient buffer has the wrong size");
  }
  if (!cfg_.has_network()) return;
  const auto& c = fwd.cache.at(static_cast<std::size_t>(view));
  const T sigma = static_cast<T>(cfg_.sigma);
  const ScoreMap<T> gs =
      softargmax2d_backward(c.scores, c.soft, sigma * grad_delta[0], sigma * grad_delta[1]);

  const int m = cfg_.output_map;
  const int plane = m * m;
  Tensor<T> gf(cfg_.descriptor_dim, m, m);
  for (int ch = 0; ch < cfg_.descriptor_dim; ++ch) {
    const T q = c.query[static_cast<std::size_t>(ch)];
    for (int i = 0; i < plane; ++i) {
      gf.data[static_cast<std::size_t>(ch) * plane + i] = gs.values[static_cast<std::size_t>(i)] * q;
    }
  }
  if (cfg_.variant == Variant::kCnnOnly) {
    for (int ch = 0; ch < cfg_.descriptor_dim; ++ch) {
      T acc = T(0);
      const T* f = c.features.data.data() + static_cast<std::size_t>(ch) * plane;
      for (int i = 0; i < plane; ++i) acc += gs.values[static_cast<std::size_t>(i)] * f[i];
      grads[layout_.projection_offset + static_cast<std::size_t>(ch)] += acc;
    }
  }

  Tensor<T> g = l2_normalize_channels_backward(c.post[kNumLayers - 1], gf);
  for (int i = kNumLayers - 1; i >= 0; --i) {
    if (i + 1 < kNumLayers) g = relu_backward(c.pre[i], g);
    const Tensor<T>& in = i == 0 ? c.input : c.post[i - 1];
    ConvGrads<T> cg = conv2d_backward(in, layer(i), g, i > 0);
    const auto& l = layout_.layers[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < cg.kernels.size(); ++k) grads[l.kernel_offset + k] += cg.kernels[k];
    for (std::size_t k = 0; k < cg.bias.size(); ++k) grads[l.bias_offset + k] += cg.bias[k];
    if (i > 0) g = std::move(cg.input);
  }
}

template <typename T>
std::vector<T> RefinementNet<T>::backward(const ForwardResult<T>& fwd,
                                          std::array<T, 2> grad_delta1,
                                          std::array<T, 2> grad_delta2) const {
  std::vector<T> grads(params_.size(), T(0));
  backward_view(fwd, 0, grad_delta1, grads);
  backward_view(fwd, 1, grad_delta2, grads);
  return grads;
}

template class RefinementNet<float>;
template class RefinementNet<double>;

std::optional<PatchWindow> extract_patch(const ImageGrid& image, const PixelPoint& keypoint,
                                         const RefineConfig& cfg) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw InvalidInput("extract_patch: empty or malformed image");
  }
  if (!std::isfinite(keypoint.x) || !std::isfinite(keypoint.y) || keypoint.x < 0.0 ||
      keypoint.y < 0.0 || keypoint.x > image.width || keypoint.y > image.height) {
    throw InvalidInput("extract_patch: keypoint outside the image");
  }
  // std::round rounds halfway cases away from zero.
  const int cx = static_cast<int>(std::round(keypoint.x));
  const int cy = static_cast<int>(std::round(keypoint.y));
  const int r = cfg.input_patch / 2;
  if (cx - r < 0 || cy - r < 0 || cx + r >= image.width || cy + r >= image.height) {
    return std::nullopt;
  }
  const bool has_score = !image.score.empty();
  PatchWindow w;
  w.center_x = cx;
  w.center_y = cy;
  w.image = Tensor<float>(1, cfg.input_patch, cfg.input_patch);
  if (has_score) w.score = Tensor<float>(1, cfg.input_patch, cfg.input_patch);
  for (int y = 0; y < cfg.input_patch; ++y) {
    for (int x = 0; x < cfg.input_patch; ++x) {
      const std::size_t src = static_cast<std::size_t>(cy - r + y) * image.width + (cx - r + x);
      w.image.at(0, y, x) = image.pixels[src];
      if (has_score) w.score.at(0, y, x) = image.score[src];
    }
  }
  return w;
}

RefinedMatch apply_offsets(const PixelPoint& p1, const PixelPoint& p2,
                           std::array<double, 2> delta1, std::array<double, 2> delta2) {
  RefinedMatch m;
  m.delta1 = delta1;
  m.delta2 = delta2;
  m.p1_refined = {p1.x + delta1[0], p1.y + delta1[1]};
  m.p2_refined = {p2.x + delta2[0], p2.y + delta2[1]};
  return m;
}

RefinedMatch skipped_match(const PixelPoint& p1, const PixelPoint& p2) {
  RefinedMatch m = apply_offsets(p1, p2, {0.0, 0.0}, {0.0, 0.0});
  m.skipped = true;
  return m;
}

}  // namespace subpx
