#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "subpx/geometry.hpp"
#include "subpx/tensor.hpp"

namespace subpx {

// Ablation variants of the refinement head.
//   kFull     - score = F . (d1 + d2) / 2
//   kCnnDg    - score = F . d_k (each view guided by its own descriptor)
//   kCnnOnly  - score = F . w with a learned projection w
//   kSamOnly  - no network; SoftArgMax on the detector score patch
enum class Variant { kFull, kSamOnly, kCnnOnly, kCnnDg };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct RefineConfig {
  int input_patch = 11;
  int output_map = 5;
  double sigma = 2.5;
  std::array<int, 4> hidden_channels{16, 16, 64, 64};
  int descriptor_dim = 32;
  bool use_score_channel = false;
  Variant variant = Variant::kFull;

  int in_channels() const { return use_score_channel ? 2 : 1; }
  bool has_network() const { return variant != Variant::kSamOnly; }
  // Largest displacement per axis, sigma * floor(output_map / 2).
  double max_offset() const { return sigma * (output_map / 2); }
  void validate() const;

  bool operator==(const RefineConfig&) const = default;
};

inline constexpr int kNumLayers = 5;
inline constexpr std::array<Padding, kNumLayers> kPaddingPlan{
    Padding::kValid, Padding::kSame, Padding::kValid, Padding::kSame, Padding::kValid};

struct LayerShape {
  int out_channels = 0;
  int in_channels = 0;
  Padding padding = Padding::kValid;
  std::size_t kernel_offset = 0;
  std::size_t bias_offset = 0;
};

// Parameter layout: the five conv layers (kernels then bias each) in order,
// followed by the projection vector for kCnnOnly.
struct ParameterLayout {
  std::array<LayerShape, kNumLayers> layers{};
  std::size_t projection_offset = 0;
  std::size_t projection_size = 0;
  std::size_t total = 0;

  static ParameterLayout for_config(const RefineConfig& cfg);
};

/// Closed-form parameter count of the refinement network.
std::size_t parameter_count(const RefineConfig& cfg);

template <typename T>
struct PatchPair {
  Tensor<T> image1;  // (1, P, P), values in [0, 1]
  Tensor<T> image2;
  Tensor<T> score1;  // (1, P, P) detector score patch, may be empty
  Tensor<T> score2;
  std::vector<T> d1;
  std::vector<T> d2;
  PixelPoint center1;
  PixelPoint center2;
};

// Activations of one view kept for the backward pass.
template <typename T>
struct ViewCache {
  Tensor<T> input;
  std::array<Tensor<T>, kNumLayers> pre;   // conv outputs
  std::array<Tensor<T>, kNumLayers> post;  // after ReLU (last layer: identity)
  Tensor<T> features;                      // L2-normalized final layer
  std::vector<T> query;                    // descriptor-side vector of the score
  ScoreMap<T> scores;
  SoftArgMax<T> soft;
};

template <typename T>
struct ForwardResult {
  std::array<T, 2> delta1{};
  std::array<T, 2> delta2{};
  ScoreMap<T> scores1;
  ScoreMap<T> scores2;
  std::array<ViewCache<T>, 2> cache;
  std::uint64_t version = 0;
  bool valid = false;
};

template <typename T>
class RefinementNet {
 public:
  explicit RefinementNet(const RefineConfig& cfg);

  // Fan-in scaled uniform init, bound sqrt(6 / fan_in), zero biases.
  static RefinementNet initialized(const RefineConfig& cfg, std::uint64_t seed);

  const RefineConfig& config() const { return cfg_; }
  const ParameterLayout& layout() const { return layout_; }

  std::span<const T> parameters() const { return params_; }
  // Mutable access invalidates every ForwardResult produced earlier.
  std::span<T> mutable_parameters() {
    ++version_;
    return params_;
  }
  std::uint64_t version() const { return version_; }

  ConvRef<T> layer(int i) const;
  std::span<const T> projection() const;

  ForwardResult<T> forward(const PatchPair<T>& pair) const;

  // Weight gradients for upstream gradients on both displacements. The
  // descriptors and patches are constants.
  std::vector<T> backward(const ForwardResult<T>& fwd, std::array<T, 2> grad_delta1,
                          std::array<T, 2> grad_delta2) const;

  // Accumulates the gradient of one view (0 or 1) into `grads`.
  void backward_view(const ForwardResult<T>& fwd, int view, std::array<T, 2> grad_delta,
                     std::span<T> grads) const;

  template <typename U>
  RefinementNet<U> cast() const {
    RefinementNet<U> out(cfg_);
    auto dst = out.mutable_parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  void forward_view(const Tensor<T>& image, const Tensor<T>& score, std::vector<T> query,
                    ViewCache<T>& cache) const;

  RefineConfig cfg_;
  ParameterLayout layout_;
  std::vector<T> params_;
  std::uint64_t version_ = 0;
};

struct ImageGrid {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major, grayscale [0, 1]
  std::vector<float> score;   // optional detector score map, same size

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct PatchWindow {
  Tensor<float> image;
  Tensor<float> score;  // empty if the grid has no score map
  int center_x = 0;
  int center_y = 0;
};

/// Extracts the P x P window around the rounded keypoint. Returns nullopt
/// (border skip) when the window leaves the image.
std::optional<PatchWindow> extract_patch(const ImageGrid& image, const PixelPoint& keypoint,
                                         const RefineConfig& cfg);

struct RefinedMatch {
  std::array<double, 2> delta1{};
  std::array<double, 2> delta2{};
  PixelPoint p1_refined;
  PixelPoint p2_refined;
  bool skipped = false;
};

RefinedMatch apply_offsets(const PixelPoint& p1, const PixelPoint& p2,
                           std::array<double, 2> delta1, std::array<double, 2> delta2);

// Border-skipped match: keypoints pass through, deltas recorded as zero.
RefinedMatch skipped_match(const PixelPoint& p1, const PixelPoint& p2);

}  // namespace subpx
