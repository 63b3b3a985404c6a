#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "subpx/geometry.hpp"
#include "subpx/rng.hpp"
#include "subpx/tensor.hpp"

namespace subpx {

struct SceneConfig {
  std::uint64_t seed = 42;
  int matches_per_pair = 200;  // 3D points per image pair
  int image_width = 640;
  int image_height = 480;
  double focal_min = 450.0;
  double focal_max = 650.0;
  double max_rotation_deg = 15.0;
  double depth_min = 10.0;
  double depth_max = 30.0;
  int texture_blobs = 4;
  double blob_sigma_min = 1.0;
  double blob_sigma_max = 1.8;
  double affine_jitter = 0.05;
  double photometric_noise = 0.02;
  double descriptor_noise = 0.1;
  // Weight of the appearance (blob polarity) direction in the base descriptor.
  double descriptor_appearance = 0.8;
  int descriptor_dim = 32;
  double keypoint_jitter = 0.0;
  double outlier_fraction = 0.1;
  // When false the simulated detections start from the exact projections.
  bool quantize = true;
  int patch_size = 11;
  int border_margin = 8;
  std::optional<Vec3> forced_translation;

  void validate() const;
  bool operator==(const SceneConfig&) const = default;
};

struct TwoViewScene {
  RelativePose pose;
  CameraIntrinsics k1;
  CameraIntrinsics k2;
  std::vector<Vec3> points;  // camera-1 frame, visible in both views
};

/// Pose, intrinsics and visible 3D points for image pair `pair_index`.
/// A pure function of (cfg, pair_index).
TwoViewScene sample_two_view(const SceneConfig& cfg, std::uint64_t pair_index);

PixelPoint project(const CameraIntrinsics& k, const Vec3& p_cam);

struct Blob {
  double dx = 0.0;  // offset from the keypoint in the canonical frame
  double dy = 0.0;
  double sigma = 1.0;
  double amplitude = 0.0;
};

// Canonical local appearance of one 3D point. blobs[0] is the dominant blob
// and sits exactly on the keypoint.
struct Texture {
  double background = 0.5;
  std::vector<Blob> blobs;

  int polarity() const { return blobs.empty() || blobs[0].amplitude >= 0.0 ? 1 : -1; }
};

Texture make_texture(const SceneConfig& cfg, Rng& rng);

struct RenderedPatch {
  Tensor<float> image;  // (1, P, P), clamped to [0, 1]
  Tensor<float> score;  // (1, P, P), dominant-blob response, max 1
};

/// Renders the P x P window whose center pixel is (window_x, window_y). The
/// canonical texture is anchored at `true_center`; a pixel x samples the
/// texture at affine * (x - true_center).
RenderedPatch render_patch(const Texture& tex, const PixelPoint& true_center, int window_x,
                           int window_y, int patch_size, const Eigen::Matrix2d& affine,
                           double noise_std, Rng& rng);

// Random affine close to identity, each entry perturbed by at most `jitter`.
Eigen::Matrix2d random_affine(double jitter, Rng& rng);

// Global appearance direction of the descriptor space. Depends only on the
// descriptor dimension, never on the scene seed.
std::vector<double> appearance_direction(const SceneConfig& cfg);

/// Unit base descriptor for a point: appearance direction signed by the
/// dominant-blob polarity, mixed with a point-specific random direction.
std::vector<double> base_descriptor(const SceneConfig& cfg, int polarity, Rng& rng);

/// Per-view descriptors: base + N(0, descriptor_noise^2 / D) per component,
/// renormalized.
std::pair<std::vector<float>, std::vector<float>> make_descriptors(
    const SceneConfig& cfg, const std::vector<double>& base, Rng& rng);

struct TwoViewSample {
  std::int64_t sample_id = 0;
  std::int64_t pair_id = 0;
  Tensor<float> patch1;
  Tensor<float> patch2;
  Tensor<float> score1;
  Tensor<float> score2;
  std::vector<float> d1;
  std::vector<float> d2;
  PixelPoint true1;
  PixelPoint true2;
  PixelPoint quantized1;
  PixelPoint quantized2;
  CameraIntrinsics k1;
  CameraIntrinsics k2;
  RelativePose gt_pose;
  EssentialMatrix gt_e;
  bool is_outlier = false;
};

// Deterministic outlier interleaving: exactly floor(n * fraction) of the
// first n global sample ids are outliers.
bool is_outlier_index(std::int64_t sample_id, double outlier_fraction);

/// All correspondences of image pair `pair_index` (sample ids
/// pair_index * matches_per_pair + i).
std::vector<TwoViewSample> generate_pair(const SceneConfig& cfg, std::int64_t pair_index);

/// First n samples of the dataset defined by cfg.
std::vector<TwoViewSample> generate_samples(const SceneConfig& cfg, std::int64_t n);

}  // namespace subpx
