#include "subpx/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "subpx/error.hpp"

namespace subpx {

void SceneConfig::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (matches_per_pair <= 0 || image_width <= 0 || image_height <= 0) {
    throw ConfigError("scene config: matches_per_pair and image size must be positive");
  }
  if (!positive(focal_min) || !(focal_max >= focal_min)) {
    throw ConfigError("scene config: focal range must be positive and ordered");
  }
  if (!(max_rotation_deg >= 0.0) || max_rotation_deg > 180.0) {
    throw ConfigError("scene config: max_rotation_deg must lie in [0, 180]");
  }
  if (!positive(depth_min) || !(depth_max >= depth_min)) {
    throw ConfigError("scene config: depth range must be positive and ordered");
  }
  if (texture_blobs < 1) throw ConfigError("scene config: texture_blobs must be >= 1");
  if (!positive(blob_sigma_min) || !(blob_sigma_max >= blob_sigma_min)) {
    throw ConfigError("scene config: blob sigma range must be positive and ordered");
  }
  if (affine_jitter < 0.0 || affine_jitter >= 0.5 || photometric_noise < 0.0 ||
      descriptor_noise < 0.0 || keypoint_jitter < 0.0) {
    throw ConfigError("scene config: noise and jitter settings must be non-negative "
                      "(affine_jitter < 0.5)");
  }
  if (!(descriptor_appearance >= 0.0 && descriptor_appearance <= 1.0)) {
    throw ConfigError("scene config: descriptor_appearance must lie in [0, 1]");
  }
  if (descriptor_dim < 2) throw ConfigError("scene config: descriptor_dim must be >= 2");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    throw ConfigError("scene config: outlier_fraction must lie in [0, 1)");
  }
  if (patch_size <= 0 || patch_size % 2 == 0) {
    throw ConfigError("scene config: patch_size must be odd");
  }
  const double needed = patch_size / 2 + 1 + std::ceil(keypoint_jitter);
  if (border_margin < needed) {
    throw ConfigError("scene config: border_margin too small for the patch size and jitter");
  }
  if (2 * border_margin >= std::min(image_width, image_height)) {
    throw ConfigError("scene config: border_margin leaves no usable image area");
  }
  if (forced_translation && !(forced_translation->norm() > 0.0)) {
    throw ConfigError("scene config: forced translation must be nonzero");
  }
}

PixelPoint project(const CameraIntrinsics& k, const Vec3& p) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

namespace {

Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    v = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-12);
  return v.normalized();
}

bool inside(const PixelPoint& p, const SceneConfig& cfg) {
  const double m = cfg.border_margin;
  return p.x >= m && p.y >= m && p.x <= cfg.image_width - 1 - m &&
         p.y <= cfg.image_height - 1 - m;
}

}  // namespace

TwoViewScene sample_two_view(const SceneConfig& cfg, std::uint64_t pair_index) {
  cfg.validate();
  Rng rng(cfg.seed, Stream::kScene, pair_index);
  constexpr int kPoseAttempts = 32;
  const int point_attempts = 64 * cfg.matches_per_pair;

  for (int attempt = 0; attempt < kPoseAttempts; ++attempt) {
    TwoViewScene scene;
    for (CameraIntrinsics* k : {&scene.k1, &scene.k2}) {
      const double f = rng.uniform(cfg.focal_min, cfg.focal_max);
      *k = {f, f, cfg.image_width / 2.0, cfg.image_height / 2.0};
    }
    const Vec3 axis = random_unit(rng);
    const double angle = rng.uniform(0.0, cfg.max_rotation_deg);
    scene.pose.rotation = axis_angle(axis, angle);
    const Vec3 t = random_unit(rng);
    scene.pose.translation = cfg.forced_translation ? cfg.forced_translation->normalized() : t;

    scene.points.reserve(static_cast<std::size_t>(cfg.matches_per_pair));
    for (int tries = 0; tries < point_attempts &&
                        static_cast<int>(scene.points.size()) < cfg.matches_per_pair;
         ++tries) {
      const double m = cfg.border_margin;
      const double u = rng.uniform(m, cfg.image_width - 1 - m);
      const double v = rng.uniform(m, cfg.image_height - 1 - m);
      const double depth = rng.uniform(cfg.depth_min, cfg.depth_max);
      const Vec3 x1(depth * (u - scene.k1.cx) / scene.k1.fx,
                    depth * (v - scene.k1.cy) / scene.k1.fy, depth);
      const Vec3 x2 = scene.pose.rotation * x1 + scene.pose.translation;
      if (x2.z() <= 1e-3) continue;
      if (!inside(project(scene.k2, x2), cfg)) continue;
      scene.points.push_back(x1);
    }
    if (static_cast<int>(scene.points.size()) == cfg.matches_per_pair) return scene;
  }
  throw GenerationError("sample_two_view: retry budget exhausted for pair " +
                        std::to_string(pair_index));
}

Texture make_texture(const SceneConfig& cfg, Rng& rng) {
  Texture tex;
  tex.background = 0.5;
  const double polarity = rng.uniform() < 0.5 ? -1.0 : 1.0;
  tex.blobs.push_back({0.0, 0.0, rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max),
                       polarity * rng.uniform(0.3, 0.45)});
  for (int k = 1; k < cfg.texture_blobs; ++k) {
    const double r = rng.uniform(2.5, 5.5);
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    tex.blobs.push_back({r * std::cos(a), r * std::sin(a),
                         rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max),
                         sign * rng.uniform(0.08, 0.2)});
  }
  return tex;
}

Eigen::Matrix2d random_affine(double jitter, Rng& rng) {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) a(i, j) += rng.uniform(-jitter, jitter);
  }
  return a;
}

RenderedPatch render_patch(const Texture& tex, const PixelPoint& true_center, int window_x,
                           int window_y, int patch_size, const Eigen::Matrix2d& affine,
                           double noise_std, Rng& rng) {
  RenderedPatch out{Tensor<float>(1, patch_size, patch_size),
                    Tensor<float>(1, patch_size, patch_size)};
  const int r = patch_size / 2;
  double score_max = 0.0;
  std::vector<double> score(static_cast<std::size_t>(patch_size) * patch_size);
  for (int row = 0; row < patch_size; ++row) {
    for (int col = 0; col < patch_size; ++col) {
      const Eigen::Vector2d x(window_x - r + col - true_center.x,
                              window_y - r + row - true_center.y);
      const Eigen::Vector2d local = affine * x;
      double value = tex.background;
      for (std::size_t k = 0; k < tex.blobs.size(); ++k) {
        const Blob& b = tex.blobs[k];
        const double dx = local.x() - b.dx;
        const double dy = local.y() - b.dy;
        const double resp = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        value += b.amplitude * resp;
        if (k == 0) {
          score[static_cast<std::size_t>(row) * patch_size + col] = resp;
          score_max = std::max(score_max, resp);
        }
      }
      if (noise_std > 0.0) value += rng.normal(0.0, noise_std);
      out.image.at(0, row, col) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  for (std::size_t i = 0; i < score.size(); ++i) {
    out.score.data[i] = score_max > 0.0 ? static_cast<float>(score[i] / score_max) : 0.0f;
  }
  return out;
}

std::vector<double> appearance_direction(const SceneConfig& cfg) {
  // Fixed across seeds: the descriptor space belongs to the (simulated)
  // extractor, so training and held-out sets must share it.
  constexpr std::uint64_t kDescriptorSpace = 0x6465736372697074ULL;
  Rng rng(kDescriptorSpace, Stream::kTexture, static_cast<std::uint64_t>(cfg.descriptor_dim));
  std::vector<double> g(static_cast<std::size_t>(cfg.descriptor_dim));
  double n2 = 0.0;
  for (double& v : g) {
    v = rng.normal();
    n2 += v * v;
  }
  for (double& v : g) v /= std::sqrt(n2);
  return g;
}

std::vector<double> base_descriptor(const SceneConfig& cfg, int polarity, Rng& rng) {
  const auto g = appearance_direction(cfg);
  const double a = cfg.descriptor_appearance;
  const double b = std::sqrt(std::max(0.0, 1.0 - a * a));
  std::vector<double> r(g.size());
  double rn = 0.0;
  for (double& v : r) {
    v = rng.normal();
    rn += v * v;
  }
  rn = std::sqrt(rn);
  std::vector<double> d(g.size());
  double n2 = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = polarity * a * g[i] + b * r[i] / rn;
    n2 += d[i] * d[i];
  }
  for (double& v : d) v /= std::sqrt(n2);
  return d;
}

namespace {

std::vector<float> noisy_descriptor(const SceneConfig& cfg, const std::vector<double>& base,
                                    Rng& rng) {
  const double std_per_dim = cfg.descriptor_noise / std::sqrt(static_cast<double>(base.size()));
  std::vector<double> d(base.size());
  double n2 = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = base[i] + (std_per_dim > 0.0 ? rng.normal(0.0, std_per_dim) : 0.0);
    n2 += d[i] * d[i];
  }
  const double n = std::sqrt(n2);
  std::vector<float> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<float>(d[i] / n);
  return out;
}

struct PointAppearance {
  Texture texture;
  std::vector<double> descriptor;
};

PointAppearance point_appearance(const SceneConfig& cfg, std::uint64_t global_point) {
  Rng rng(cfg.seed, Stream::kTexture, global_point);
  PointAppearance a;
  a.texture = make_texture(cfg, rng);
  a.descriptor = base_descriptor(cfg, a.texture.polarity(), rng);
  return a;
}

PixelPoint detect(const SceneConfig& cfg, const PixelPoint& truth, Rng& rng) {
  const double jx = rng.uniform(-1.0, 1.0) * cfg.keypoint_jitter;
  const double jy = rng.uniform(-1.0, 1.0) * cfg.keypoint_jitter;
  if (!cfg.quantize) return {truth.x + jx, truth.y + jy};
  return {std::round(truth.x) + jx, std::round(truth.y) + jy};
}

}  // namespace

std::pair<std::vector<float>, std::vector<float>> make_descriptors(
    const SceneConfig& cfg, const std::vector<double>& base, Rng& rng) {
  auto d1 = noisy_descriptor(cfg, base, rng);
  auto d2 = noisy_descriptor(cfg, base, rng);
  return {std::move(d1), std::move(d2)};
}

bool is_outlier_index(std::int64_t sample_id, double outlier_fraction) {
  const auto count = [&](std::int64_t n) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(n) * outlier_fraction + 1e-9));
  };
  return count(sample_id + 1) > count(sample_id);
}

std::vector<TwoViewSample> generate_pair(const SceneConfig& cfg, std::int64_t pair_index) {
  const TwoViewScene scene = sample_two_view(cfg, static_cast<std::uint64_t>(pair_index));
  const EssentialMatrix e = essential_from_pose(scene.pose);
  const int n = cfg.matches_per_pair;
  const std::int64_t first = pair_index * n;

  std::vector<PointAppearance> looks;
  looks.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    looks.push_back(point_appearance(cfg, static_cast<std::uint64_t>(first + j)));
  }

  std::vector<TwoViewSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::int64_t id = first + i;
    Rng rng(cfg.seed, Stream::kCorrespondence, static_cast<std::uint64_t>(id));
    TwoViewSample s;
    s.sample_id = id;
    s.pair_id = pair_index;
    s.k1 = scene.k1;
    s.k2 = scene.k2;
    s.gt_pose = scene.pose;
    s.gt_e = e;
    s.is_outlier = n > 1 && is_outlier_index(id, cfg.outlier_fraction);

    const std::size_t partner =
        s.is_outlier ? static_cast<std::size_t>((i + 1 + static_cast<int>(rng.below(
                                                             static_cast<std::uint64_t>(n - 1)))) %
                                                n)
                     : static_cast<std::size_t>(i);
    const Vec3& x1 = scene.points[static_cast<std::size_t>(i)];
    const Vec3& x2 = scene.points[partner];
    s.true1 = project(scene.k1, x1);
    s.true2 = project(scene.k2, scene.pose.rotation * x2 + scene.pose.translation);
    s.quantized1 = detect(cfg, s.true1, rng);
    s.quantized2 = detect(cfg, s.true2, rng);

    const Eigen::Matrix2d affine = random_affine(cfg.affine_jitter, rng);
    auto v1 = render_patch(looks[static_cast<std::size_t>(i)].texture, s.true1,
                           static_cast<int>(std::round(s.quantized1.x)),
                           static_cast<int>(std::round(s.quantized1.y)), cfg.patch_size,
                           Eigen::Matrix2d::Identity(), cfg.photometric_noise, rng);
    auto v2 = render_patch(looks[partner].texture, s.true2,
                           static_cast<int>(std::round(s.quantized2.x)),
                           static_cast<int>(std::round(s.quantized2.y)), cfg.patch_size, affine,
                           cfg.photometric_noise, rng);
    s.patch1 = std::move(v1.image);
    s.score1 = std::move(v1.score);
    s.patch2 = std::move(v2.image);
    s.score2 = std::move(v2.score);

    s.d1 = noisy_descriptor(cfg, looks[static_cast<std::size_t>(i)].descriptor, rng);
    s.d2 = noisy_descriptor(cfg, looks[partner].descriptor, rng);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TwoViewSample> generate_samples(const SceneConfig& cfg, std::int64_t n) {
  cfg.validate();
  if (n < 0) throw InvalidInput("generate_samples: negative sample count");
  std::vector<TwoViewSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t pair = 0; static_cast<std::int64_t>(out.size()) < n; ++pair) {
    auto batch = generate_pair(cfg, pair);
    for (auto& s : batch) {
      if (static_cast<std::int64_t>(out.size()) == n) break;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace subpx
