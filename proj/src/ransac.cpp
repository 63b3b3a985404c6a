#include "subpx/ransac.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "subpx/error.hpp"
#include "subpx/rng.hpp"

namespace subpx {

void RansacConfig::validate() const {
  if (!(threshold_px > 0.0)) throw ConfigError("ransac: threshold_px must be positive");
  if (!(msac_margin_factor > 0.0)) throw ConfigError("ransac: margin factor must be positive");
  if (iterations < 1) throw ConfigError("ransac: iterations must be >= 1");
  if (min_sample != 8) throw ConfigError("ransac: the eight-point solver needs min_sample == 8");
  if (lo_samples < 0 || lo_refits < 0) {
    throw ConfigError("ransac: lo_samples and lo_refits must be non-negative");
  }
}

namespace {

using Mat9 = Eigen::Matrix<double, 9, 9>;

// Similarity taking the points to zero centroid and mean distance sqrt(2).
Mat3 hartley_transform(std::span<const Correspondence> corrs, bool second) {
  double cx = 0.0;
  double cy = 0.0;
  for (const auto& c : corrs) {
    const auto& n = second ? c.n2 : c.n1;
    cx += n.x;
    cy += n.y;
  }
  const double inv = 1.0 / static_cast<double>(corrs.size());
  cx *= inv;
  cy *= inv;
  double md = 0.0;
  for (const auto& c : corrs) {
    const auto& n = second ? c.n2 : c.n1;
    md += std::hypot(n.x - cx, n.y - cy);
  }
  md *= inv;
  if (!(md > 1e-12)) throw EstimationError("eight_point: points coincide (degenerate configuration)");
  const double s = std::sqrt(2.0) / md;
  Mat3 t;
  t << s, 0.0, -s * cx,
       0.0, s, -s * cy,
       0.0, 0.0, 1.0;
  return t;
}

}  // namespace

namespace {

enum class Projection { kRank2, kEssential };

EssentialMatrix linear_eight_point(std::span<const Correspondence> corrs, Projection proj) {
  if (corrs.size() < 8) throw EstimationError("eight_point: at least 8 correspondences required");
  const Mat3 t1 = hartley_transform(corrs, false);
  const Mat3 t2 = hartley_transform(corrs, true);
  const Eigen::Index rows = std::max<Eigen::Index>(9, static_cast<Eigen::Index>(corrs.size()));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 9);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Vec3 x1 = t1 * corrs[i].n1.vec();
    const Vec3 x2 = t2 * corrs[i].n2.vec();
    const auto r = static_cast<Eigen::Index>(i);
    a.row(r) << x2(0) * x1(0), x2(0) * x1(1), x2(0),
                x2(1) * x1(0), x2(1) * x1(1), x2(1),
                x1(0), x1(1), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(7) > 1e-10 * sv(0))) {
    throw EstimationError("eight_point: rank-deficient constraint matrix (degenerate configuration)");
  }
  const Eigen::Matrix<double, 9, 1> v = svd.matrixV().col(8);
  Mat3 en;
  en << v(0), v(1), v(2),
        v(3), v(4), v(5),
        v(6), v(7), v(8);
  const Mat3 e = t2.transpose() * en * t1;
  Eigen::JacobiSVD<Mat3> dec(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d = dec.singularValues();
  if (proj == Projection::kEssential) {
    d = Vec3(1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0);
  } else {
    d(2) = 0.0;
    d /= d.norm();
  }
  return {dec.matrixU() * d.asDiagonal() * dec.matrixV().transpose()};
}

}  // namespace

EssentialMatrix eight_point(std::span<const Correspondence> corrs) {
  return linear_eight_point(corrs, Projection::kEssential);
}

EssentialMatrix eight_point_rank2(std::span<const Correspondence> corrs) {
  return linear_eight_point(corrs, Projection::kRank2);
}

MsacScore msac_score(const EssentialMatrix& e, std::span<const Correspondence> corrs,
                     double t_norm, double margin_factor) {
  if (!(t_norm > 0.0)) throw InvalidInput("msac_score: threshold must be positive");
  const double margin = margin_factor * t_norm;
  const double cap = margin * margin;
  MsacScore out;
  out.inliers.assign(corrs.size(), 0);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double err = epipolar_error(corrs[i].n1, corrs[i].n2, e);
    out.score += std::min(err, cap);
    if (std::sqrt(err) < margin) {
      out.inliers[i] = 1;
      ++out.n_inliers;
    }
  }
  return out;
}

namespace {

std::vector<Correspondence> select(std::span<const Correspondence> corrs,
                                   const std::vector<std::uint8_t>& mask) {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (mask[i]) out.push_back(corrs[i]);
  }
  return out;
}

}  // namespace

namespace {

struct Model {
  EssentialMatrix e;
  MsacScore score;
};

// Iterated least-squares refits on the current inlier set while the MSAC
// score keeps dropping.
void refine_by_refits(Model& m, std::span<const Correspondence> corrs, double t_norm,
                      const RansacConfig& cfg) {
  for (int k = 0; k < cfg.lo_refits; ++k) {
    if (m.score.n_inliers < static_cast<std::size_t>(cfg.min_sample)) return;
    Model next;
    try {
      next.e = eight_point(select(corrs, m.score.inliers));
      next.score = msac_score(next.e, corrs, t_norm, cfg.msac_margin_factor);
    } catch (const EstimationError&) {
      return;
    } catch (const DegenerateGeometry&) {
      return;
    }
    if (!(next.score.score < m.score.score)) return;
    m = std::move(next);
  }
}

// Non-minimal resampling from the inliers of a new best model. Subsets are
// half the inlier set (at least two minimal samples), so a few inner draws
// escape the bias of the noisy minimal hypothesis.
void local_optimization(Model& best, std::span<const Correspondence> corrs, double t_norm,
                        const RansacConfig& cfg, int iteration) {
  refine_by_refits(best, corrs, t_norm, cfg);
  const std::size_t floor_size = 2 * static_cast<std::size_t>(cfg.min_sample);
  Rng rng(cfg.seed, Stream::kLocalOpt, static_cast<std::uint64_t>(iteration));
  for (int k = 0; k < cfg.lo_samples; ++k) {
    std::vector<Correspondence> pool = select(corrs, best.score.inliers);
    if (pool.size() <= floor_size) return;
    const std::size_t take = std::max(floor_size, pool.size() / 2);
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    }
    pool.resize(take);
    Model cand;
    try {
      cand.e = eight_point(pool);
      cand.score = msac_score(cand.e, corrs, t_norm, cfg.msac_margin_factor);
    } catch (const EstimationError&) {
      continue;
    } catch (const DegenerateGeometry&) {
      continue;
    }
    refine_by_refits(cand, corrs, t_norm, cfg);
    if (cand.score.score < best.score.score) best = std::move(cand);
  }
}

}  // namespace

EstimationResult ransac(std::span<const Correspondence> input, const CameraIntrinsics& k1,
                        const CameraIntrinsics& k2, const RansacConfig& cfg) {
  cfg.validate();
  const std::size_t n = input.size();
  if (n < static_cast<std::size_t>(cfg.min_sample)) {
    throw InvalidInput("ransac: at least 8 correspondences required");
  }
  const double t_norm = normalized_threshold(cfg.threshold_px, k1, k2);

  // Sampling runs over a canonical (coordinate-sorted) order so the result
  // does not depend on how the caller ordered the matches.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const auto& c = input[i];
    return std::array{c.n1.x, c.n1.y, c.n2.x, c.n2.y};
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<Correspondence> corrs(n);
  for (std::size_t i = 0; i < n; ++i) corrs[i] = input[order[i]];

  EstimationResult result;
  Model best;
  best.score.score = std::numeric_limits<double>::infinity();
  EssentialMatrix best_sampled;
  std::vector<std::size_t> pool(n);
  std::vector<Correspondence> sample(static_cast<std::size_t>(cfg.min_sample));
  for (int it = 0; it < cfg.iterations; ++it) {
    Rng rng(cfg.seed, Stream::kRansac, static_cast<std::uint64_t>(it));
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (int k = 0; k < cfg.min_sample; ++k) {
      const auto j = static_cast<std::size_t>(k) + rng.below(n - static_cast<std::size_t>(k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
      sample[static_cast<std::size_t>(k)] = corrs[pool[static_cast<std::size_t>(k)]];
    }
    Model m;
    try {
      m.e = eight_point_rank2(sample);
      m.score = msac_score(m.e, corrs, t_norm, cfg.msac_margin_factor);
    } catch (const EstimationError&) {
      continue;
    } catch (const DegenerateGeometry&) {
      continue;
    }
    if (!(m.score.score < best.score.score)) continue;
    const EssentialMatrix sampled = m.e;
    if (cfg.local_optimization) local_optimization(m, corrs, t_norm, cfg, it);
    best = std::move(m);
    best_sampled = sampled;
    result.best_iteration = it;
  }
  if (result.best_iteration < 0 || best.score.n_inliers < static_cast<std::size_t>(cfg.min_sample)) {
    return result;
  }

  // Final least-squares refit on the best inlier set. After local
  // optimization the best model is itself such a refit and is kept when the
  // extra refit would raise the score.
  Model final_model;
  try {
    final_model.e = eight_point(select(corrs, best.score.inliers));
    final_model.score = msac_score(final_model.e, corrs, t_norm, cfg.msac_margin_factor);
  } catch (const EstimationError&) {
    return result;
  } catch (const DegenerateGeometry&) {
    return result;
  }
  if (cfg.local_optimization && best.score.score < final_model.score.score) {
    final_model = std::move(best);
  }
  const auto supports = select(corrs, final_model.score.inliers);
  if (supports.size() < static_cast<std::size_t>(cfg.min_sample)) return result;
  try {
    result.hypothesis_score =
        msac_score(best_sampled, supports, t_norm, cfg.msac_margin_factor).score;
    result.refit_score = msac_score(final_model.e, supports, t_norm, cfg.msac_margin_factor).score;
    result.pose = decompose_essential(final_model.e, supports);
  } catch (const AmbiguousCheirality&) {
    return result;
  } catch (const DegenerateGeometry&) {
    return result;
  }
  result.success = true;
  result.e = final_model.e;
  result.inliers.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) result.inliers[order[i]] = final_model.score.inliers[i];
  result.n_inliers = final_model.score.n_inliers;
  result.inlier_ratio = static_cast<double>(result.n_inliers) / static_cast<double>(n);
  return result;
}

}  // namespace subpx
