#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "subpx/geometry.hpp"

namespace subpx {

struct RansacConfig {
  double threshold_px = 1.0;
  double msac_margin_factor = 1.5;
  int iterations = 1000;
  std::uint64_t seed = 0;
  int min_sample = 8;
  // Local optimization of every new best hypothesis: lo_samples seeded
  // non-minimal resamples of its inliers, each followed by iterated
  // least-squares refits. Off gives plain sampling plus one final refit.
  bool local_optimization = true;
  int lo_samples = 10;
  int lo_refits = 5;

  void validate() const;
  bool operator==(const RansacConfig&) const = default;
};

/// Linear eight-point solver on calibrated points (Hartley-normalized),
/// projected onto the essential manifold (s, s, 0).
EssentialMatrix eight_point(std::span<const Correspondence> corrs);

/// Same linear solve, but only forced to rank 2. Used for minimal-sample
/// hypotheses: with noisy points the essential projection of an 8-point
/// solution is often far from every correspondence.
EssentialMatrix eight_point_rank2(std::span<const Correspondence> corrs);

struct MsacScore {
  double score = 0.0;
  std::vector<std::uint8_t> inliers;
  std::size_t n_inliers = 0;
};

/// sum_i min(e_i, (1.5 t)^2); inlier iff sqrt(e_i) < 1.5 t.
MsacScore msac_score(const EssentialMatrix& e, std::span<const Correspondence> corrs,
                     double t_norm, double margin_factor = 1.5);

struct EstimationResult {
  bool success = false;
  EssentialMatrix e;
  RelativePose pose;
  std::vector<std::uint8_t> inliers;
  std::size_t n_inliers = 0;
  double inlier_ratio = 0.0;
  // MSAC scores of the best sampled hypothesis and of the refit, both
  // evaluated on the final inlier set.
  double hypothesis_score = 0.0;
  double refit_score = 0.0;
  int best_iteration = -1;
};

/// Uniform-sampling MSAC RANSAC with local optimization and a final
/// least-squares refit on the best inlier set. Deterministic given cfg.seed.
EstimationResult ransac(std::span<const Correspondence> corrs, const CameraIntrinsics& k1,
                        const CameraIntrinsics& k2, const RansacConfig& cfg);

}  // namespace subpx
