#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subpx/io.hpp"
#include "subpx/ransac.hpp"
#include "subpx/refine_net.hpp"
#include "subpx/synthetic.hpp"

namespace subpx {

inline constexpr double kFailedPoseError = 180.0;

struct EvalConfig {
  RansacConfig ransac;
  int repeats = 3;  // repeat k runs RANSAC with seed + k

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

struct PairMetrics {
  std::int64_t pair_id = 0;
  int repeat = 0;
  double pose_err_deg = kFailedPoseError;
  double inlier_ratio = 0.0;
  std::size_t n_inliers = 0;
  bool failed = true;
};

struct MetricsSummary {
  double auc5 = 0.0;
  double auc10 = 0.0;
  double auc20 = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double mean_inlier_ratio = 0.0;
};

MetricsSummary summarize(std::span<const PairMetrics> rows);

double median(std::vector<double> values);

// Correspondences of one image pair with explicit keypoints.
struct PairMatches {
  std::int64_t pair_id = 0;
  CameraIntrinsics k1;
  CameraIntrinsics k2;
  RelativePose gt_pose;
  std::vector<PixelPoint> p1;
  std::vector<PixelPoint> p2;
};

/// Groups samples by pair_id (ascending), using the quantized keypoints or,
/// where a refined record exists for the sample id, the refined keypoints.
std::vector<PairMatches> group_pairs(std::span<const TwoViewSample> samples,
                                     std::span<const RefinedRecord> refined = {});

PairMetrics evaluate_pair(const PairMatches& pair, const RansacConfig& cfg, int repeat);

/// RANSAC + pose error for every pair and repeat, rows in (repeat, pair)
/// order. Pairs with fewer than 8 matches are recorded as failures (180 deg).
std::vector<PairMetrics> evaluate(std::span<const PairMatches> pairs, const EvalConfig& cfg);

struct EvalReport {
  std::vector<PairMetrics> unrefined;
  std::vector<PairMetrics> refined;  // empty without refined matches
  MetricsSummary unrefined_summary;
  std::optional<MetricsSummary> refined_summary;
};

EvalReport evaluate_dataset(std::span<const TwoViewSample> samples,
                            std::span<const RefinedRecord> refined, bool has_refined,
                            const EvalConfig& cfg);

std::string metrics_csv(const EvalReport& report);
std::string metrics_text(const EvalReport& report);

/// Applies the network (or the SAM-only head) to every sample.
std::vector<RefinedRecord> refine_samples(const RefinementNet<float>& net,
                                          std::span<const TwoViewSample> samples);

// Epipolar distance in pixels (normalized distance times the mean focal).
double epipolar_px(const TwoViewSample& s, const PixelPoint& p1, const PixelPoint& p2);

struct OffsetHistograms {
  static constexpr double kLengthBin = 0.25;
  static constexpr double kLengthMax = 5.0;
  static constexpr double kAngleBin = 15.0;
  std::array<std::int64_t, 20> length{};
  std::array<std::int64_t, 24> orientation{};
  std::int64_t vectors = 0;       // non-skipped offset vectors
  std::int64_t zero_length = 0;   // excluded from the orientation histogram
};

/// Histograms of offset length and orientation over both views of every
/// non-skipped match.
OffsetHistograms offset_histograms(std::span<const RefinedRecord> records);

std::string length_histogram_csv(const OffsetHistograms& h);
std::string orientation_histogram_csv(const OffsetHistograms& h);

}  // namespace subpx
