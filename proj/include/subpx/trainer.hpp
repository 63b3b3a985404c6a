#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subpx/refine_net.hpp"
#include "subpx/synthetic.hpp"
#include "subpx/tensor.hpp"

namespace subpx {

struct TrainConfig {
  std::int64_t steps = 5000;
  int batch_size = 8;
  double lr = 1e-4;
  double t_px = 1.5;
  std::uint64_t seed = 42;
  std::int64_t checkpoint_every = 1000;  // 0 disables periodic checkpoints
  std::int64_t log_every = 100;
  RefineConfig refine;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Averages over the steps since the previous record. Epipolar pixel
// distances are taken over ground-truth inlier matches only.
struct TrainRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double inlier_frac = 0.0;
  double mean_epi_px_refined = 0.0;
  double mean_epi_px_unrefined = 0.0;
  std::int64_t excluded = 0;
};

template <typename T>
PatchPair<T> make_patch_pair(const TwoViewSample& s);

template <typename T>
struct BatchLoss {
  double loss = 0.0;  // mean over non-excluded matches
  std::vector<T> grads;
  std::int64_t matches = 0;
  std::int64_t inliers = 0;   // d < t'
  std::int64_t excluded = 0;  // degenerate epipolar denominator
  std::int64_t gt_inliers = 0;
  double epi_px_refined_sum = 0.0;
  double epi_px_unrefined_sum = 0.0;
};

/// Refines every match, applies the clamped epipolar loss with a per-pair
/// normalized threshold, and backpropagates into the network weights only.
template <typename T>
BatchLoss<T> batch_loss(const RefinementNet<T>& net, std::span<const TwoViewSample* const> batch,
                        double t_px);

struct TrainState {
  RefinementNet<float> net;
  AdamState<float> adam;
  std::int64_t step = 0;
};

TrainState initial_state(const TrainConfig& cfg);

// Order in which samples are visited: seeded permutation per epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n);

struct TrainOutputs {
  std::string checkpoint_path;  // empty: no checkpoints written
  std::string log_path;         // empty: no CSV log
};

/// Runs steps state.step+1 .. cfg.steps. Deterministic for fixed inputs.
/// Throws NumericError on a non-finite loss after writing a snapshot next to
/// the checkpoint path.
std::vector<TrainRecord> train(const TrainConfig& cfg, std::span<const TwoViewSample> data,
                               TrainState& state, const TrainOutputs& outputs = {});

std::string train_log_header();
std::string train_log_row(const TrainRecord& r);

}  // namespace subpx
