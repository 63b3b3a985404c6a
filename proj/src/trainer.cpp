#include "subpx/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "subpx/checkpoint.hpp"
#include "subpx/error.hpp"
#include "subpx/io.hpp"
#include "subpx/rng.hpp"

namespace subpx {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train config: steps must be >= 0");
  if (batch_size <= 0) throw ConfigError("train config: batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be >= 0");
  if (!(t_px > 0.0)) throw ConfigError("train config: t_px must be positive");
  if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
  if (log_every <= 0) throw ConfigError("train config: log_every must be positive");
  refine.validate();
}

template <typename T>
PatchPair<T> make_patch_pair(const TwoViewSample& s) {
  PatchPair<T> p;
  p.image1 = s.patch1.cast<T>();
  p.image2 = s.patch2.cast<T>();
  p.score1 = s.score1.cast<T>();
  p.score2 = s.score2.cast<T>();
  p.d1.assign(s.d1.begin(), s.d1.end());
  p.d2.assign(s.d2.begin(), s.d2.end());
  p.center1 = s.quantized1;
  p.center2 = s.quantized2;
  return p;
}

template <typename T>
BatchLoss<T> batch_loss(const RefinementNet<T>& net, std::span<const TwoViewSample* const> batch,
                        double t_px) {
  if (batch.empty()) throw InvalidInput("batch_loss: empty batch");
  struct Item {
    ForwardResult<T> fwd;
    PixelLossGrad lg;
    bool excluded = false;
    bool skipped = false;
  };
  BatchLoss<T> out;
  out.grads.assign(net.parameters().size(), T(0));
  std::vector<Item> items(batch.size());
  double loss_sum = 0.0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TwoViewSample& s = *batch[i];
    Item& it = items[i];
    std::array<double, 2> d1{0.0, 0.0};
    std::array<double, 2> d2{0.0, 0.0};
    it.skipped = s.patch1.empty() || s.patch2.empty();
    if (!it.skipped) {
      it.fwd = net.forward(make_patch_pair<T>(s));
      d1 = {static_cast<double>(it.fwd.delta1[0]), static_cast<double>(it.fwd.delta1[1])};
      d2 = {static_cast<double>(it.fwd.delta2[0]), static_cast<double>(it.fwd.delta2[1])};
    }
    const PixelPoint p1{s.quantized1.x + d1[0], s.quantized1.y + d1[1]};
    const PixelPoint p2{s.quantized2.x + d2[0], s.quantized2.y + d2[1]};
    const double t_prime = normalized_threshold(t_px, s.k1, s.k2);
    try {
      it.lg = epipolar_loss_pixel_grad(p1, p2, s.k1, s.k2, s.gt_e, t_prime);
    } catch (const DegenerateGeometry&) {
      it.excluded = true;
      ++out.excluded;
      continue;
    }
    ++out.matches;
    loss_sum += it.lg.loss;
    if (it.lg.inlier) ++out.inliers;
    if (!s.is_outlier) {
      const double f = mean_focal(s.k1, s.k2);
      ++out.gt_inliers;
      out.epi_px_refined_sum += it.lg.distance * f;
      try {
        out.epi_px_unrefined_sum +=
            epipolar_distance(normalize_point(s.k1, s.quantized1),
                              normalize_point(s.k2, s.quantized2), s.gt_e) * f;
      } catch (const DegenerateGeometry&) {
      }
    }
  }
  if (out.matches == 0) return out;
  out.loss = loss_sum / static_cast<double>(out.matches);

  const double scale = 1.0 / static_cast<double>(out.matches);
  for (const Item& it : items) {
    if (it.excluded || it.skipped || !it.lg.inlier) continue;
    net.backward_view(it.fwd, 0,
                      {static_cast<T>(it.lg.d_p1(0) * scale), static_cast<T>(it.lg.d_p1(1) * scale)},
                      out.grads);
    net.backward_view(it.fwd, 1,
                      {static_cast<T>(it.lg.d_p2(0) * scale), static_cast<T>(it.lg.d_p2(1) * scale)},
                      out.grads);
  }
  return out;
}

template PatchPair<float> make_patch_pair<float>(const TwoViewSample&);
template PatchPair<double> make_patch_pair<double>(const TwoViewSample&);
template BatchLoss<float> batch_loss(const RefinementNet<float>&,
                                     std::span<const TwoViewSample* const>, double);
template BatchLoss<double> batch_loss(const RefinementNet<double>&,
                                      std::span<const TwoViewSample* const>, double);

TrainState initial_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st{RefinementNet<float>::initialized(cfg.refine, cfg.seed), AdamState<float>{}, 0};
  st.adam = AdamState<float>(st.net.parameters().size(), cfg.lr);
  return st;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, Stream::kShuffle, epoch);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::string train_log_header() {
  return "step,loss,inlier_frac,mean_epi_px_refined,mean_epi_px_unrefined";
}

std::string train_log_row(const TrainRecord& r) {
  return std::to_string(r.step) + "," + format_double(r.loss) + "," +
         format_double(r.inlier_frac) + "," + format_double(r.mean_epi_px_refined) + "," +
         format_double(r.mean_epi_px_unrefined);
}

std::vector<TrainRecord> train(const TrainConfig& cfg, std::span<const TwoViewSample> data,
                               TrainState& state, const TrainOutputs& outputs) {
  cfg.validate();
  if (state.net.config() != cfg.refine) {
    throw ConfigError("train: state refine config differs from the train config");
  }
  std::vector<TrainRecord> records;
  if (!cfg.refine.has_network()) return records;
  if (data.empty()) throw InvalidInput("train: empty dataset");
  const std::size_t want = static_cast<std::size_t>(cfg.refine.descriptor_dim);
  const int p = cfg.refine.input_patch;
  for (const TwoViewSample& s : data) {
    if (s.d1.size() != want || s.d2.size() != want) {
      throw ConfigError("train: sample " + std::to_string(s.sample_id) +
                        " has descriptor dimension " + std::to_string(s.d1.size()) +
                        " but the network expects " + std::to_string(want));
    }
    for (const Tensor<float>* t : {&s.patch1, &s.patch2}) {
      if (!t->empty() && (t->channels != 1 || t->height != p || t->width != p)) {
        throw InvalidInput("train: sample " + std::to_string(s.sample_id) + " has a malformed patch");
      }
    }
  }
  state.adam.lr = cfg.lr;

  std::ofstream log;
  if (!outputs.log_path.empty()) {
    const bool append = state.step > 0 && std::filesystem::exists(outputs.log_path);
    log.open(outputs.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open training log '" + outputs.log_path + "'");
    if (!append) log << train_log_header() << '\n';
  }

  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  std::vector<const TwoViewSample*> ptrs(batch);

  TrainRecord acc;
  std::int64_t acc_steps = 0;
  std::int64_t acc_matches = 0;
  std::int64_t acc_gt = 0;

  for (std::int64_t step = state.step + 1; step <= cfg.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::uint64_t pos = static_cast<std::uint64_t>(step - 1) * batch + b;
      const std::uint64_t epoch = pos / n;
      if (epoch != cached_epoch) {
        order = epoch_order(cfg.seed, epoch, n);
        cached_epoch = epoch;
      }
      ptrs[b] = &data[order[pos % n]];
    }
    // The data passed validation above, so a rejected score map or keypoint
    // inside the forward pass means the weights have gone non-finite.
    BatchLoss<float> bl;
    bool finite = true;
    try {
      bl = batch_loss(state.net, std::span<const TwoViewSample* const>(ptrs), cfg.t_px);
    } catch (const InvalidInput&) {
      finite = false;
    } catch (const NumericError&) {
      finite = false;
    }
    finite = finite && std::isfinite(bl.loss);
    for (float g : bl.grads) finite = finite && std::isfinite(g);
    if (!finite) {
      std::string where;
      if (!outputs.checkpoint_path.empty()) {
        where = outputs.checkpoint_path + ".nonfinite";
        checkpoint_save(state, where);
      }
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         (where.empty() ? std::string() : "; snapshot written to " + where));
    }
    adam_step(state.net.mutable_parameters(), std::span<const float>(bl.grads), state.adam);
    state.step = step;

    acc.loss += bl.loss;
    acc.excluded += bl.excluded;
    acc.inlier_frac += static_cast<double>(bl.inliers);
    acc.mean_epi_px_refined += bl.epi_px_refined_sum;
    acc.mean_epi_px_unrefined += bl.epi_px_unrefined_sum;
    acc_matches += bl.matches;
    acc_gt += bl.gt_inliers;
    ++acc_steps;

    if (step % cfg.log_every == 0 || step == cfg.steps) {
      TrainRecord r;
      r.step = step;
      r.loss = acc.loss / static_cast<double>(acc_steps);
      r.inlier_frac = acc_matches > 0 ? acc.inlier_frac / static_cast<double>(acc_matches) : 0.0;
      r.mean_epi_px_refined = acc_gt > 0 ? acc.mean_epi_px_refined / static_cast<double>(acc_gt) : 0.0;
      r.mean_epi_px_unrefined =
          acc_gt > 0 ? acc.mean_epi_px_unrefined / static_cast<double>(acc_gt) : 0.0;
      r.excluded = acc.excluded;
      records.push_back(r);
      if (log.is_open()) log << train_log_row(r) << '\n' << std::flush;
      acc = TrainRecord{};
      acc_steps = acc_matches = acc_gt = 0;
    }
    if (!outputs.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0) {
      checkpoint_save(state, outputs.checkpoint_path);
    }
  }
  if (!outputs.checkpoint_path.empty()) checkpoint_save(state, outputs.checkpoint_path);
  return records;
}

}  // namespace subpx
