#include "subpx/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "subpx/error.hpp"
#include "subpx/trainer.hpp"

namespace subpx {

void EvalConfig::validate() const {
  ransac.validate();
  if (repeats < 1) throw ConfigError("eval config: repeats must be >= 1");
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

MetricsSummary summarize(std::span<const PairMetrics> rows) {
  MetricsSummary s;
  if (rows.empty()) return s;
  std::vector<double> errs;
  errs.reserve(rows.size());
  double ratio = 0.0;
  for (const PairMetrics& r : rows) {
    errs.push_back(r.pose_err_deg);
    ratio += r.inlier_ratio;
  }
  s.auc5 = auc(errs, 5.0);
  s.auc10 = auc(errs, 10.0);
  s.auc20 = auc(errs, 20.0);
  double sum = 0.0;
  for (double e : errs) sum += e;
  s.mean = sum / static_cast<double>(errs.size());
  s.median = median(errs);
  s.mean_inlier_ratio = ratio / static_cast<double>(rows.size());
  return s;
}

std::vector<PairMatches> group_pairs(std::span<const TwoViewSample> samples,
                                     std::span<const RefinedRecord> refined) {
  std::unordered_map<std::int64_t, const RefinedMatch*> by_id;
  by_id.reserve(refined.size());
  for (const RefinedRecord& r : refined) by_id[r.sample_id] = &r.match;

  std::map<std::int64_t, PairMatches> pairs;
  for (const TwoViewSample& s : samples) {
    auto [it, fresh] = pairs.try_emplace(s.pair_id);
    PairMatches& p = it->second;
    if (fresh) {
      p.pair_id = s.pair_id;
      p.k1 = s.k1;
      p.k2 = s.k2;
      p.gt_pose = s.gt_pose;
    }
    auto r = by_id.find(s.sample_id);
    if (r != by_id.end()) {
      p.p1.push_back(r->second->p1_refined);
      p.p2.push_back(r->second->p2_refined);
    } else {
      p.p1.push_back(s.quantized1);
      p.p2.push_back(s.quantized2);
    }
  }
  std::vector<PairMatches> out;
  out.reserve(pairs.size());
  for (auto& [id, p] : pairs) out.push_back(std::move(p));
  return out;
}

PairMetrics evaluate_pair(const PairMatches& pair, const RansacConfig& cfg, int repeat) {
  PairMetrics m;
  m.pair_id = pair.pair_id;
  m.repeat = repeat;
  if (pair.p1.size() < 8) return m;
  std::vector<Correspondence> corrs;
  corrs.reserve(pair.p1.size());
  for (std::size_t i = 0; i < pair.p1.size(); ++i) {
    corrs.push_back(Correspondence::from_pixels(pair.p1[i], pair.p2[i], pair.k1, pair.k2));
  }
  RansacConfig run = cfg;
  run.seed = cfg.seed + static_cast<std::uint64_t>(repeat);
  EstimationResult r;
  try {
    r = ransac(corrs, pair.k1, pair.k2, run);
  } catch (const EstimationError&) {
    return m;
  } catch (const DegenerateGeometry&) {
    return m;
  } catch (const AmbiguousCheirality&) {
    return m;
  }
  m.inlier_ratio = r.inlier_ratio;
  m.n_inliers = r.n_inliers;
  if (!r.success) return m;
  m.failed = false;
  m.pose_err_deg = pose_error(r.pose, pair.gt_pose);
  return m;
}

std::vector<PairMetrics> evaluate(std::span<const PairMatches> pairs, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<PairMetrics> rows;
  rows.reserve(pairs.size() * static_cast<std::size_t>(cfg.repeats));
  for (int k = 0; k < cfg.repeats; ++k) {
    for (const PairMatches& p : pairs) rows.push_back(evaluate_pair(p, cfg.ransac, k));
  }
  return rows;
}

EvalReport evaluate_dataset(std::span<const TwoViewSample> samples,
                            std::span<const RefinedRecord> refined, bool has_refined,
                            const EvalConfig& cfg) {
  if (samples.empty()) throw InvalidInput("eval: empty dataset");
  EvalReport rep;
  rep.unrefined = evaluate(group_pairs(samples), cfg);
  rep.unrefined_summary = summarize(rep.unrefined);
  if (has_refined) {
    rep.refined = evaluate(group_pairs(samples, refined), cfg);
    rep.refined_summary = summarize(rep.refined);
  }
  return rep;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string summary_row(const std::string& name, const MetricsSummary& s) {
  return name + "," + num(s.auc5) + "," + num(s.auc10) + "," + num(s.auc20) + "," + num(s.mean) +
         "," + num(s.median) + "," + num(s.mean_inlier_ratio) + "\n";
}

}  // namespace

std::string metrics_csv(const EvalReport& report) {
  const bool both = report.refined_summary.has_value();
  std::string out = "pair_id,pose_err_deg,inlier_ratio,n_inliers";
  if (both) out += ",refined_pose_err_deg,refined_inlier_ratio,refined_n_inliers";
  out += ",repeat\n";
  for (std::size_t i = 0; i < report.unrefined.size(); ++i) {
    const PairMetrics& u = report.unrefined[i];
    out += std::to_string(u.pair_id) + "," + num(u.pose_err_deg) + "," + num(u.inlier_ratio) +
           "," + std::to_string(u.n_inliers);
    if (both) {
      const PairMetrics& r = report.refined[i];
      out += "," + num(r.pose_err_deg) + "," + num(r.inlier_ratio) + "," +
             std::to_string(r.n_inliers);
    }
    out += "," + std::to_string(u.repeat) + "\n";
  }
  out += "\nmatches,auc5,auc10,auc20,mean,median,mean_inlier_ratio\n";
  out += summary_row("unrefined", report.unrefined_summary);
  if (both) out += summary_row("refined", *report.refined_summary);
  return out;
}

std::string metrics_text(const EvalReport& report) {
  auto block = [](const char* name, const MetricsSummary& s) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << name << ": AUC@5 " << 100.0 * s.auc5 << "  AUC@10 " << 100.0 * s.auc10 << "  AUC@20 "
       << 100.0 * s.auc20 << "  mean " << s.mean << " deg  median " << s.median
       << " deg  inlier ratio " << s.mean_inlier_ratio << "\n";
    return os.str();
  };
  std::string out = block("unrefined", report.unrefined_summary);
  if (report.refined_summary) out += block("refined  ", *report.refined_summary);
  return out;
}

std::vector<RefinedRecord> refine_samples(const RefinementNet<float>& net,
                                          std::span<const TwoViewSample> samples) {
  const RefineConfig& cfg = net.config();
  std::vector<RefinedRecord> out;
  out.reserve(samples.size());
  for (const TwoViewSample& s : samples) {
    if (cfg.has_network() &&
        (s.d1.size() != static_cast<std::size_t>(cfg.descriptor_dim) || s.d2.size() != s.d1.size())) {
      throw ConfigError("sample " + std::to_string(s.sample_id) + " has descriptor dimension " +
                        std::to_string(s.d1.size()) + " but the network expects " +
                        std::to_string(cfg.descriptor_dim));
    }
    RefinedRecord r;
    r.sample_id = s.sample_id;
    if (s.patch1.empty() || s.patch2.empty()) {
      r.match = skipped_match(s.quantized1, s.quantized2);
    } else {
      const ForwardResult<float> f = net.forward(make_patch_pair<float>(s));
      r.match = apply_offsets(s.quantized1, s.quantized2, {f.delta1[0], f.delta1[1]},
                              {f.delta2[0], f.delta2[1]});
    }
    out.push_back(r);
  }
  return out;
}

double epipolar_px(const TwoViewSample& s, const PixelPoint& p1, const PixelPoint& p2) {
  return epipolar_distance(normalize_point(s.k1, p1), normalize_point(s.k2, p2), s.gt_e) *
         mean_focal(s.k1, s.k2);
}

OffsetHistograms offset_histograms(std::span<const RefinedRecord> records) {
  if (records.empty()) throw InvalidInput("offset-hist: no refined matches");
  OffsetHistograms h;
  const auto nlen = static_cast<int>(h.length.size());
  const auto nang = static_cast<int>(h.orientation.size());
  for (const RefinedRecord& r : records) {
    if (r.match.skipped) continue;
    for (const auto& d : {r.match.delta1, r.match.delta2}) {
      ++h.vectors;
      const double len = std::hypot(d[0], d[1]);
      h.length[static_cast<std::size_t>(
          std::min(static_cast<int>(len / OffsetHistograms::kLengthBin), nlen - 1))]++;
      if (d[0] == 0.0 && d[1] == 0.0) {
        ++h.zero_length;
        continue;
      }
      double deg = std::atan2(d[1], d[0]) * 180.0 / std::numbers::pi;
      if (deg < 0.0) deg += 360.0;
      const int bin = std::clamp(static_cast<int>(deg / OffsetHistograms::kAngleBin), 0, nang - 1);
      h.orientation[static_cast<std::size_t>(bin)]++;
    }
  }
  return h;
}

std::string length_histogram_csv(const OffsetHistograms& h) {
  std::string out =
      "# offset length in px over both views of non-skipped matches; lengths >= 5 fall in the "
      "last bin\nbin_lo_px,bin_hi_px,count\n";
  for (std::size_t i = 0; i < h.length.size(); ++i) {
    out += num(static_cast<double>(i) * OffsetHistograms::kLengthBin) + "," +
           num(static_cast<double>(i + 1) * OffsetHistograms::kLengthBin) + "," +
           std::to_string(h.length[i]) + "\n";
  }
  return out;
}

std::string orientation_histogram_csv(const OffsetHistograms& h) {
  std::string out =
      "# offset orientation atan2(dy, dx) in degrees, image y axis pointing down; " +
      std::to_string(h.zero_length) +
      " zero-length offsets excluded (undefined angle)\nbin_lo_deg,bin_hi_deg,count\n";
  for (std::size_t i = 0; i < h.orientation.size(); ++i) {
    out += num(static_cast<double>(i) * OffsetHistograms::kAngleBin) + "," +
           num(static_cast<double>(i + 1) * OffsetHistograms::kAngleBin) + "," +
           std::to_string(h.orientation[i]) + "\n";
  }
  return out;
}

}  // namespace subpx
