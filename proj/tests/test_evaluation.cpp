#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "subpx/error.hpp"
#include "subpx/evaluation.hpp"
#include "subpx/io.hpp"

using namespace subpx;
namespace fs = std::filesystem;

namespace {

SceneConfig small_scene(std::uint64_t seed = 7) {
  SceneConfig c;
  c.seed = seed;
  c.matches_per_pair = 60;
  c.descriptor_dim = 8;
  return c;
}

EvalConfig quick_eval(int repeats = 1) {
  EvalConfig e;
  e.repeats = repeats;
  e.ransac.iterations = 200;
  return e;
}

// Recall step function integrated segment by segment over sorted errors.
double auc_oracle(std::vector<double> errs, double t) {
  std::sort(errs.begin(), errs.end());
  const double n = static_cast<double>(errs.size());
  double area = 0.0;
  for (std::size_t k = 0; k < errs.size(); ++k) {
    const double lo = std::min(errs[k], t);
    const double hi = k + 1 < errs.size() ? std::min(errs[k + 1], t) : t;
    area += (hi - lo) * static_cast<double>(k + 1) / n;
  }
  return area / t;
}

RefinedRecord record(std::int64_t id, double dx1, double dy1, double dx2, double dy2) {
  RefinedRecord r;
  r.sample_id = id;
  r.match = apply_offsets({100.0, 100.0}, {50.0, 60.0}, {dx1, dy1}, {dx2, dy2});
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("median of odd, even and empty lists") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(median({}) == 0.0);
  CHECK(median({5.0}) == 5.0);
}

TEST_CASE("summary statistics match independent oracles") {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 17;
    std::vector<PairMetrics> rows(static_cast<std::size_t>(n));
    std::vector<double> errs;
    double ratio = 0.0;
    for (auto& r : rows) {
      const int kind = static_cast<int>(g() % 5);
      r.pose_err_deg = kind == 0 ? kFailedPoseError : kind == 1 ? 0.0 : u(g);
      r.inlier_ratio = u(g) / 30.0;
      errs.push_back(r.pose_err_deg);
      ratio += r.inlier_ratio;
    }
    const auto s = summarize(rows);
    CHECK(s.auc5 == doctest::Approx(auc_oracle(errs, 5.0)).epsilon(1e-12));
    CHECK(s.auc10 == doctest::Approx(auc_oracle(errs, 10.0)).epsilon(1e-12));
    CHECK(s.auc20 == doctest::Approx(auc_oracle(errs, 20.0)).epsilon(1e-12));
    auto sorted = errs;
    std::sort(sorted.begin(), sorted.end());
    const double med = n % 2 ? sorted[static_cast<std::size_t>(n / 2)]
                             : 0.5 * (sorted[static_cast<std::size_t>(n / 2 - 1)] +
                                      sorted[static_cast<std::size_t>(n / 2)]);
    CHECK(s.median == med);
    double sum = 0.0;
    for (double e : errs) sum += e;
    CHECK(s.mean == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(s.mean_inlier_ratio == doctest::Approx(ratio / n).epsilon(1e-12));
  }
  CHECK(summarize({}).auc5 == 0.0);
}

TEST_CASE("group_pairs orders pairs and applies refined keypoints by sample id") {
  auto samples = generate_samples(small_scene(), 180);
  std::mt19937_64 g(1);
  auto shuffled = samples;
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  const auto pairs = group_pairs(shuffled);
  REQUIRE(pairs.size() == 3);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].pair_id == static_cast<std::int64_t>(i));
    CHECK(pairs[i].p1.size() == 60);
    CHECK(pairs[i].k1.fx == samples[i * 60].k1.fx);
    CHECK(pairs[i].gt_pose.rotation == samples[i * 60].gt_pose.rotation);
  }

  // Refined records for only some samples: the rest keep quantized keypoints.
  std::vector<RefinedRecord> refined;
  for (const auto& s : samples) {
    if (s.sample_id % 3 != 0) continue;
    RefinedRecord r;
    r.sample_id = s.sample_id;
    r.match = apply_offsets(s.quantized1, s.quantized2, {0.25, -0.5}, {1.0, 0.0});
    refined.push_back(r);
  }
  const auto mixed = group_pairs(samples, refined);
  for (const auto& s : samples) {
    const auto& p = mixed[static_cast<std::size_t>(s.pair_id)];
    const auto i = static_cast<std::size_t>(s.sample_id - s.pair_id * 60);
    const double shift = s.sample_id % 3 == 0 ? 1.0 : 0.0;
    CHECK(p.p1[i].x == s.quantized1.x + 0.25 * shift);
    CHECK(p.p1[i].y == s.quantized1.y - 0.5 * shift);
    CHECK(p.p2[i].x == s.quantized2.x + shift);
    CHECK(p.p2[i].y == s.quantized2.y);
  }
}

TEST_CASE("pairs with fewer than eight matches are failures at 180 degrees") {
  auto samples = generate_samples(small_scene(), 60);
  auto pair = group_pairs(samples).front();
  pair.p1.resize(7);
  pair.p2.resize(7);
  const auto m = evaluate_pair(pair, RansacConfig{}, 2);
  CHECK(m.failed);
  CHECK(m.pose_err_deg == kFailedPoseError);
  CHECK(m.repeat == 2);
  CHECK(m.n_inliers == 0);
  CHECK(m.inlier_ratio == 0.0);
}

TEST_CASE("repeat k runs ransac with seed plus k, rows in repeat-then-pair order") {
  const auto pairs = group_pairs(generate_samples(small_scene(), 180));
  auto cfg = quick_eval(3);
  cfg.ransac.seed = 5;
  const auto rows = evaluate(pairs, cfg);
  REQUIRE(rows.size() == 9);
  for (int k = 0; k < 3; ++k) {
    for (std::size_t p = 0; p < 3; ++p) {
      const auto& r = rows[static_cast<std::size_t>(k) * 3 + p];
      CHECK(r.repeat == k);
      CHECK(r.pair_id == static_cast<std::int64_t>(p));
      RansacConfig single = cfg.ransac;
      single.seed = 5 + static_cast<std::uint64_t>(k);
      const auto ref = evaluate_pair(pairs[p], single, 0);
      CHECK(r.pose_err_deg == ref.pose_err_deg);
      CHECK(r.n_inliers == ref.n_inliers);
    }
  }
  cfg.repeats = 0;
  CHECK_THROWS_AS(evaluate(pairs, cfg), ConfigError);
}

TEST_CASE("noiseless true keypoints give near-perfect pose accuracy") {
  auto scene = small_scene(21);
  scene.quantize = false;
  scene.outlier_fraction = 0.0;
  const auto samples = generate_samples(scene, 600);
  for (const auto& s : samples) {
    REQUIRE(s.quantized1.x == s.true1.x);
    REQUIRE(s.quantized2.y == s.true2.y);
  }
  const auto rep = evaluate_dataset(samples, {}, false, quick_eval());
  CHECK(rep.unrefined.size() == 10);
  CHECK(rep.unrefined_summary.auc5 > 0.99);
  CHECK(rep.unrefined_summary.median < 0.01);
  CHECK(rep.unrefined_summary.mean_inlier_ratio == 1.0);
}

TEST_CASE("all-outlier pairs never yield a usable pose") {
  // Every view-2 keypoint is moved to another point of the same pair, so no
  // correspondence is geometrically consistent.
  auto pairs = group_pairs(generate_samples(small_scene(33), 600));
  for (auto& p : pairs) std::rotate(p.p2.begin(), p.p2.begin() + 1, p.p2.end());
  const auto rows = evaluate(pairs, quick_eval());
  for (const auto& r : rows) CHECK(r.pose_err_deg > 20.0);
  const auto s = summarize(rows);
  CHECK(s.auc5 == 0.0);
  CHECK(s.auc10 == 0.0);
  CHECK(s.auc20 == 0.0);
}

TEST_CASE("metrics csv layout, refined columns and unrefined stability") {
  const auto samples = generate_samples(small_scene(), 120);
  std::vector<RefinedRecord> refined;
  for (const auto& s : samples) {
    RefinedRecord r;
    r.sample_id = s.sample_id;
    r.match = apply_offsets(s.quantized1, s.quantized2, {0.1, 0.0}, {0.0, -0.1});
    refined.push_back(r);
  }
  const auto cfg = quick_eval(2);
  const auto plain = evaluate_dataset(samples, {}, false, cfg);
  const auto both = evaluate_dataset(samples, refined, true, cfg);

  const auto a = lines(metrics_csv(plain));
  REQUIRE(a.size() == 1 + 4 + 1 + 2);
  CHECK(a[0] == "pair_id,pose_err_deg,inlier_ratio,n_inliers,repeat");
  CHECK(a[5].empty());
  CHECK(a[6] == "matches,auc5,auc10,auc20,mean,median,mean_inlier_ratio");
  CHECK(a[7].rfind("unrefined,", 0) == 0);
  CHECK(a[1].rfind("0,", 0) == 0);
  CHECK(a[4].substr(a[4].size() - 2) == ",1");

  const auto b = lines(metrics_csv(both));
  REQUIRE(b.size() == 1 + 4 + 1 + 3);
  CHECK(b[0] ==
        "pair_id,pose_err_deg,inlier_ratio,n_inliers,refined_pose_err_deg,refined_inlier_ratio,"
        "refined_n_inliers,repeat");
  CHECK(b[8].rfind("refined,", 0) == 0);

  // Unrefined numbers do not depend on whether refined matches were given.
  REQUIRE(both.unrefined.size() == plain.unrefined.size());
  for (std::size_t i = 0; i < plain.unrefined.size(); ++i) {
    CHECK(both.unrefined[i].pose_err_deg == plain.unrefined[i].pose_err_deg);
    CHECK(both.unrefined[i].n_inliers == plain.unrefined[i].n_inliers);
  }
  CHECK(b[7] == a[7]);
  CHECK(metrics_csv(evaluate_dataset(samples, refined, true, cfg)) == metrics_csv(both));
  CHECK(metrics_text(both).find("refined") != std::string::npos);
  CHECK_THROWS_AS(evaluate_dataset({}, {}, false, cfg), InvalidInput);
}

TEST_CASE("offset histograms") {
  SUBCASE("zero offsets fill the first length bin and no orientation bin") {
    std::vector<RefinedRecord> recs;
    for (int i = 0; i < 5; ++i) recs.push_back(record(i, 0, 0, 0, 0));
    const auto h = offset_histograms(recs);
    CHECK(h.vectors == 10);
    CHECK(h.length[0] == 10);
    CHECK(h.zero_length == 10);
    std::int64_t total = 0;
    for (auto c : h.orientation) total += c;
    CHECK(total == 0);
    CHECK(orientation_histogram_csv(h).find("10 zero-length offsets excluded") != std::string::npos);
  }
  SUBCASE("orientation bins follow atan2 in image coordinates") {
    const auto h = offset_histograms(std::vector{record(0, 1, 0, 0, -1), record(1, -1, 0, 0, 1)});
    CHECK(h.orientation[0] == 1);   // (1, 0)
    CHECK(h.orientation[18] == 1);  // (0, -1): 270 deg
    CHECK(h.orientation[12] == 1);  // (-1, 0): 180 deg
    CHECK(h.orientation[6] == 1);   // (0, 1): 90 deg
    CHECK(h.length[4] == 4);        // length 1 opens bin [1, 1.25)
  }
  SUBCASE("long offsets land in the last bin, skipped matches are ignored") {
    std::vector<RefinedRecord> recs{record(0, 3, 4, 5, 0), record(1, 0.24, 0, 0.25, 0)};
    RefinedRecord skip;
    skip.sample_id = 2;
    skip.match = skipped_match({10, 10}, {20, 20});
    recs.push_back(skip);
    const auto h = offset_histograms(recs);
    CHECK(h.vectors == 4);
    CHECK(h.length[19] == 2);
    CHECK(h.length[0] == 1);
    CHECK(h.length[1] == 1);
  }
  SUBCASE("counts are conserved over random offsets") {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::vector<RefinedRecord> recs;
    for (int i = 0; i < 500; ++i) recs.push_back(record(i, u(g), u(g), u(g), u(g)));
    recs[7].match = skipped_match({10, 10}, {20, 20});
    const auto h = offset_histograms(recs);
    std::int64_t len = 0, ang = 0;
    for (auto c : h.length) len += c;
    for (auto c : h.orientation) ang += c;
    CHECK(h.vectors == 998);
    CHECK(len == 998);
    CHECK(ang == 998 - h.zero_length);
    const auto rows = lines(length_histogram_csv(h));
    REQUIRE(rows.size() == 2 + 20);
    CHECK(rows[1] == "bin_lo_px,bin_hi_px,count");
    CHECK(rows[2].rfind("0,0.25,", 0) == 0);
    CHECK(rows[21].rfind("4.75,5,", 0) == 0);
    CHECK(lines(orientation_histogram_csv(h)).size() == 2 + 24);
  }
  CHECK_THROWS_AS(offset_histograms({}), InvalidInput);
}

TEST_CASE("refine_samples applies the network and passes border skips through") {
  auto scene = small_scene();
  auto samples = generate_samples(scene, 40);
  RefineConfig rc;
  rc.hidden_channels = {4, 4, 6, 6};
  rc.descriptor_dim = scene.descriptor_dim;
  const auto net = RefinementNet<float>::initialized(rc, 3);

  samples[4].patch2 = Tensor<float>();
  const auto out = refine_samples(net, samples);
  REQUIRE(out.size() == samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& m = out[i].match;
    CHECK(out[i].sample_id == samples[i].sample_id);
    CHECK(std::abs(m.delta1[0]) <= 5.0);
    CHECK(std::abs(m.delta1[1]) <= 5.0);
    CHECK(std::abs(m.delta2[0]) <= 5.0);
    CHECK(std::abs(m.delta2[1]) <= 5.0);
    CHECK(m.p1_refined.x == samples[i].quantized1.x + m.delta1[0]);
    CHECK(m.p2_refined.y == samples[i].quantized2.y + m.delta2[1]);
  }
  CHECK(out[4].match.skipped);
  CHECK(out[4].match.p1_refined.x == samples[4].quantized1.x);
  CHECK(out[4].match.delta1[0] == 0.0);

  // Zero descriptors give an all-zero score map and therefore zero offsets.
  auto zeroed = samples;
  for (auto& s : zeroed) {
    std::fill(s.d1.begin(), s.d1.end(), 0.0f);
    std::fill(s.d2.begin(), s.d2.end(), 0.0f);
  }
  for (const auto& r : refine_samples(net, zeroed)) {
    CHECK(r.match.delta1 == std::array<double, 2>{0.0, 0.0});
    CHECK(r.match.delta2 == std::array<double, 2>{0.0, 0.0});
  }

  auto wrong = samples;
  wrong[0].d1.resize(5);
  CHECK_THROWS_AS(refine_samples(net, wrong), ConfigError);

  RefineConfig sam;
  sam.variant = Variant::kSamOnly;
  const auto sam_out = refine_samples(RefinementNet<float>(sam), samples);
  CHECK(sam_out.size() == samples.size());
  CHECK_FALSE(sam_out[0].match.skipped);
}

TEST_CASE("refined match records round-trip through json lines") {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<RefinedRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(record(i * 3, u(g), u(g), u(g), u(g)));
  recs.push_back({999, skipped_match({12.5, 7.0}, {3.0, 4.0})});
  const fs::path path =
      fs::temp_directory_path() / ("subpx_eval_" + std::to_string(::getpid()) + ".jsonl");
  write_refined(path.string(), recs);
  const auto back = read_refined(path.string());
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].sample_id == recs[i].sample_id);
    CHECK(back[i].match.delta1 == recs[i].match.delta1);
    CHECK(back[i].match.delta2 == recs[i].match.delta2);
    CHECK(back[i].match.p1_refined.x == recs[i].match.p1_refined.x);
    CHECK(back[i].match.p2_refined.y == recs[i].match.p2_refined.y);
    CHECK(back[i].match.skipped == recs[i].match.skipped);
  }
  const auto first = file_checksum(path.string());
  write_refined(path.string(), back);
  CHECK(file_checksum(path.string()) == first);
  fs::remove(path);
  CHECK_THROWS_AS(refined_from_json_line("{\"sample_id\": 1}"), InvalidInput);
  CHECK_THROWS_AS(read_refined((fs::temp_directory_path() / "subpx_missing_dir/x.jsonl").string()),
                  IoError);
}

TEST_CASE("epipolar pixel distance matches an explicit Sampson oracle") {
  auto scene = small_scene(9);
  scene.outlier_fraction = 0.0;
  const auto samples = generate_samples(scene, 30);
  std::mt19937_64 g(12);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const auto& s : samples) {
    CHECK(epipolar_px(s, s.true1, s.true2) < 1e-8);
    const PixelPoint a{s.true1.x + u(g), s.true1.y + u(g)};
    const PixelPoint b{s.true2.x + u(g), s.true2.y + u(g)};
    const Vec3 x1((a.x - s.k1.cx) / s.k1.fx, (a.y - s.k1.cy) / s.k1.fy, 1.0);
    const Vec3 x2((b.x - s.k2.cx) / s.k2.fx, (b.y - s.k2.cy) / s.k2.fy, 1.0);
    const Vec3 l1 = s.gt_e.m * x1;
    const Vec3 l2 = s.gt_e.m.transpose() * x2;
    const double r = x2.dot(l1);
    const double e = r * r / (l1.x() * l1.x() + l1.y() * l1.y() + l2.x() * l2.x() + l2.y() * l2.y());
    const double f = (s.k1.fx + s.k1.fy + s.k2.fx + s.k2.fy) / 4.0;
    CHECK(epipolar_px(s, a, b) == doctest::Approx(std::sqrt(e) * f).epsilon(1e-10));
  }
}
