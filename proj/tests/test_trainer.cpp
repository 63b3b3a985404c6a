#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "doctest.h"
#include "subpx/checkpoint.hpp"
#include "subpx/config.hpp"
#include "subpx/error.hpp"
#include "subpx/trainer.hpp"
#include "grad_check.hpp"

using namespace subpx;
namespace fs = std::filesystem;

namespace {

RefineConfig tiny_refine(Variant v = Variant::kFull) {
  RefineConfig c;
  c.hidden_channels = {4, 4, 6, 6};
  c.descriptor_dim = 6;
  c.variant = v;
  return c;
}

SceneConfig tiny_scene(std::uint64_t seed = 42) {
  SceneConfig c;
  c.seed = seed;
  c.matches_per_pair = 20;
  c.descriptor_dim = 6;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.steps = 12;
  t.batch_size = 4;
  t.lr = 1e-3;
  t.log_every = 3;
  t.checkpoint_every = 6;
  t.refine = tiny_refine();
  return t;
}

std::vector<const TwoViewSample*> pointers(const std::vector<TwoViewSample>& v) {
  std::vector<const TwoViewSample*> p;
  for (const auto& s : v) p.push_back(&s);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("subpx_trainer_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

// Moves the view-2 keypoint `px` pixels off the epipolar line of view 1.
void push_off_line(TwoViewSample& s, double px) {
  const auto n1 = normalize_point(s.k1, s.quantized1);
  const Vec3 l = s.gt_e.m * n1.vec();
  const double ln = std::hypot(l.x(), l.y());
  s.quantized2.x += px * l.x() / ln;
  s.quantized2.y += px * l.y() / ln;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.t_px = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.steps = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = std::nan("");
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("all-outlier batch costs the mean threshold and has no gradient") {
  auto samples = generate_samples(tiny_scene(), 16);
  for (auto& s : samples) {
    std::fill(s.d1.begin(), s.d1.end(), 0.0f);
    std::fill(s.d2.begin(), s.d2.end(), 0.0f);
    push_off_line(s, 40.0);
  }
  auto net = RefinementNet<double>::initialized(tiny_refine(), 1);
  const auto ptrs = pointers(samples);
  const auto bl = batch_loss(net, std::span<const TwoViewSample* const>(ptrs), 1.5);
  double mean_t = 0.0;
  for (const auto& s : samples) mean_t += normalized_threshold(1.5, s.k1, s.k2);
  mean_t /= static_cast<double>(samples.size());
  CHECK(bl.matches == 16);
  CHECK(bl.inliers == 0);
  CHECK(bl.loss == doctest::Approx(mean_t).epsilon(1e-12));
  for (double g : bl.grads) CHECK(g == 0.0);
}

TEST_CASE("exact keypoints with a zero-output network give zero loss") {
  auto samples = generate_samples(tiny_scene(3), 40);
  std::vector<TwoViewSample> inliers;
  for (auto s : samples) {
    if (s.is_outlier) continue;
    s.quantized1 = s.true1;
    s.quantized2 = s.true2;
    std::fill(s.d1.begin(), s.d1.end(), 0.0f);
    std::fill(s.d2.begin(), s.d2.end(), 0.0f);
    inliers.push_back(s);
  }
  auto net = RefinementNet<double>::initialized(tiny_refine(), 2);
  const auto ptrs = pointers(inliers);
  const auto bl = batch_loss(net, std::span<const TwoViewSample* const>(ptrs), 1.5);
  CHECK(bl.matches == static_cast<std::int64_t>(inliers.size()));
  CHECK(bl.loss < 1e-20);
  CHECK(bl.epi_px_refined_sum < 1e-6);
}

TEST_CASE("batch loss gradients agree with finite differences") {
  for (Variant v : {Variant::kFull, Variant::kCnnDg, Variant::kCnnOnly}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto samples = generate_samples(tiny_scene(100 + seed), 8);
      const auto ptrs = pointers(samples);
      auto net = RefinementNet<double>::initialized(tiny_refine(v), seed);
      std::mt19937_64 g(seed);
      testing::randomize_biases(net, g);
      std::vector<std::size_t> idx;
      for (std::size_t i = seed; i < net.parameters().size(); i += 11) idx.push_back(i);
      const auto r = testing::check_loss_gradient(
          net, std::span<const TwoViewSample* const>(ptrs), 1.5, 3e-5, idx);
      CAPTURE(variant_name(v));
      CAPTURE(seed);
      CHECK(r.checked >= idx.size() * 9 / 10);
      CHECK(r.rel < 1e-4);
      CHECK(r.abs < 1e-6);
    }
  }
}

TEST_CASE("border-skipped matches add clamped loss but no gradient") {
  auto samples = generate_samples(tiny_scene(5), 6);
  auto net = RefinementNet<double>::initialized(tiny_refine(), 5);
  auto with = samples;
  with[2].patch1 = Tensor<float>();
  const auto keep = pointers(samples);
  const auto skip = pointers(with);
  const auto a = batch_loss(net, std::span<const TwoViewSample* const>(keep), 1.5);
  const auto b = batch_loss(net, std::span<const TwoViewSample* const>(skip), 1.5);
  CHECK(b.matches == 6);
  // Gradient of the remaining matches is unchanged (same 1/n scaling).
  std::vector<const TwoViewSample*> others;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (i != 2) others.push_back(&samples[i]);
  const auto c = batch_loss(net, std::span<const TwoViewSample* const>(others), 1.5);
  for (std::size_t i = 0; i < b.grads.size(); ++i)
    CHECK(b.grads[i] == doctest::Approx(c.grads[i] * 5.0 / 6.0).epsilon(1e-10));
  CHECK(a.loss != b.loss);
}

TEST_CASE("degenerate epipolar geometry excludes the sample and counts it") {
  auto samples = generate_samples(tiny_scene(6), 4);
  samples[1].gt_e.m.setZero();
  auto net = RefinementNet<double>::initialized(tiny_refine(), 6);
  const auto ptrs = pointers(samples);
  const auto bl = batch_loss(net, std::span<const TwoViewSample* const>(ptrs), 1.5);
  CHECK(bl.excluded == 1);
  CHECK(bl.matches == 3);
  CHECK(std::isfinite(bl.loss));
  CHECK_THROWS_AS(batch_loss(net, std::span<const TwoViewSample* const>(), 1.5), InvalidInput);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(1, 0, 50);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  CHECK(epoch_order(1, 0, 50) == a);
  CHECK(epoch_order(1, 1, 50) != a);
  CHECK(epoch_order(2, 0, 50) != a);
}

TEST_CASE("zero learning rate leaves the weights bit-identical") {
  auto data = generate_samples(tiny_scene(), 40);
  auto cfg = tiny_train();
  cfg.lr = 0.0;
  auto state = initial_state(cfg);
  const std::vector<float> before(state.net.parameters().begin(), state.net.parameters().end());
  const auto records = train(cfg, data, state);
  CHECK(state.step == cfg.steps);
  CHECK(records.size() == 4);
  CHECK(std::equal(before.begin(), before.end(), state.net.parameters().begin()));
}

TEST_CASE("training logs at the cadence and writes checkpoints") {
  TempDir dir;
  auto data = generate_samples(tiny_scene(), 40);
  auto cfg = tiny_train();
  cfg.steps = 10;
  auto state = initial_state(cfg);
  const auto records =
      train(cfg, data, state, {dir.file("ck.json"), dir.file("log.csv")});
  REQUIRE(records.size() == 4);
  CHECK(records[0].step == 3);
  CHECK(records[3].step == 10);
  for (const auto& r : records) {
    CHECK(r.loss >= 0.0);
    CHECK(r.inlier_frac >= 0.0);
    CHECK(r.inlier_frac <= 1.0);
  }
  std::istringstream log(slurp(dir.file("log.csv")));
  std::string line;
  std::getline(log, line);
  CHECK(line == train_log_header());
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 4);
  CHECK(fs::exists(dir.file("ck.json")));
  CHECK(fs::exists(checkpoint_buffer_path(dir.file("ck.json"))));
  CHECK(checkpoint_load(dir.file("ck.json")).step == 10);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run bit-exactly") {
  TempDir dir;
  auto data = generate_samples(tiny_scene(), 30);  // not a multiple of the batch
  auto cfg = tiny_train();
  cfg.steps = 18;

  auto full = initial_state(cfg);
  train(cfg, data, full, {dir.file("full.json"), dir.file("full.csv")});

  auto part_cfg = cfg;
  part_cfg.steps = 9;
  auto part = initial_state(cfg);
  train(part_cfg, data, part, {dir.file("part.json"), dir.file("part.csv")});
  auto resumed = checkpoint_load(dir.file("part.json"), &cfg.refine);
  CHECK(resumed.step == 9);
  train(cfg, data, resumed, {dir.file("part.json"), dir.file("part.csv")});

  CHECK(resumed.step == full.step);
  CHECK(std::equal(full.net.parameters().begin(), full.net.parameters().end(),
                   resumed.net.parameters().begin()));
  CHECK(full.adam.m == resumed.adam.m);
  CHECK(full.adam.v == resumed.adam.v);
  CHECK(full.adam.step == resumed.adam.step);
  CHECK(slurp(dir.file("full.csv")) == slurp(dir.file("part.csv")));
  CHECK(slurp(checkpoint_buffer_path(dir.file("full.json"))) ==
        slurp(checkpoint_buffer_path(dir.file("part.json"))));
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  TempDir dir;
  auto data = generate_samples(tiny_scene(), 24);
  auto cfg = tiny_train();
  cfg.steps = 5;
  auto state = initial_state(cfg);
  train(cfg, data, state);
  checkpoint_save(state, dir.file("a.json"));
  const auto back = checkpoint_load(dir.file("a.json"), &cfg.refine);
  checkpoint_save(back, dir.file("b.json"));
  CHECK(slurp(checkpoint_buffer_path(dir.file("a.json"))) ==
        slurp(checkpoint_buffer_path(dir.file("b.json"))));
  // Manifests differ only in the buffer file name they point at.
  auto ma = nlohmann::json::parse(slurp(dir.file("a.json")));
  auto mb = nlohmann::json::parse(slurp(dir.file("b.json")));
  ma["buffer"].erase("file");
  mb["buffer"].erase("file");
  CHECK(ma == mb);
  CHECK(back.adam.lr == state.adam.lr);
  CHECK(back.adam.step == state.adam.step);
  CHECK(std::equal(back.net.parameters().begin(), back.net.parameters().end(),
                   state.net.parameters().begin()));
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
  TempDir dir;
  auto cfg = tiny_train();
  auto state = initial_state(cfg);
  const auto path = dir.file("c.json");
  checkpoint_save(state, path);
  const auto bin = checkpoint_buffer_path(path);

  auto other = cfg.refine;
  other.descriptor_dim = 7;
  CHECK_THROWS_AS(checkpoint_load(path, &other), ConfigError);

  std::string bytes = slurp(bin);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(bin, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(checkpoint_load(path), CorruptCheckpoint);

  std::ofstream(bin, std::ios::binary | std::ios::trunc) << bytes.substr(0, 100);
  CHECK_THROWS_AS(checkpoint_load(path), CorruptCheckpoint);

  std::ofstream(path, std::ios::trunc) << "{\"format\": \"something-else\"}";
  CHECK_THROWS_AS(checkpoint_load(path), CorruptCheckpoint);
  CHECK_THROWS(checkpoint_load(dir.file("missing.json")));
}

TEST_CASE("a non-finite loss aborts with a snapshot") {
  TempDir dir;
  auto data = generate_samples(tiny_scene(), 16);
  auto cfg = tiny_train();
  auto state = initial_state(cfg);
  // The last layer has no ReLU, so a NaN bias reaches the offsets.
  const auto last = state.net.layout().layers.back().bias_offset;
  state.net.mutable_parameters()[last] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train(cfg, data, state, {dir.file("n.json"), ""}), NumericError);
  CHECK(fs::exists(dir.file("n.json.nonfinite")));
  CHECK(state.step == 0);
}

TEST_CASE("train input checks") {
  auto cfg = tiny_train();
  auto state = initial_state(cfg);
  CHECK_THROWS_AS(train(cfg, std::span<const TwoViewSample>(), state), InvalidInput);
  auto wrong = tiny_scene();
  wrong.descriptor_dim = 8;
  auto data = generate_samples(wrong, 8);
  CHECK_THROWS_AS(train(cfg, data, state), ConfigError);
  auto mismatch = cfg;
  mismatch.refine.variant = Variant::kCnnDg;
  CHECK_THROWS_AS(train(mismatch, data, state), ConfigError);

  auto sam = cfg;
  sam.refine.variant = Variant::kSamOnly;
  auto sam_state = initial_state(sam);
  CHECK(sam_state.net.parameters().empty());
  CHECK(train(sam, data, sam_state).empty());
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  SceneConfig s;
  s.seed = 7;
  s.forced_translation = Vec3(1, 0, 0);
  SceneConfig s2;
  from_json(to_json(s), s2);
  CHECK(s2 == s);

  TrainConfig t = tiny_train();
  t.refine.variant = Variant::kCnnOnly;
  t.refine.use_score_channel = true;
  TrainConfig t2;
  from_json(to_json(t), t2);
  CHECK(t2 == t);

  EvalConfig e;
  e.repeats = 5;
  e.ransac.iterations = 77;
  e.ransac.local_optimization = false;
  EvalConfig e2;
  from_json(to_json(e), e2);
  CHECK(e2.repeats == 5);
  CHECK(e2.ransac == e.ransac);

  TrainConfig partial;
  from_json(nlohmann::json::parse(R"({"steps": 3, "refine": {"variant": "cnn-dg"}})"), partial);
  CHECK(partial.steps == 3);
  CHECK(partial.batch_size == 8);
  CHECK(partial.refine.variant == Variant::kCnnDg);

  CHECK_THROWS_AS(from_json(nlohmann::json::parse(R"({"stpes": 3})"), partial), ConfigError);
  CHECK_THROWS_AS(from_json(nlohmann::json::parse(R"({"steps": "many"})"), partial), ConfigError);
  CHECK_THROWS_AS(from_json(nlohmann::json::parse(R"({"refine": {"variant": "mf"}})"), partial),
                  ConfigError);
}
