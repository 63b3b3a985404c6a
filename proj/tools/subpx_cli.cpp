// subpx: synthetic data, training, refinement, evaluation and offset
// statistics for descriptor-guided sub-pixel keypoint refinement.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "subpx/checkpoint.hpp"
#include "subpx/config.hpp"
#include "subpx/error.hpp"
#include "subpx/evaluation.hpp"
#include "subpx/io.hpp"
#include "subpx/trainer.hpp"

namespace {

using nlohmann::json;
using namespace subpx;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// A run config file holds any of the sections "scene", "train" and "eval".
json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "scene" && it.key() != "train" && it.key() != "eval") {
      throw ConfigError("unknown config section '" + it.key() + "'");
    }
  }
  return j;
}

template <typename Cfg>
Cfg section(const json& j, const char* key) {
  Cfg c;
  if (auto it = j.find(key); it != j.end()) from_json(*it, c);
  return c;
}

void echo(const char* key, const json& section) {
  std::cout << "config " << json{{key, section}}.dump() << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

template <typename T>
void override(CLI::Option* opt, const T& value, T& field) {
  if (opt->count() > 0) field = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Descriptor-guided sub-pixel keypoint refinement toolkit"};
  app.require_subcommand(1);
  std::string config_path;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic correspondence dataset");
  gen->add_option("--config", config_path, "JSON run config");
  std::int64_t gen_n = 0;
  std::string gen_out;
  SceneConfig gflags;
  gen->add_option("--n", gen_n, "number of correspondences")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  auto* g_seed = gen->add_option("--seed", gflags.seed, "scene seed");
  auto* g_mpp = gen->add_option("--matches-per-pair", gflags.matches_per_pair);
  auto* g_outl = gen->add_option("--outlier-fraction", gflags.outlier_fraction);
  auto* g_dim = gen->add_option("--descriptor-dim", gflags.descriptor_dim);
  auto* g_dnoise = gen->add_option("--descriptor-noise", gflags.descriptor_noise);
  auto* g_jit = gen->add_option("--keypoint-jitter", gflags.keypoint_jitter);
  auto* g_pnoise = gen->add_option("--photometric-noise", gflags.photometric_noise);
  bool g_exact = false;
  auto* g_exact_opt =
      gen->add_flag("--exact-keypoints", g_exact, "detections start at the true projections");

  // train
  auto* tr = app.add_subcommand("train", "train the refinement network");
  tr->add_option("--config", config_path, "JSON run config");
  std::string tr_data, tr_out, tr_log;
  TrainConfig tflags;
  std::string tr_variant = "full";
  bool tr_resume = false;
  tr->add_option("--data", tr_data, "training dataset (JSONL)")->required();
  tr->add_option("--out", tr_out, "checkpoint manifest path")->required();
  tr->add_option("--log", tr_log, "training log CSV (default <out>.log.csv)");
  auto* t_steps = tr->add_option("--steps", tflags.steps);
  auto* t_batch = tr->add_option("--batch-size", tflags.batch_size);
  auto* t_lr = tr->add_option("--lr", tflags.lr);
  auto* t_tpx = tr->add_option("--t-px", tflags.t_px, "loss threshold in pixels");
  auto* t_seed = tr->add_option("--seed", tflags.seed);
  auto* t_ckpt = tr->add_option("--checkpoint-every", tflags.checkpoint_every);
  auto* t_logev = tr->add_option("--log-every", tflags.log_every);
  auto* t_var = tr->add_option("--variant", tr_variant, "full, cnn-dg, cnn-only or sam-only");
  auto* t_dim = tr->add_option("--descriptor-dim", tflags.refine.descriptor_dim);
  tr->add_flag("--resume", tr_resume, "continue from the checkpoint at --out if present");

  // refine
  auto* rf = app.add_subcommand("refine", "refine every match of a dataset");
  std::string rf_ckpt, rf_data, rf_out;
  rf->add_option("--checkpoint", rf_ckpt, "checkpoint manifest")->required();
  rf->add_option("--data", rf_data, "dataset (JSONL)")->required();
  rf->add_option("--out", rf_out, "refined matches (JSONL)")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "relative pose evaluation with RANSAC");
  ev->add_option("--config", config_path, "JSON run config");
  std::string ev_data, ev_refined, ev_out;
  EvalConfig eflags;
  ev->add_option("--data", ev_data, "dataset (JSONL)")->required();
  ev->add_option("--refined", ev_refined, "refined matches (JSONL)");
  ev->add_option("--out", ev_out, "metrics CSV path");
  auto* e_thr = ev->add_option("--threshold", eflags.ransac.threshold_px, "RANSAC threshold (px)");
  auto* e_it = ev->add_option("--iterations", eflags.ransac.iterations);
  auto* e_seed = ev->add_option("--seed", eflags.ransac.seed);
  auto* e_rep = ev->add_option("--repeats", eflags.repeats);

  // offset-hist
  auto* oh = app.add_subcommand("offset-hist", "histograms of offset length and orientation");
  std::string oh_in, oh_prefix;
  oh->add_option("--refined", oh_in, "refined matches (JSONL)")->required();
  oh->add_option("--out-prefix", oh_prefix,
                 "writes <prefix>_length.csv and <prefix>_orientation.csv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const json file_cfg = load_config(config_path);

    if (*gen) {
      SceneConfig cfg = section<SceneConfig>(file_cfg, "scene");
      override(g_seed, gflags.seed, cfg.seed);
      override(g_mpp, gflags.matches_per_pair, cfg.matches_per_pair);
      override(g_outl, gflags.outlier_fraction, cfg.outlier_fraction);
      override(g_dim, gflags.descriptor_dim, cfg.descriptor_dim);
      override(g_dnoise, gflags.descriptor_noise, cfg.descriptor_noise);
      override(g_jit, gflags.keypoint_jitter, cfg.keypoint_jitter);
      override(g_pnoise, gflags.photometric_noise, cfg.photometric_noise);
      if (g_exact_opt->count() > 0) cfg.quantize = !g_exact;
      cfg.validate();
      echo("scene", to_json(cfg));
      const DatasetSummary s = generate_dataset(cfg, gen_n, gen_out);
      std::cout << "records " << s.records << " outliers " << s.outliers << " checksum "
                << hex64(s.checksum) << "\n";
      return 0;
    }

    if (*tr) {
      TrainConfig cfg = section<TrainConfig>(file_cfg, "train");
      override(t_steps, tflags.steps, cfg.steps);
      override(t_batch, tflags.batch_size, cfg.batch_size);
      override(t_lr, tflags.lr, cfg.lr);
      override(t_tpx, tflags.t_px, cfg.t_px);
      override(t_seed, tflags.seed, cfg.seed);
      override(t_ckpt, tflags.checkpoint_every, cfg.checkpoint_every);
      override(t_logev, tflags.log_every, cfg.log_every);
      override(t_dim, tflags.refine.descriptor_dim, cfg.refine.descriptor_dim);
      if (t_var->count() > 0) cfg.refine.variant = parse_variant(tr_variant);
      cfg.validate();
      echo("train", to_json(cfg));

      if (!cfg.refine.has_network()) {
        TrainState st = initial_state(cfg);
        checkpoint_save(st, tr_out);
        std::cout << "training skipped: the sam-only variant has no trainable parameters; wrote "
                     "a parameter-free checkpoint to "
                  << tr_out << "\n";
        return 0;
      }
      const std::vector<TwoViewSample> data = read_dataset(tr_data);
      TrainState st = (tr_resume && std::filesystem::exists(tr_out))
                          ? checkpoint_load(tr_out, &cfg.refine)
                          : initial_state(cfg);
      if (st.step > cfg.steps) {
        throw ConfigError("checkpoint is at step " + std::to_string(st.step) +
                          ", beyond the requested " + std::to_string(cfg.steps));
      }
      TrainOutputs outs{tr_out, tr_log.empty() ? tr_out + ".log.csv" : tr_log};
      const auto records = train(cfg, data, st, outs);
      if (!records.empty()) {
        const TrainRecord& last = records.back();
        std::cout << "step " << last.step << " loss " << format_double(last.loss)
                  << " epi_px refined " << format_double(last.mean_epi_px_refined)
                  << " unrefined " << format_double(last.mean_epi_px_unrefined) << "\n";
      }
      std::cout << "checkpoint " << tr_out << "\nlog " << outs.log_path << "\n";
      return 0;
    }

    if (*rf) {
      const TrainState st = checkpoint_load(rf_ckpt);
      const std::vector<TwoViewSample> data = read_dataset(rf_data);
      const auto refined = refine_samples(st.net, data);
      write_refined(rf_out, refined);
      std::size_t skipped = 0;
      for (const auto& r : refined) skipped += r.match.skipped ? 1 : 0;
      std::cout << "refined " << refined.size() << " matches (" << skipped
                << " skipped at the border) with variant "
                << variant_name(st.net.config().variant) << "\n";
      return 0;
    }

    if (*ev) {
      EvalConfig cfg = section<EvalConfig>(file_cfg, "eval");
      override(e_thr, eflags.ransac.threshold_px, cfg.ransac.threshold_px);
      override(e_it, eflags.ransac.iterations, cfg.ransac.iterations);
      override(e_seed, eflags.ransac.seed, cfg.ransac.seed);
      override(e_rep, eflags.repeats, cfg.repeats);
      cfg.validate();
      echo("eval", to_json(cfg));
      const std::vector<TwoViewSample> data = read_dataset(ev_data);
      std::vector<RefinedRecord> refined;
      if (!ev_refined.empty()) refined = read_refined(ev_refined);
      const EvalReport rep = evaluate_dataset(data, refined, !ev_refined.empty(), cfg);
      if (!ev_out.empty()) write_text(ev_out, metrics_csv(rep));
      std::cout << metrics_text(rep);
      return 0;
    }

    if (*oh) {
      const auto refined = read_refined(oh_in);
      const OffsetHistograms h = offset_histograms(refined);
      write_text(oh_prefix + "_length.csv", length_histogram_csv(h));
      write_text(oh_prefix + "_orientation.csv", orientation_histogram_csv(h));
      std::cout << "offset vectors " << h.vectors << " (zero length " << h.zero_length << ")\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
