#include "subpx/config.hpp"

#include <set>
#include <string>

#include "subpx/error.hpp"

namespace subpx {

using nlohmann::json;

namespace {

// Copies present keys into fields and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw ConfigError(what_ + " config must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      field = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(what_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + what_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const SceneConfig& c) {
  json j{{"seed", c.seed},
         {"matches_per_pair", c.matches_per_pair},
         {"image_width", c.image_width},
         {"image_height", c.image_height},
         {"focal_min", c.focal_min},
         {"focal_max", c.focal_max},
         {"max_rotation_deg", c.max_rotation_deg},
         {"depth_min", c.depth_min},
         {"depth_max", c.depth_max},
         {"texture_blobs", c.texture_blobs},
         {"blob_sigma_min", c.blob_sigma_min},
         {"blob_sigma_max", c.blob_sigma_max},
         {"affine_jitter", c.affine_jitter},
         {"photometric_noise", c.photometric_noise},
         {"descriptor_noise", c.descriptor_noise},
         {"descriptor_appearance", c.descriptor_appearance},
         {"descriptor_dim", c.descriptor_dim},
         {"keypoint_jitter", c.keypoint_jitter},
         {"outlier_fraction", c.outlier_fraction},
         {"quantize", c.quantize},
         {"patch_size", c.patch_size},
         {"border_margin", c.border_margin}};
  if (c.forced_translation) {
    const Vec3& t = *c.forced_translation;
    j["forced_translation"] = {t.x(), t.y(), t.z()};
  } else {
    j["forced_translation"] = nullptr;
  }
  return j;
}

void from_json(const json& j, SceneConfig& c) {
  Reader r(j, "scene");
  r.get("seed", c.seed);
  r.get("matches_per_pair", c.matches_per_pair);
  r.get("image_width", c.image_width);
  r.get("image_height", c.image_height);
  r.get("focal_min", c.focal_min);
  r.get("focal_max", c.focal_max);
  r.get("max_rotation_deg", c.max_rotation_deg);
  r.get("depth_min", c.depth_min);
  r.get("depth_max", c.depth_max);
  r.get("texture_blobs", c.texture_blobs);
  r.get("blob_sigma_min", c.blob_sigma_min);
  r.get("blob_sigma_max", c.blob_sigma_max);
  r.get("affine_jitter", c.affine_jitter);
  r.get("photometric_noise", c.photometric_noise);
  r.get("descriptor_noise", c.descriptor_noise);
  r.get("descriptor_appearance", c.descriptor_appearance);
  r.get("descriptor_dim", c.descriptor_dim);
  r.get("keypoint_jitter", c.keypoint_jitter);
  r.get("outlier_fraction", c.outlier_fraction);
  r.get("quantize", c.quantize);
  r.get("patch_size", c.patch_size);
  r.get("border_margin", c.border_margin);
  if (const json* t = r.sub("forced_translation")) {
    if (t->is_null()) {
      c.forced_translation.reset();
    } else if (t->is_array() && t->size() == 3 && (*t)[0].is_number() && (*t)[1].is_number() &&
               (*t)[2].is_number()) {
      c.forced_translation = Vec3((*t)[0].get<double>(), (*t)[1].get<double>(),
                                  (*t)[2].get<double>());
    } else {
      throw ConfigError("scene.forced_translation must be null or [x, y, z]");
    }
  }
  r.finish();
}

json to_json(const RefineConfig& c) {
  return json{{"input_patch", c.input_patch},
              {"output_map", c.output_map},
              {"sigma", c.sigma},
              {"hidden_channels", c.hidden_channels},
              {"descriptor_dim", c.descriptor_dim},
              {"use_score_channel", c.use_score_channel},
              {"variant", std::string(variant_name(c.variant))}};
}

void from_json(const json& j, RefineConfig& c) {
  Reader r(j, "refine");
  r.get("input_patch", c.input_patch);
  r.get("output_map", c.output_map);
  r.get("sigma", c.sigma);
  r.get("hidden_channels", c.hidden_channels);
  r.get("descriptor_dim", c.descriptor_dim);
  r.get("use_score_channel", c.use_score_channel);
  std::string variant(variant_name(c.variant));
  r.get("variant", variant);
  c.variant = parse_variant(variant);
  r.finish();
}

json to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"t_px", c.t_px},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"log_every", c.log_every},
              {"refine", to_json(c.refine)}};
}

void from_json(const json& j, TrainConfig& c) {
  Reader r(j, "train");
  r.get("steps", c.steps);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("t_px", c.t_px);
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("log_every", c.log_every);
  if (const json* sub = r.sub("refine")) from_json(*sub, c.refine);
  r.finish();
}

json to_json(const RansacConfig& c) {
  return json{{"threshold_px", c.threshold_px},
              {"msac_margin_factor", c.msac_margin_factor},
              {"iterations", c.iterations},
              {"seed", c.seed},
              {"min_sample", c.min_sample},
              {"local_optimization", c.local_optimization},
              {"lo_samples", c.lo_samples},
              {"lo_refits", c.lo_refits}};
}

void from_json(const json& j, RansacConfig& c) {
  Reader r(j, "ransac");
  r.get("threshold_px", c.threshold_px);
  r.get("msac_margin_factor", c.msac_margin_factor);
  r.get("iterations", c.iterations);
  r.get("seed", c.seed);
  r.get("min_sample", c.min_sample);
  r.get("local_optimization", c.local_optimization);
  r.get("lo_samples", c.lo_samples);
  r.get("lo_refits", c.lo_refits);
  r.finish();
}

json to_json(const EvalConfig& c) {
  return json{{"ransac", to_json(c.ransac)}, {"repeats", c.repeats}};
}

void from_json(const json& j, EvalConfig& c) {
  Reader r(j, "eval");
  if (const json* sub = r.sub("ransac")) from_json(*sub, c.ransac);
  r.get("repeats", c.repeats);
  r.finish();
}

}  // namespace subpx
