// Python bindings. Configs cross the boundary as JSON strings so the Python
// side can use plain dicts with the same keys as the CLI config files.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "subpx/checkpoint.hpp"
#include "subpx/config.hpp"
#include "subpx/error.hpp"
#include "subpx/evaluation.hpp"
#include "subpx/io.hpp"
#include "subpx/ransac.hpp"
#include "subpx/trainer.hpp"

namespace py = pybind11;
using namespace subpx;

namespace {

template <typename C>
C parse(const std::string& text) {
  C c;
  if (!text.empty()) from_json(nlohmann::json::parse(text), c);
  c.validate();
  return c;
}

CameraIntrinsics intrinsics(const std::array<double, 4>& k) {
  CameraIntrinsics c{k[0], k[1], k[2], k[3]};
  c.validate();
  return c;
}

py::dict summary_dict(const MetricsSummary& s) {
  py::dict d;
  d["auc5"] = s.auc5;
  d["auc10"] = s.auc10;
  d["auc20"] = s.auc20;
  d["mean"] = s.mean;
  d["median"] = s.median;
  d["mean_inlier_ratio"] = s.mean_inlier_ratio;
  return d;
}

std::vector<PixelPoint> points(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                               const char* name) {
  if (a.ndim() != 2 || a.shape(1) != 2)
    throw InvalidInput(std::string(name) + " must have shape (N, 2)");
  auto r = a.unchecked<2>();
  std::vector<PixelPoint> out(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1)};
  return out;
}

}  // namespace

PYBIND11_MODULE(_subpx, m) {
  m.doc() = "Keypoint refinement with an epipolar loss";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DegenerateGeometry>(m, "DegenerateGeometry", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<CorruptCheckpoint>(m, "CorruptCheckpoint", base.ptr());

  m.def("essential_from_pose",
        [](const Mat3& r, const Vec3& t) { return essential_from_pose({r, t}).m; },
        py::arg("rotation"), py::arg("translation"));

  m.def("epipolar_error",
        [](const Vec2& x1, const Vec2& x2, const Mat3& e) {
          return epipolar_error({x1.x(), x1.y(), 1.0}, {x2.x(), x2.y(), 1.0}, EssentialMatrix{e});
        },
        py::arg("x1"), py::arg("x2"), py::arg("essential"),
        "Sampson error of two normalized points.");

  m.def("normalized_threshold",
        [](double t_px, const std::array<double, 4>& k1, const std::array<double, 4>& k2) {
          return normalized_threshold(t_px, intrinsics(k1), intrinsics(k2));
        },
        py::arg("t_px"), py::arg("k1"), py::arg("k2"));

  m.def("softargmax2d",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& s) {
          if (s.ndim() != 2 || s.shape(0) != s.shape(1))
            throw InvalidInput("softargmax2d: expected a square 2-D array");
          ScoreMap<double> map(static_cast<int>(s.shape(0)));
          std::copy(s.data(), s.data() + s.size(), map.values.begin());
          const auto r = softargmax2d(map);
          return py::make_tuple(r.x, r.y);
        },
        py::arg("scores"), "Expected (x, y) grid offset under softmax(scores).");

  m.def("_estimate_pose",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p1,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& p2,
           const std::array<double, 4>& k1, const std::array<double, 4>& k2,
           const std::string& cfg) {
          const auto a = points(p1, "p1"), b = points(p2, "p2");
          if (a.size() != b.size()) throw InvalidInput("p1 and p2 differ in length");
          const auto c1 = intrinsics(k1), c2 = intrinsics(k2);
          std::vector<Correspondence> corrs;
          for (std::size_t i = 0; i < a.size(); ++i)
            corrs.push_back(Correspondence::from_pixels(a[i], b[i], c1, c2));
          const auto r = ransac(corrs, c1, c2, parse<RansacConfig>(cfg));
          py::dict d;
          d["success"] = r.success;
          d["essential"] = r.e.m;
          d["rotation"] = r.pose.rotation;
          d["translation"] = r.pose.translation;
          d["inliers"] = std::vector<bool>(r.inliers.begin(), r.inliers.end());
          d["inlier_ratio"] = r.inlier_ratio;
          return d;
        });

  m.def("_generate_dataset", [](const std::string& path, std::int64_t n, const std::string& cfg) {
    const auto s = generate_dataset(parse<SceneConfig>(cfg), n, path);
    py::dict d;
    d["records"] = s.records;
    d["outliers"] = s.outliers;
    d["checksum"] = hex64(s.checksum);
    return d;
  });

  m.def("_train", [](const std::string& data, const std::string& out, const std::string& cfg) {
    const auto c = parse<TrainConfig>(cfg);
    TrainState st = initial_state(c);
    if (!c.refine.has_network()) {
      checkpoint_save(st, out);
      return py::list();
    }
    const auto samples = read_dataset(data);
    std::vector<TrainRecord> records;
    {
      py::gil_scoped_release release;
      records = train(c, samples, st, {out, out + ".log.csv"});
    }
    py::list rows;
    for (const auto& r : records) {
      py::dict d;
      d["step"] = r.step;
      d["loss"] = r.loss;
      d["inlier_frac"] = r.inlier_frac;
      d["mean_epi_px_refined"] = r.mean_epi_px_refined;
      d["mean_epi_px_unrefined"] = r.mean_epi_px_unrefined;
      rows.append(d);
    }
    return rows;
  });

  m.def("_refine", [](const std::string& checkpoint, const std::string& data, const std::string& out) {
    const TrainState st = checkpoint_load(checkpoint);
    const auto refined = refine_samples(st.net, read_dataset(data));
    write_refined(out, refined);
    return refined.size();
  });

  m.def("_evaluate", [](const std::string& data, const std::optional<std::string>& refined,
                        const std::string& cfg) {
    const auto samples = read_dataset(data);
    const auto rec = refined ? read_refined(*refined) : std::vector<RefinedRecord>{};
    const auto rep = evaluate_dataset(samples, rec, refined.has_value(), parse<EvalConfig>(cfg));
    py::dict d;
    d["unrefined"] = summary_dict(rep.unrefined_summary);
    d["refined"] = rep.refined_summary ? py::object(summary_dict(*rep.refined_summary)) : py::none();
    d["csv"] = metrics_csv(rep);
    return d;
  });
}
