#include "subpx/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "subpx/error.hpp"

namespace subpx {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !finite(fx) || !finite(fy) || !finite(cx) ||
      !finite(cy)) {
    throw InvalidInput("camera intrinsics require finite values and positive focal lengths");
  }
}

Correspondence Correspondence::from_pixels(const PixelPoint& p1, const PixelPoint& p2,
                                           const CameraIntrinsics& k1,
                                           const CameraIntrinsics& k2) {
  return {p1, p2, normalize_point(k1, p1), normalize_point(k2, p2)};
}

NormalizedPoint normalize_point(const CameraIntrinsics& k, const PixelPoint& p) {
  k.validate();
  if (!finite(p.x) || !finite(p.y)) {
    throw InvalidInput("normalize_point: non-finite pixel coordinate");
  }
  return {(p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy, 1.0};
}

Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

EssentialMatrix essential_from_pose(const RelativePose& pose) {
  return {cross_matrix(pose.translation) * pose.rotation};
}

EpipolarErrorGrad epipolar_error_grad(const NormalizedPoint& n1, const NormalizedPoint& n2,
                                      const EssentialMatrix& e) {
  const Vec3 x1 = n1.vec();
  const Vec3 x2 = n2.vec();
  const Vec3 a = e.m * x1;
  const Vec3 b = e.m.transpose() * x2;
  const double r = x2.dot(a);
  const double den = a(0) * a(0) + a(1) * a(1) + b(0) * b(0) + b(1) * b(1);
  if (!(den > 0.0)) {
    throw DegenerateGeometry("epipolar error: both epipolar line gradients vanish");
  }
  EpipolarErrorGrad out;
  out.error = r * r / den;
  const double inv_den2 = 1.0 / (den * den);
  for (int j = 0; j < 2; ++j) {
    const double dr1 = b(j);
    const double dden1 = 2.0 * (a(0) * e.m(0, j) + a(1) * e.m(1, j));
    out.d_n1(j) = (2.0 * r * dr1 * den - r * r * dden1) * inv_den2;

    const double dr2 = a(j);
    const double dden2 = 2.0 * (b(0) * e.m(j, 0) + b(1) * e.m(j, 1));
    out.d_n2(j) = (2.0 * r * dr2 * den - r * r * dden2) * inv_den2;
  }
  return out;
}

double epipolar_error(const NormalizedPoint& n1, const NormalizedPoint& n2,
                      const EssentialMatrix& e) {
  const Vec3 x1 = n1.vec();
  const Vec3 x2 = n2.vec();
  const Vec3 a = e.m * x1;
  const Vec3 b = e.m.transpose() * x2;
  const double r = x2.dot(a);
  const double den = a(0) * a(0) + a(1) * a(1) + b(0) * b(0) + b(1) * b(1);
  if (!(den > 0.0)) {
    throw DegenerateGeometry("epipolar error: both epipolar line gradients vanish");
  }
  return r * r / den;
}

double epipolar_distance(const NormalizedPoint& n1, const NormalizedPoint& n2,
                         const EssentialMatrix& e) {
  return std::sqrt(epipolar_error(n1, n2, e));
}

double epipolar_loss(const NormalizedPoint& n1, const NormalizedPoint& n2,
                     const EssentialMatrix& e, double t_prime) {
  if (!(t_prime > 0.0)) throw InvalidInput("epipolar_loss: threshold must be positive");
  const double err = epipolar_error(n1, n2, e);
  return std::sqrt(err) < t_prime ? err : t_prime;
}

PixelLossGrad epipolar_loss_pixel_grad(const PixelPoint& p1, const PixelPoint& p2,
                                       const CameraIntrinsics& k1,
                                       const CameraIntrinsics& k2,
                                       const EssentialMatrix& e, double t_prime) {
  if (!(t_prime > 0.0)) throw InvalidInput("epipolar_loss: threshold must be positive");
  const auto n1 = normalize_point(k1, p1);
  const auto n2 = normalize_point(k2, p2);
  const auto g = epipolar_error_grad(n1, n2, e);
  PixelLossGrad out;
  out.distance = std::sqrt(g.error);
  out.inlier = out.distance < t_prime;
  if (!out.inlier) {
    out.loss = t_prime;
    return out;
  }
  out.loss = g.error;
  out.d_p1 = {g.d_n1(0) / k1.fx, g.d_n1(1) / k1.fy};
  out.d_p2 = {g.d_n2(0) / k2.fx, g.d_n2(1) / k2.fy};
  return out;
}

double normalized_threshold(double t_px, const CameraIntrinsics& k1,
                            const CameraIntrinsics& k2) {
  if (!(k1.fx > 0.0) || !(k1.fy > 0.0) || !(k2.fx > 0.0) || !(k2.fy > 0.0)) {
    throw InvalidInput("normalized_threshold: focal lengths must be positive");
  }
  return t_px / mean_focal(k1, k2);
}

double mean_focal(const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  return (k1.fx + k1.fy + k2.fx + k2.fy) / 4.0;
}

Vec2 triangulate_depths(const RelativePose& pose, const NormalizedPoint& n1,
                        const NormalizedPoint& n2) {
  // z1 (R n1) - z2 n2 = -t, solved in the least-squares sense.
  const Vec3 a = pose.rotation * n1.vec();
  const Vec3 b = -n2.vec();
  const Vec3 rhs = -pose.translation;
  const double aa = a.dot(a);
  const double ab = a.dot(b);
  const double bb = b.dot(b);
  const double det = aa * bb - ab * ab;
  if (std::abs(det) < 1e-15 * aa * bb) {
    return {0.0, 0.0};  // parallel rays
  }
  const double ar = a.dot(rhs);
  const double br = b.dot(rhs);
  return {(bb * ar - ab * br) / det, (aa * br - ab * ar) / det};
}

RelativePose decompose_essential(const EssentialMatrix& e,
                                 std::span<const Correspondence> supports) {
  if (supports.empty()) {
    throw InvalidInput("decompose_essential: at least one support correspondence required");
  }
  Eigen::JacobiSVD<Mat3> svd(e.m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u.col(2) *= -1.0;
  if (v.determinant() < 0.0) v.col(2) *= -1.0;
  Mat3 w;
  w << 0.0, -1.0, 0.0,
       1.0, 0.0, 0.0,
       0.0, 0.0, 1.0;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();

  const std::array<RelativePose, 4> candidates{
      RelativePose{r1, t}, RelativePose{r1, -t}, RelativePose{r2, t}, RelativePose{r2, -t}};
  std::array<int, 4> counts{};
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (const auto& s : supports) {
      const Vec2 z = triangulate_depths(candidates[c], s.n1, s.n2);
      if (z(0) > 0.0 && z(1) > 0.0) ++counts[c];
    }
  }
  const auto best = std::max_element(counts.begin(), counts.end());
  const auto ties = std::count(counts.begin(), counts.end(), *best);
  if (*best == 0 || ties > 1) {
    throw AmbiguousCheirality("decompose_essential: no candidate has a strict plurality of "
                              "points in front of both cameras");
  }
  return candidates[static_cast<std::size_t>(best - counts.begin())];
}

double rotation_error_deg(const Mat3& est, const Mat3& gt) {
  // Same angle as arccos((trace - 1) / 2), evaluated via atan2 so that tiny
  // angles keep full precision.
  const Mat3 rel = gt.transpose() * est;
  const Vec3 s{rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)};
  const double sin_a = 0.5 * s.norm();
  const double cos_a = std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0);
  return std::atan2(sin_a, cos_a) * kRadToDeg;
}

double translation_error_deg(const Vec3& est, const Vec3& gt) {
  const Vec3 a = est.normalized();
  const Vec3 b = gt.normalized();
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

double pose_error(const RelativePose& est, const RelativePose& gt) {
  return std::max(rotation_error_deg(est.rotation, gt.rotation),
                  translation_error_deg(est.translation, gt.translation));
}

double auc(std::span<const double> errors, double threshold) {
  if (errors.empty()) throw InvalidInput("auc: empty error list");
  if (!(threshold > 0.0)) throw InvalidInput("auc: threshold must be positive");
  // Integral of recall(theta) = #{e_i < theta}/N over [0, T] is
  // sum_i max(0, T - e_i) / N.
  double area = 0.0;
  for (double e : errors) {
    if (!finite(e) || e < 0.0) throw InvalidInput("auc: errors must be finite and >= 0");
    if (e < threshold) area += threshold - e;
  }
  return area / (static_cast<double>(errors.size()) * threshold);
}

Mat3 axis_angle(const Vec3& axis, double angle_deg) {
  return Eigen::AngleAxisd(angle_deg / kRadToDeg, axis.normalized()).toRotationMatrix();
}

}  // namespace subpx
