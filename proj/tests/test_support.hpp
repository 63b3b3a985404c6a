#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "subpx/geometry.hpp"

namespace testing {

using subpx::Mat3;
using subpx::Vec3;

inline Vec3 random_unit(std::mt19937_64& g) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(g), n(g), n(g));
  return v.normalized();
}

inline Mat3 random_rotation(std::mt19937_64& g, double max_deg) {
  std::uniform_real_distribution<double> u(0.0, max_deg * M_PI / 180.0);
  return Eigen::AngleAxisd(u(g), random_unit(g)).toRotationMatrix();
}

inline subpx::RelativePose random_pose(std::mt19937_64& g, double max_deg = 30.0) {
  subpx::RelativePose p;
  p.rotation = random_rotation(g, max_deg);
  p.translation = random_unit(g);
  return p;
}

// Points in front of both cameras, returned as exact normalized projections.
struct Projected {
  std::vector<Vec3> points;
  std::vector<subpx::NormalizedPoint> n1;
  std::vector<subpx::NormalizedPoint> n2;
};

inline Projected project_points(std::mt19937_64& g, const subpx::RelativePose& pose, int n) {
  std::uniform_real_distribution<double> xy(-1.0, 1.0);
  std::uniform_real_distribution<double> depth(4.0, 10.0);
  Projected out;
  while (static_cast<int>(out.points.size()) < n) {
    const double z = depth(g);
    const Vec3 x(xy(g) * z * 0.5, xy(g) * z * 0.5, z);
    const Vec3 y = pose.rotation * x + pose.translation;
    if (y.z() < 0.5) continue;
    out.points.push_back(x);
    out.n1.push_back({x.x() / x.z(), x.y() / x.z(), 1.0});
    out.n2.push_back({y.x() / y.z(), y.y() / y.z(), 1.0});
  }
  return out;
}

// Two calibrated views of random points plus uniform outliers, in pixels.
struct PixelScene {
  subpx::RelativePose pose;
  subpx::CameraIntrinsics k1{500.0, 500.0, 320.0, 240.0};
  subpx::CameraIntrinsics k2{520.0, 520.0, 320.0, 240.0};
  std::vector<subpx::Correspondence> corrs;
  std::vector<bool> inlier;
};

inline PixelScene pixel_scene(std::mt19937_64& g, int n_in, int n_out, double noise_px,
                              double max_deg = 15.0) {
  PixelScene s;
  s.pose = random_pose(g, max_deg);
  std::uniform_real_distribution<double> u(0.0, 640.0), v(0.0, 480.0), depth(4.0, 12.0);
  std::normal_distribution<double> noise(0.0, noise_px > 0.0 ? noise_px : 1.0);
  auto jitter = [&] { return noise_px > 0.0 ? noise(g) : 0.0; };
  auto in_image = [](const subpx::PixelPoint& p) {
    return p.x >= 0.0 && p.x < 640.0 && p.y >= 0.0 && p.y < 480.0;
  };
  while (static_cast<int>(s.corrs.size()) < n_in) {
    const double z = depth(g);
    const Vec3 x((u(g) - s.k1.cx) / s.k1.fx * z, (v(g) - s.k1.cy) / s.k1.fy * z, z);
    const Vec3 y = s.pose.rotation * x + s.pose.translation;
    if (y.z() < 0.5) continue;
    subpx::PixelPoint p1{s.k1.fx * x.x() / x.z() + s.k1.cx, s.k1.fy * x.y() / x.z() + s.k1.cy};
    subpx::PixelPoint p2{s.k2.fx * y.x() / y.z() + s.k2.cx, s.k2.fy * y.y() / y.z() + s.k2.cy};
    if (!in_image(p2)) continue;
    p1.x += jitter();
    p1.y += jitter();
    p2.x += jitter();
    p2.y += jitter();
    s.corrs.push_back(subpx::Correspondence::from_pixels(p1, p2, s.k1, s.k2));
    s.inlier.push_back(true);
  }
  for (int i = 0; i < n_out; ++i) {
    s.corrs.push_back(subpx::Correspondence::from_pixels({u(g), v(g)}, {u(g), v(g)}, s.k1, s.k2));
    s.inlier.push_back(false);
  }
  return s;
}

// Unit Frobenius norm with the sign fixed by the largest-magnitude entry.
inline Mat3 canonical(const Mat3& m) {
  Mat3 c = m / m.norm();
  Eigen::Index r = 0, k = 0;
  c.cwiseAbs().maxCoeff(&r, &k);
  return c(r, k) < 0.0 ? Mat3(-c) : c;
}

}  // namespace testing
