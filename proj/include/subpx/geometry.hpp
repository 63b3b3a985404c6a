#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace subpx {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

// Homogeneous calibrated point; w is always 1 when built by normalize_point.
struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;

  Vec3 vec() const { return {x, y, w}; }
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
};

struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::UnitX();
};

struct EssentialMatrix {
  Mat3 m = Mat3::Zero();
};

struct Correspondence {
  PixelPoint p1;
  PixelPoint p2;
  NormalizedPoint n1;
  NormalizedPoint n2;

  static Correspondence from_pixels(const PixelPoint& p1, const PixelPoint& p2,
                                    const CameraIntrinsics& k1,
                                    const CameraIntrinsics& k2);
};

NormalizedPoint normalize_point(const CameraIntrinsics& k, const PixelPoint& p);

Mat3 cross_matrix(const Vec3& v);

EssentialMatrix essential_from_pose(const RelativePose& pose);

/// Sampson-style epipolar error
///   (n2' E n1)^2 / ([E n1]_0^2 + [E n1]_1^2 + [E' n2]_0^2 + [E' n2]_1^2).
/// Throws DegenerateGeometry when the denominator vanishes.
double epipolar_error(const NormalizedPoint& n1, const NormalizedPoint& n2,
                      const EssentialMatrix& e);

double epipolar_distance(const NormalizedPoint& n1, const NormalizedPoint& n2,
                         const EssentialMatrix& e);

/// Robust loss: the error itself while sqrt(error) < t_prime, otherwise the
/// constant t_prime.
double epipolar_loss(const NormalizedPoint& n1, const NormalizedPoint& n2,
                     const EssentialMatrix& e, double t_prime);

// Error value and its derivative with respect to the inhomogeneous
// coordinates (x, y) of both normalized points.
struct EpipolarErrorGrad {
  double error = 0.0;
  Vec2 d_n1 = Vec2::Zero();
  Vec2 d_n2 = Vec2::Zero();
};

EpipolarErrorGrad epipolar_error_grad(const NormalizedPoint& n1,
                                      const NormalizedPoint& n2,
                                      const EssentialMatrix& e);

// Loss value plus gradient w.r.t. the pixel coordinates of both points. The
// outlier branch has an exactly zero gradient.
struct PixelLossGrad {
  double loss = 0.0;
  double distance = 0.0;
  bool inlier = false;
  Vec2 d_p1 = Vec2::Zero();
  Vec2 d_p2 = Vec2::Zero();
};

PixelLossGrad epipolar_loss_pixel_grad(const PixelPoint& p1, const PixelPoint& p2,
                                       const CameraIntrinsics& k1,
                                       const CameraIntrinsics& k2,
                                       const EssentialMatrix& e, double t_prime);

/// Pixel threshold divided by the mean of the four focal lengths.
double normalized_threshold(double t_px, const CameraIntrinsics& k1,
                            const CameraIntrinsics& k2);

// Mean focal length of both cameras; multiplies a normalized distance back
// into pixels.
double mean_focal(const CameraIntrinsics& k1, const CameraIntrinsics& k2);

// Depths (z1, z2) of the least-squares two-view triangulation of (n1, n2)
// under pose, i.e. z2 n2 ~= z1 R n1 + t.
Vec2 triangulate_depths(const RelativePose& pose, const NormalizedPoint& n1,
                        const NormalizedPoint& n2);

/// Recovers R, t from E by the four-fold SVD decomposition, selecting the
/// candidate that places the most supports in front of both cameras.
RelativePose decompose_essential(const EssentialMatrix& e,
                                 std::span<const Correspondence> supports);

double rotation_error_deg(const Mat3& est, const Mat3& gt);
double translation_error_deg(const Vec3& est, const Vec3& gt);

/// max(rotation error, translation direction error), in degrees.
double pose_error(const RelativePose& est, const RelativePose& gt);

/// Normalized area under the recall curve of `errors` up to `threshold`.
double auc(std::span<const double> errors, double threshold);

// Rotation of `angle_deg` degrees about `axis` (normalized internally).
Mat3 axis_angle(const Vec3& axis, double angle_deg);

}  // namespace subpx
