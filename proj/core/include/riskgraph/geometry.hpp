#pragma once

#include <Eigen/Core>

namespace riskgraph {

/// Zero-skew pinhole intrinsics, in pixels.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  /// The 3x3 upper-triangular matrix [[fx,0,cx],[0,fy,cy],[0,0,1]].
  Eigen::Matrix3d matrix() const;

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Point in the camera frame, meters; z points forward along the optical axis.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  bool operator==(const Point3&) const = default;
};

/// Bounding-box center in pixels plus the depth estimate at that pixel.
/// Depth is used as meters.
struct PixelObservation {
  double u = 0.0;
  double v = 0.0;
  double depth = 1.0;

  bool operator==(const PixelObservation&) const = default;
};

/// Closed-form inverse of the pinhole matrix. Throws ConfigError for a
/// non-positive focal length.
Eigen::Matrix3d invert_intrinsics(const CameraIntrinsics& k);

/// depth * K^-1 * [u, v, 1]^T. Throws ParseError if depth <= 0.
Point3 inverse_project(const PixelObservation& obs, const CameraIntrinsics& k);

/// Forward pinhole projection; the inverse of inverse_project for z > 0.
PixelObservation project(const Point3& p, const CameraIntrinsics& k);

double euclidean_distance(const Point3& p, const Point3& q);

/// Distance gate: true iff |p - q| <= mu. Throws ConfigError if mu <= 0.
bool within_range(const Point3& p, const Point3& q, double mu);

}  // namespace riskgraph
