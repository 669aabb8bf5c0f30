#include "riskgraph/geometry.hpp"

#include <cmath>
#include <string>

#include "riskgraph/errors.hpp"

namespace riskgraph {

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx,  //
      0.0, fy, cy,   //
      0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d invert_intrinsics(const CameraIntrinsics& k) {
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
    throw ConfigError("invalid intrinsics: focal lengths must be positive (fx=" +
                      std::to_string(k.fx) + ", fy=" + std::to_string(k.fy) + ")");
  }
  Eigen::Matrix3d inv;
  inv << 1.0 / k.fx, 0.0, -k.cx / k.fx,  //
      0.0, 1.0 / k.fy, -k.cy / k.fy,     //
      0.0, 0.0, 1.0;
  return inv;
}

Point3 inverse_project(const PixelObservation& obs, const CameraIntrinsics& k) {
  if (!(obs.depth > 0.0)) {
    throw ParseError("invalid observation: depth must be positive, got " +
                     std::to_string(obs.depth));
  }
  const Eigen::Vector3d p = obs.depth * (invert_intrinsics(k) * Eigen::Vector3d(obs.u, obs.v, 1.0));
  return {p.x(), p.y(), p.z()};
}

PixelObservation project(const Point3& p, const CameraIntrinsics& k) {
  return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z};
}

double euclidean_distance(const Point3& p, const Point3& q) {
  return (p.vec() - q.vec()).norm();
}

bool within_range(const Point3& p, const Point3& q, double mu) {
  if (!(mu > 0.0)) {
    throw ConfigError("invalid distance threshold mu=" + std::to_string(mu));
  }
  return euclidean_distance(p, q) <= mu;
}

}  // namespace riskgraph
