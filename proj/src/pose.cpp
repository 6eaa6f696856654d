#include "cdviews/pose.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "cdviews/error.hpp"

namespace cdviews {

UnitQuaternion UnitQuaternion::from_components(double x, double y, double z, double w) {
  const double n = std::sqrt(x * x + y * y + z * z + w * w);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::InvalidArgument, "quaternion has zero or non-finite norm");
  }
  UnitQuaternion q;
  q.c_ = {x / n, y / n, z / n, w / n};
  bool flip = q.c_[3] < 0.0;
  if (q.c_[3] == 0.0) {
    for (int i = 0; i < 3; ++i) {
      if (q.c_[i] != 0.0) {
        flip = q.c_[i] < 0.0;
        break;
      }
    }
  }
  if (flip) {
    for (double& v : q.c_) v = -v;
  }
  return q;
}

double UnitQuaternion::dot(const UnitQuaternion& other) const noexcept {
  return c_[0] * other.c_[0] + c_[1] * other.c_[1] + c_[2] * other.c_[2] + c_[3] * other.c_[3];
}

double orthonormality_error(const Mat3& rotation) {
  return (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
}

UnitQuaternion quat_from_rotation(const Mat3& r) {
  const double err = orthonormality_error(r);
  const double det = r.determinant();
  if (!std::isfinite(err) || err > kRotationTolerance || det < 0.0) {
    std::ostringstream os;
    os << "max |R R^T - I| = " << err << ", det = " << det;
    throw Error(ErrorCode::NonOrthonormalRotation, os.str());
  }

  // Shepperd: branch on the largest of (trace, R00, R11, R22).
  const double trace = r(0, 0) + r(1, 1) + r(2, 2);
  double x, y, z, w;
  if (trace >= r(0, 0) && trace >= r(1, 1) && trace >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    x = 0.25 * s;
    w = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    y = 0.25 * s;
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    z = 0.25 * s;
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
  }
  return UnitQuaternion::from_components(x, y, z, w);
}

Mat3 rotation_from_quat(const UnitQuaternion& q) {
  const double x = q.x(), y = q.y(), z = q.z(), w = q.w();
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
      2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return r;
}

double orientation_distance(const UnitQuaternion& p, const UnitQuaternion& q) {
  const double c = std::clamp(std::abs(p.dot(q)), -1.0, 1.0);
  return 2.0 * std::acos(c);
}

double position_distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

CameraPose CameraPose::from_extrinsic(const std::array<double, 16>& m) {
  CameraPose pose;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) pose.rotation(i, j) = m[4 * i + j];
    pose.position(i) = m[4 * i + 3];
  }
  return pose;
}

std::array<double, 16> CameraPose::to_extrinsic() const {
  std::array<double, 16> m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[4 * i + j] = rotation(i, j);
    m[4 * i + 3] = position(i);
  }
  m[15] = 1.0;
  return m;
}

CameraPose CameraPose::inverse() const {
  CameraPose inv;
  inv.rotation = rotation.transpose();
  inv.position = -(inv.rotation * position);
  return inv;
}

PoseKey PoseKey::from_pose(const CameraPose& pose) {
  return PoseKey{pose.position, quat_from_rotation(pose.rotation)};
}

double view_distance(const PoseKey& a, const PoseKey& b, DistanceWeights weights) {
  return weights.position * position_distance(a.position, b.position) +
         weights.orientation * orientation_distance(a.orientation, b.orientation);
}

double view_distance(const CameraPose& a, const CameraPose& b, DistanceWeights weights) {
  return view_distance(PoseKey::from_pose(a), PoseKey::from_pose(b), weights);
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) {
    // Looking straight along `up`; any perpendicular works.
    right = forward.unitOrthogonal();
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  CameraPose pose;
  pose.position = eye;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  return pose;
}

}  // namespace cdviews
