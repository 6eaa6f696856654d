#pragma once

// Camera poses and the pose-space distances used by view suppression.
//
// Rotations are camera-to-world with the OpenCV axis convention
// (x right, y down, z along the optical axis).

#include <array>

#include <Eigen/Core>

namespace cdviews {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion stored as [x, y, z, w], canonicalized so that w >= 0
/// (ties at w == 0 resolved by the first nonzero of x, y, z being positive).
class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  /// Normalizes and canonicalizes. Throws InvalidArgument on a zero vector.
  static UnitQuaternion from_components(double x, double y, double z, double w);

  double x() const noexcept { return c_[0]; }
  double y() const noexcept { return c_[1]; }
  double z() const noexcept { return c_[2]; }
  double w() const noexcept { return c_[3]; }
  const std::array<double, 4>& components() const noexcept { return c_; }

  double dot(const UnitQuaternion& other) const noexcept;

 private:
  std::array<double, 4> c_{0.0, 0.0, 0.0, 1.0};
};

/// Tolerance on ||R R^T - I||_max accepted by quat_from_rotation.
inline constexpr double kRotationTolerance = 1e-4;

/// Shepperd conversion. Throws NonOrthonormalRotation when R is not a proper
/// rotation within kRotationTolerance; no re-orthonormalization is attempted.
UnitQuaternion quat_from_rotation(const Mat3& rotation);
Mat3 rotation_from_quat(const UnitQuaternion& q);

/// max |R R^T - I| entry; exposed so loaders can report it.
double orthonormality_error(const Mat3& rotation);

/// 2 acos(|p . q|), radians in [0, pi].
double orientation_distance(const UnitQuaternion& p, const UnitQuaternion& q);

/// Euclidean distance in meters.
double position_distance(const Vec3& a, const Vec3& b);

struct DistanceWeights {
  double position = 1.0;
  double orientation = 1.0;
};

struct CameraPose {
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();

  /// Row-major 4x4 camera-to-world matrix.
  static CameraPose from_extrinsic(const std::array<double, 16>& m);
  std::array<double, 16> to_extrinsic() const;

  /// Pose of the inverse transform; turns a world-to-camera matrix into
  /// camera-to-world.
  CameraPose inverse() const;

  /// Unit optical axis in world coordinates.
  Vec3 forward() const { return rotation.col(2); }
};

/// Pose with the orientation pre-converted, so repeated distance queries skip
/// the matrix-to-quaternion conversion.
struct PoseKey {
  Vec3 position = Vec3::Zero();
  UnitQuaternion orientation;

  static PoseKey from_pose(const CameraPose& pose);
};

/// weights.position * d_pos + weights.orientation * d_ori. Default weights sum
/// meters and radians directly.
double view_distance(const PoseKey& a, const PoseKey& b, DistanceWeights weights = {});
double view_distance(const CameraPose& a, const CameraPose& b, DistanceWeights weights = {});

/// Camera at `eye` looking at `target`; `up` is the world up direction.
CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

}  // namespace cdviews
