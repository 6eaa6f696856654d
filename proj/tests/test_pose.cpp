#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "cdviews/error.hpp"
#include "cdviews/pose.hpp"
#include "test_support.hpp"

using namespace cdviews;
using cdviews::testing::random_rotation;

namespace {

// Geodesic angle from the trace of the relative rotation.
double trace_angle(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

std::array<double, 4> random_components(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return {n(rng), n(rng), n(rng), n(rng)};
}

UnitQuaternion quat_of(const std::array<double, 4>& c, double sign = 1.0) {
  return UnitQuaternion::from_components(sign * c[0], sign * c[1], sign * c[2], sign * c[3]);
}

UnitQuaternion random_quat(std::mt19937_64& rng) { return quat_of(random_components(rng)); }

}  // namespace

TEST_CASE("closed-form conversions") {
  const auto id = quat_from_rotation(Mat3::Identity());
  CHECK(id.components() == std::array<double, 4>{0, 0, 0, 1});

  const Mat3 rz = Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitZ()).toRotationMatrix();
  const auto q = quat_from_rotation(rz);
  CHECK(q.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(q.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(q.z() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(q.w()) < 1e-12);
}

TEST_CASE("quat_from_rotation rejects improper or skewed matrices") {
  Mat3 reflect = Mat3::Identity();
  reflect(0, 0) = -1;
  CHECK_THROWS_AS(quat_from_rotation(reflect), Error);
  Mat3 skew = Mat3::Identity();
  skew(0, 1) = 1e-3;
  try {
    quat_from_rotation(skew);
    FAIL("expected NonOrthonormalRotation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonOrthonormalRotation);
  }
  // Within tolerance is accepted without re-orthonormalization.
  Mat3 nearly = Mat3::Identity();
  nearly(0, 1) = 1e-6;
  CHECK_NOTHROW(quat_from_rotation(nearly));
}

TEST_CASE("round trip on random rotations") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = random_rotation(rng);
    const auto q = quat_from_rotation(r);
    CHECK(q.w() >= 0.0);
    const Mat3 back = rotation_from_quat(q);
    CHECK((back - r).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(orientation_distance(q, quat_from_rotation(back)) < 1e-6);
  }
}

TEST_CASE("orientation distance closed forms") {
  const auto id = UnitQuaternion::from_components(0, 0, 0, 1);
  const double s = std::sin(std::numbers::pi / 4), c = std::cos(std::numbers::pi / 4);
  const auto z90 = UnitQuaternion::from_components(0, 0, s, c);
  CHECK(std::abs(orientation_distance(id, z90) - std::numbers::pi / 2) < 1e-9);
  CHECK(orientation_distance(id, id) == 0.0);
  // The negated identity canonicalizes back; the distance is 0 either way.
  CHECK(orientation_distance(id, UnitQuaternion::from_components(0, 0, 0, -1)) == 0.0);
}

TEST_CASE("orientation distance matches the trace oracle") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 a = random_rotation(rng), b = random_rotation(rng);
    const double d = orientation_distance(quat_from_rotation(a), quat_from_rotation(b));
    CHECK(std::abs(d - trace_angle(a, b)) < 1e-6);
  }
}

TEST_CASE("orientation distance properties over 10k samples") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto raw = random_components(rng);
    const auto p = quat_of(raw), q = random_quat(rng), r = random_quat(rng);
    const double pq = orientation_distance(p, q);
    REQUIRE(pq >= 0.0);
    REQUIRE(pq <= std::numbers::pi);
    REQUIRE(pq == orientation_distance(q, p));
    const auto& c = p.components();
    REQUIRE(orientation_distance(quat_of(raw, -1.0), q) == pq);
    REQUIRE(orientation_distance(q, quat_of(raw, -1.0)) == pq);
    // The formula itself is sign-blind: 2 acos|p.q| with p negated by hand.
    double dot = 0.0;
    for (int j = 0; j < 4; ++j) dot += -c[j] * q.components()[j];
    REQUIRE(std::abs(2.0 * std::acos(std::min(1.0, std::abs(dot))) - pq) < 1e-12);
    REQUIRE(pq <= orientation_distance(p, r) + orientation_distance(r, q) + 1e-9);
  }
}

TEST_CASE("position and view distance") {
  CHECK(position_distance(Vec3(0, 0, 0), Vec3(3, 4, 0)) == 5.0);
  CHECK(position_distance(Vec3(1, 2, 3), Vec3(1, 2, 3)) == 0.0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng)), c(u(rng), u(rng), u(rng));
    CHECK(position_distance(a, c) <= position_distance(a, b) + position_distance(b, c) + 1e-12);
  }

  CameraPose a, b;
  CHECK(view_distance(a, b) == 0.0);
  b.position = Vec3(0.3, 0, 0);
  CHECK(view_distance(a, b) == doctest::Approx(0.3).epsilon(1e-12));
  b.position = Vec3::Zero();
  b.rotation = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  CHECK(std::abs(view_distance(a, b) - std::numbers::pi / 2) < 1e-9);
  CHECK(view_distance(a, b, {.position = 1, .orientation = 2}) ==
        doctest::Approx(std::numbers::pi).epsilon(1e-9));

  for (int i = 0; i < 200; ++i) {
    CameraPose p{Vec3(u(rng), u(rng), u(rng)), random_rotation(rng)};
    CameraPose q{Vec3(u(rng), u(rng), u(rng)), random_rotation(rng)};
    CHECK(view_distance(p, q) == doctest::Approx(view_distance(q, p)).epsilon(1e-12));
    CHECK(view_distance(p, q) > 0.0);
    CHECK(view_distance(p, p) == 0.0);
  }
}

TEST_CASE("extrinsic round trip, inverse and look_at") {
  std::mt19937_64 rng(5);
  const CameraPose p{Vec3(1, -2, 0.5), random_rotation(rng)};
  const auto back = CameraPose::from_extrinsic(p.to_extrinsic());
  CHECK((back.rotation - p.rotation).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.position == p.position);

  // Inverse checked against a general 4x4 inverse.
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation;
  m.topRightCorner<3, 1>() = p.position;
  const Eigen::Matrix4d inv = m.inverse();
  const auto pi = p.inverse();
  CHECK((pi.rotation - inv.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pi.position - inv.topRightCorner<3, 1>()).cwiseAbs().maxCoeff() < 1e-12);

  const auto cam = look_at(Vec3(0, 0, 1), Vec3(2, 0, 1));
  CHECK((cam.forward() - Vec3::UnitX()).norm() < 1e-12);
  CHECK(orthonormality_error(cam.rotation) < 1e-12);
  CHECK(cam.rotation.determinant() == doctest::Approx(1.0));
}
