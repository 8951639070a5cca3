#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "flowgs/geometry.hpp"
#include "test_util.hpp"

namespace flowgs {
namespace {

using testing::small_camera;

TEST(Pose, StoresUnitQuaternionAndComposes) {
  std::mt19937_64 rng(1);
  const PoseSE3 a(QuatVec(2.0, 0.0, 0.0, 0.0), Eigen::Vector3d(1, 2, 3));
  EXPECT_DOUBLE_EQ(a.rotation().norm(), 1.0);
  const PoseSE3 b = testing::small_motion(rng, 0.4, 1.0);
  const PoseSE3 c = testing::small_motion(rng, 0.7, 2.0);
  const Eigen::Vector3d p(0.3, -0.2, 1.7);
  EXPECT_TRUE((b * c).apply(p).isApprox(b.apply(c.apply(p)), 1e-12));
  EXPECT_TRUE((b * b.inverse()).apply(p).isApprox(p, 1e-12));
  EXPECT_NEAR((b.apply(b.center())).norm(), 0.0, 1e-12);
}

TEST(Pose, RotationMatrixMatchesEigen) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const PoseSE3 p(testing::random_unit_quat(rng), Eigen::Vector3d::Zero());
    EXPECT_TRUE(p.rotation_matrix().isApprox(p.rotation().toRotationMatrix(), 1e-14));
  }
}

TEST(Projection, RoundTripsThroughUnproject) {
  const auto k = small_camera(64, 48);
  std::mt19937_64 rng(3);
  const PoseSE3 pose = testing::small_motion(rng, 0.3, 0.5);
  const Eigen::Vector2d px(12.25, 30.5);
  const Eigen::Vector3d w = unproject(px, 2.5, pose, k);
  EXPECT_NEAR(pose.apply(w).z(), 2.5, 1e-12);
  EXPECT_TRUE(project(w, pose, k).isApprox(px, 1e-12));
}

TEST(Projection, PrincipalPointAtIntegerPixel) {
  CameraIntrinsics k{100.0, 100.0, 64.0, 48.0, 128, 96};
  EXPECT_TRUE(project(Eigen::Vector3d(0, 0, 3), PoseSE3::identity(), k).isApprox(Eigen::Vector2d(64, 48)));
  EXPECT_TRUE(project(Eigen::Vector3d(0.3, -0.6, 3), PoseSE3::identity(), k)
                  .isApprox(Eigen::Vector2d(74, 28)));
}

TEST(Projection, RejectsPointsBehindCamera) {
  const auto k = small_camera();
  try {
    project(Eigen::Vector3d(0, 0, -1), PoseSE3::identity(), k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DepthBehindCamera);
  }
  EXPECT_THROW(project(Eigen::Vector3d(0, 0, 0), PoseSE3::identity(), k), Error);
  try {
    unproject(Eigen::Vector2d(1, 1), 0.0, PoseSE3::identity(), k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidDepth);
  }
}

TEST(Intrinsics, ValidateRejectsBadValues) {
  CameraIntrinsics k = small_camera();
  EXPECT_NO_THROW(k.validate());
  k.fx = 0.0;
  EXPECT_THROW(k.validate(), Error);
  k = small_camera();
  k.cx = k.width + 1.0;
  EXPECT_THROW(k.validate(), Error);
  k = small_camera();
  EXPECT_TRUE((k.matrix() * k.inverse_matrix()).isApprox(Eigen::Matrix3d::Identity(), 1e-14));
}

TEST(RelativePose, MapsCameraFrames) {
  std::mt19937_64 rng(4);
  const PoseSE3 a = testing::small_motion(rng, 0.5, 1.0);
  const PoseSE3 b = testing::small_motion(rng, 0.5, 1.0);
  const Eigen::Vector3d w(0.1, 0.4, 3.0);
  EXPECT_TRUE(relative_pose(a, b).apply(a.apply(w)).isApprox(b.apply(w), 1e-12));
}

TEST(Fundamental, SatisfiesEpipolarConstraint) {
  const auto k = small_camera(64, 48);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const PoseSE3 a = testing::small_motion(rng, 0.1, 0.3);
  const PoseSE3 b = testing::small_motion(rng, 0.1, 0.3);
  const FundamentalMatrix f = fundamental_from_poses(a, b, k);
  EXPECT_NEAR(f.f.norm(), 1.0, 1e-12);
  EXPECT_NEAR(f.f.determinant(), 0.0, 1e-12);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d w(u(rng), u(rng), 3.0 + u(rng));
    const Eigen::Vector2d xa = project(w, a, k), xb = project(w, b, k);
    EXPECT_NEAR(xb.homogeneous().dot(f.f * xa.homogeneous()), 0.0, 1e-10);
    EXPECT_LT(sampson_distance(xa, xb, f), 1e-16);
  }
}

TEST(Fundamental, DegenerateBaselineThrows) {
  const auto k = small_camera();
  const PoseSE3 a = PoseSE3::identity();
  const PoseSE3 b(Eigen::Quaterniond(Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitY())),
                  Eigen::Vector3d::Zero());
  try {
    fundamental_from_poses(a, b, k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateBaseline);
  }
}

TEST(Sampson, MatchesHandComputedValue) {
  // Pure x-translation with identity K: F = [t]x, epipolar lines are rows.
  FundamentalMatrix f;
  f.f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  const Eigen::Vector2d x(2.0, 1.0), xp(5.0, 3.0);
  const double r = xp.homogeneous().dot(f.f * x.homogeneous());  // = y - y' = -2
  ASSERT_DOUBLE_EQ(r, -2.0);
  // Fx = (0, -1, 1), F^T x' = (0, 1, -3): denominator 1 + 1 = 2.
  EXPECT_DOUBLE_EQ(sampson_distance(x, xp, f), 4.0 / 2.0);
}

TEST(Sampson, ZeroMatrixGivesInfinity) {
  FundamentalMatrix f;
  EXPECT_TRUE(std::isinf(sampson_distance(Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4), f)));
}

TEST(Quaternion, MatrixPartialsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  const QuatVec q = testing::random_unit_quat(rng);
  const auto partials = quat_matrix_partials(q);
  for (int a = 0; a < 4; ++a) {
    QuatVec qp = q, qm = q;
    qp[a] += 1e-6;
    qm[a] -= 1e-6;
    const Eigen::Matrix3d num = (quat_to_matrix(qp) - quat_to_matrix(qm)) / 2e-6;
    EXPECT_TRUE(partials[a].isApprox(num, 1e-8)) << a;
  }
}

TEST(Quaternion, RotationGradientChainsThroughNormalization) {
  std::mt19937_64 rng(7);
  const QuatVec q = 1.7 * testing::random_unit_quat(rng);
  Eigen::Matrix3d w = Eigen::Matrix3d::Random();
  const QuatVec g = rotation_grad_to_quat(w, q);
  for (int a = 0; a < 4; ++a) {
    QuatVec qp = q, qm = q;
    qp[a] += 1e-6;
    qm[a] -= 1e-6;
    const double num = ((w.array() * quat_to_matrix(qp.normalized()).array()).sum() -
                        (w.array() * quat_to_matrix(qm.normalized()).array()).sum()) / 2e-6;
    EXPECT_NEAR(g[a], num, 1e-8);
  }
  EXPECT_NEAR(g.dot(q), 0.0, 1e-12);
}

TEST(RotationAngle, IsAccurateForTinyAngles) {
  const Eigen::Quaterniond a = Eigen::Quaterniond::Identity();
  const Eigen::Quaterniond b(Eigen::AngleAxisd(1e-9, Eigen::Vector3d::UnitZ()));
  EXPECT_NEAR(rotation_angle(a, b), 1e-9, 1e-20);
  const Eigen::Quaterniond c(Eigen::AngleAxisd(2.5, Eigen::Vector3d::UnitX()));
  EXPECT_NEAR(rotation_angle(a, c), 2.5, 1e-12);
  const Eigen::Quaterniond neg(-c.w(), -c.x(), -c.y(), -c.z());
  EXPECT_NEAR(rotation_angle(c, neg), 0.0, 1e-12);
}

}  // namespace
}  // namespace flowgs
