#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "generators.hpp"
#include "inbore/se3.hpp"

using namespace inbore;
using inbore::testing::Gen;

namespace {

// Truncated exponential series of skew(w); independent of Rodrigues.
Mat3 exp_series(const Vec3& w, int terms = 20) {
  const Mat3 k = skew(w);
  Mat3 sum = Mat3::Identity(), term = Mat3::Identity();
  for (int n = 1; n < terms; ++n) {
    term = term * k / static_cast<double>(n);
    sum += term;
  }
  return sum;
}

void expect_rotation_valid(const Rotation& r) {
  const Mat3& m = r.matrix();
  EXPECT_LT((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(m.determinant(), 1.0, 1e-9);
}

}  // namespace

TEST(RotMat, ZeroAngleIsIdentity) {
  EXPECT_TRUE(rot_mat(Vec3::UnitZ(), 0.0).matrix().isApprox(Mat3::Identity(), 1e-15));
}

TEST(RotMat, QuarterTurnAboutXMapsYToZ) {
  const Vec3 y = rot_mat(Vec3::UnitX(), kPi / 2.0) * Vec3::UnitY();
  EXPECT_LT((y - Vec3::UnitZ()).norm(), 1e-15);
}

TEST(RotMat, MatchesExponentialSeries) {
  Gen g(11);
  for (int i = 0; i < 200; ++i) {
    const Vec3 n = g.unit_vector();
    const double th = g.uniform(-kPi, kPi);
    const Mat3 oracle = exp_series(n * th, 30);
    EXPECT_LT((rot_mat(n, th).matrix() - oracle).cwiseAbs().maxCoeff(), 1e-12) << "case " << i;
  }
}

TEST(RotMat, OutputAlwaysInSO3) {
  Gen g(12);
  for (int i = 0; i < 500; ++i) expect_rotation_valid(rot_mat(g.unit_vector(), g.uniform(-10.0, 10.0)));
}

TEST(RotMat, RejectsNonUnitAxis) {
  EXPECT_THROW(rot_mat(Vec3(1.0, 1.0, 0.0), 0.3), std::invalid_argument);
  EXPECT_THROW(rot_mat(Vec3::Zero(), 0.3), std::invalid_argument);
}

TEST(Rotation, FromMatrixValidates) {
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = -1.0;  // reflection
  EXPECT_THROW(Rotation::from_matrix(bad), std::invalid_argument);
  bad = Mat3::Identity() * 1.01;
  EXPECT_THROW(Rotation::from_matrix(bad), std::invalid_argument);
  EXPECT_NO_THROW(Rotation::from_matrix(rot_mat(Vec3::UnitY(), 0.4).matrix()));
}

TEST(Rotation, QuaternionRoundTrip) {
  Gen g(13);
  for (int i = 0; i < 200; ++i) {
    const Rotation r = g.rotation();
    const Eigen::Vector4d q = r.quaternion_wxyz();
    EXPECT_GE(q[0], 0.0);
    const Rotation back = Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
    EXPECT_LT((back.matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(Rotation::from_quaternion(1.0, 0.1, 0.0, 0.0), std::invalid_argument);
}

TEST(Compose, IdentityIsNeutral) {
  Gen g(14);
  const Pose p = g.pose(1.0);
  EXPECT_TRUE((Pose::identity() * p).matrix().isApprox(p.matrix(), 1e-15));
}

TEST(Compose, InverseGivesIdentity) {
  Gen g(15);
  for (int i = 0; i < 100; ++i) {
    const Pose p = g.pose(2.0);
    EXPECT_LT((compose(p, inverse(p)).matrix() - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Compose, MatchesDenseMatrixProduct) {
  Gen g(16);
  for (int i = 0; i < 100; ++i) {
    const Pose a = g.pose(1.0), b = g.pose(1.0);
    EXPECT_LT((compose(a, b).matrix() - a.matrix() * b.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Compose, Associative) {
  Gen g(17);
  for (int i = 0; i < 100; ++i) {
    const Pose a = g.pose(1.0), b = g.pose(1.0), c = g.pose(1.0);
    EXPECT_LT((((a * b) * c).matrix() - (a * (b * c)).matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PoseFromMatrix, RejectsBadBottomRow) {
  Mat4 m = Mat4::Identity();
  m(3, 0) = 0.1;
  EXPECT_THROW(Pose::from_matrix(m), std::invalid_argument);
}

TEST(PoseError, SamePoseIsZero) {
  Gen g(18);
  const Pose p = g.pose(1.0);
  const PoseError e = pose_error(p, p);
  EXPECT_EQ(e.position.norm(), 0.0);
  EXPECT_EQ(e.orientation.norm(), 0.0);
}

TEST(PoseError, TenDegreesAboutOwnXIsRecovered) {
  Gen g(19);
  for (int i = 0; i < 50; ++i) {
    const Pose p = g.pose(1.0);
    const Pose tilted(p.rotation() * rot_mat(Vec3::UnitX(), deg2rad(10.0)), p.translation());
    EXPECT_NEAR(pose_error(tilted, p).orientation_norm(), deg2rad(10.0), 1e-6);
  }
}

TEST(PoseError, TranslationOnly) {
  Gen g(20);
  const Pose p = g.pose(1.0);
  const Vec3 d(0.01, -0.02, 0.03);
  const PoseError e = pose_error(Pose(p.rotation(), p.translation() + d), p);
  EXPECT_LT((e.position - d).norm(), 1e-15);
  EXPECT_EQ(e.orientation.norm(), 0.0);
}

TEST(PoseError, RotatingCurrentByErrorAlignsZAxes) {
  Gen g(21);
  for (int i = 0; i < 100; ++i) {
    const Pose a = g.pose(1.0), b = g.pose(1.0);
    const PoseError e = pose_error(a, b);
    const double ang = e.orientation.norm();
    ASSERT_GT(ang, 0.0);
    const Vec3 moved = rot_mat(e.orientation / ang, ang) * b.rotation().z_axis();
    EXPECT_LT((moved - a.rotation().z_axis()).norm(), 1e-9);
  }
}

TEST(PoseError, MagnitudeWithinZeroToPi) {
  Gen g(22);
  for (int i = 0; i < 300; ++i) {
    const double m = pose_error(g.pose(1.0), g.pose(1.0)).orientation_norm();
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, kPi + 1e-12);
  }
}

TEST(PoseError, AntiparallelAxesGivePiAboutOrthogonalAxis) {
  const Pose up;
  const Pose down(rot_mat(Vec3::UnitX(), kPi), Vec3::Zero());
  const PoseError e = pose_error(down, up);
  EXPECT_NEAR(e.orientation_norm(), kPi, 1e-12);
  EXPECT_NEAR(e.orientation.dot(Vec3::UnitZ()), 0.0, 1e-12);
  // Deterministic choice.
  EXPECT_TRUE(e.orientation.isApprox(pose_error(down, up).orientation));
}

TEST(PoseError, InvariantToNeedleRoll) {
  Gen g(23);
  for (int i = 0; i < 200; ++i) {
    const Pose a = g.pose(1.0), b = g.pose(1.0);
    const Pose a_roll(a.rotation() * rot_mat(Vec3::UnitZ(), g.uniform(-kPi, kPi)), a.translation());
    const Pose b_roll(b.rotation() * rot_mat(Vec3::UnitZ(), g.uniform(-kPi, kPi)), b.translation());
    const PoseError e0 = pose_error(a, b), e1 = pose_error(a_roll, b_roll);
    EXPECT_LT((e0.orientation - e1.orientation).norm(), 1e-9);
    EXPECT_LT((e0.position - e1.position).norm(), 1e-12);
  }
}

TEST(PoseError, MagnitudeSymmetric) {
  Gen g(24);
  for (int i = 0; i < 200; ++i) {
    const Pose a = g.pose(1.0), b = g.pose(1.0);
    EXPECT_NEAR(pose_error(a, b).orientation_norm(), pose_error(b, a).orientation_norm(), 1e-12);
  }
}

TEST(Adjoint, MapsBodyTwistsToSpaceTwists) {
  Gen g(25);
  const Pose t = g.pose(1.0);
  const Vec6 vb = g.vector<6>(1.0);
  // [v; ω] in body coordinates -> space: ω_s = Rω_b, v_s = Rv_b + p × Rω_b.
  const Vec3 ws = t.rotation() * Vec3(vb.tail<3>());
  const Vec3 vs = t.rotation() * Vec3(vb.head<3>()) + t.translation().cross(ws);
  const Vec6 out = adjoint(t) * vb;
  EXPECT_LT((out.head<3>() - vs).norm(), 1e-12);
  EXPECT_LT((out.tail<3>() - ws).norm(), 1e-12);
}

TEST(AlignZAxis, ZAxisMatches) {
  Gen g(26);
  for (int i = 0; i < 200; ++i) {
    const Vec3 n = g.unit_vector();
    EXPECT_LT((align_z_axis(n).z_axis() - n).norm(), 1e-12);
  }
  EXPECT_LT((align_z_axis(-Vec3::UnitZ()).z_axis() + Vec3::UnitZ()).norm(), 1e-12);
}

TEST(PoseJson, RoundTripAndSchema) {
  Gen g(27);
  const Pose p = g.pose(1.0);
  const nlohmann::json j = p;
  ASSERT_TRUE(j.contains("t"));
  ASSERT_TRUE(j.contains("q"));
  EXPECT_EQ(j["t"].size(), 3u);
  EXPECT_EQ(j["q"].size(), 4u);
  const Pose back = j.get<Pose>();
  EXPECT_LT((back.matrix() - p.matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoseJson, NormalizesNearUnitQuaternion) {
  const nlohmann::json j = {{"t", {0.0, 0.0, 0.0}}, {"q", {1.0 + 5e-7, 0.0, 0.0, 0.0}}};
  EXPECT_NO_THROW(j.get<Pose>());
  const nlohmann::json bad = {{"t", {0.0, 0.0, 0.0}}, {"q", {1.1, 0.0, 0.0, 0.0}}};
  EXPECT_THROW(bad.get<Pose>(), std::invalid_argument);
  const nlohmann::json short_t = {{"t", {0.0, 0.0}}, {"q", {1.0, 0.0, 0.0, 0.0}}};
  EXPECT_THROW(short_t.get<Pose>(), std::invalid_argument);
}
