#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "generators.hpp"
#include "inbore/transmission.hpp"

using namespace inbore;
using inbore::testing::Gen;

namespace {

// Coupling entries typed in from the prototype's published matrices.
Mat8 published_coupling() {
  Mat8 m = Mat8::Zero();
  m(0, 0) = 0.637e-3;
  m(1, 1) = 0.637e-3;
  m(2, 2) = 1.27e-3;
  m(3, 3) = -5.49e-3;
  Eigen::Matrix4d c;
  c << -0.21, 0, 0, 0,
       0.15, 0.20, 0, 0,
       -0.29, -0.20, 0.26, 0,
       2.4e-4, 3.0e-5, -2.3e-4, 2.6e-4;
  m.bottomRightCorner<4, 4>() = c;
  return m;
}

}  // namespace

TEST(Coupling, ZeroMapsToZero) {
  const CouplingModel c = crane8_coupling();
  EXPECT_EQ(actuator_to_joint(c, Vec8::Zero()).norm(), 0.0);
  EXPECT_EQ(joint_to_actuator(c, JointConfig::Zero()).norm(), 0.0);
}

TEST(Coupling, UnitMotorOneGivesPublishedGear) {
  const CouplingModel c = crane8_coupling();
  const JointConfig q = actuator_to_joint(c, Vec8::Unit(0));
  EXPECT_DOUBLE_EQ(q[0], 0.637e-3);
  EXPECT_EQ(q.tail<7>().norm(), 0.0);
}

TEST(Coupling, UnitMotorFiveGivesPublishedFirstColumn) {
  const CouplingModel c = crane8_coupling();
  const JointConfig q = actuator_to_joint(c, Vec8::Unit(4));
  EXPECT_DOUBLE_EQ(q[4], -0.21);
  EXPECT_DOUBLE_EQ(q[5], 0.15);
  EXPECT_DOUBLE_EQ(q[6], -0.29);
  EXPECT_DOUBLE_EQ(q[7], 2.4e-4);
  EXPECT_EQ(q.head<4>().norm(), 0.0);
}

TEST(Coupling, MatrixEqualsPublishedBlocks) {
  EXPECT_EQ((crane8_coupling().matrix() - published_coupling()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Coupling, RoundTripIdentity) {
  const CouplingModel c = crane8_coupling();
  Gen g(51);
  for (int k = 0; k < 1000; ++k) {
    const JointConfig q = g.vector<8>(2.0);
    EXPECT_LT((actuator_to_joint(c, joint_to_actuator(c, q)) - q).cwiseAbs().maxCoeff(), 1e-12);
    const Vec8 th = g.vector<8>(100.0);
    const Vec8 back = joint_to_actuator(c, actuator_to_joint(c, th));
    EXPECT_LT(((back - th).array() / th.array().abs().max(1.0)).abs().maxCoeff(), 1e-12);
  }
}

TEST(Coupling, InverseMatchesDenseLuSolve) {
  const CouplingModel c = crane8_coupling();
  const Mat8 m = published_coupling();
  for (int i = 0; i < 8; ++i) {
    const Vec8 oracle = m.fullPivLu().solve(JointConfig::Unit(i));
    const Vec8 th = joint_to_actuator(c, JointConfig::Unit(i));
    EXPECT_LT((th - oracle).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, oracle.cwiseAbs().maxCoeff())) << i;
    EXPECT_LT((c.inverse_matrix() * JointConfig::Unit(i) - oracle).cwiseAbs().maxCoeff(),
              1e-9 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
  }
}

TEST(Coupling, RejectsStructureViolations) {
  Mat4d mb = Mat4d::Identity(), mc = Mat4d::Identity();
  mb(0, 1) = 0.1;
  EXPECT_THROW(CouplingModel(mb, mc), std::invalid_argument);
  mb = Mat4d::Identity();
  mc(0, 3) = 0.1;
  EXPECT_THROW(CouplingModel(mb, mc), std::invalid_argument);
  mc = Mat4d::Identity();
  mc(2, 2) = 0.0;
  EXPECT_THROW(CouplingModel(mb, mc), std::invalid_argument);
}

TEST(CableStretch, ZeroForceZeroStretch) {
  CableParams p;
  p.cross_section = 1e-6;
  const CableStretch s = cable_stretch(p, 0.0);
  EXPECT_EQ(s.length, 0.0);
  EXPECT_EQ(s.angle, 0.0);
}

TEST(CableStretch, LinearInForceAndInverseInRadius) {
  Gen g(52);
  for (int k = 0; k < 100; ++k) {
    CableParams p{g.uniform(50e9, 200e9), g.uniform(0.1, 1.0), g.uniform(1e-7, 1e-6), g.uniform(0.002, 0.01)};
    const double f = g.uniform(0.0, 100.0);
    const CableStretch a = cable_stretch(p, f), b = cable_stretch(p, 2.0 * f);
    EXPECT_NEAR(b.length, 2.0 * a.length, 1e-15);
    EXPECT_NEAR(b.angle, 2.0 * a.angle, 1e-13);
    EXPECT_NEAR(a.length, f * p.nominal_length / (p.cross_section * p.youngs_modulus), 1e-15);
    CableParams p2 = p;
    p2.capstan_radius *= 2.0;
    EXPECT_NEAR(cable_stretch(p2, f).angle, a.angle / 2.0, 1e-13);
  }
}

TEST(CableStretch, RejectsNegativeForceAndBadParams) {
  CableParams p;
  p.cross_section = 1e-6;
  EXPECT_THROW(cable_stretch(p, -1.0), std::invalid_argument);
  p.cross_section = 0.0;
  EXPECT_THROW(cable_stretch(p, 1.0), std::invalid_argument);
}

TEST(SeriesStiffness, PublishedLinkAndCableValues) { EXPECT_NEAR(series_stiffness(1.79, 0.80), 0.553, 0.005); }

TEST(SeriesStiffness, EqualSpringsHalve) { EXPECT_DOUBLE_EQ(series_stiffness(3.0, 3.0), 1.5); }

TEST(SeriesStiffness, RigidPartnerLimit) { EXPECT_NEAR(series_stiffness(0.8, 1e12), 0.8, 1e-9); }

TEST(SeriesStiffness, NeverAboveSofterSpring) {
  Gen g(53);
  for (int k = 0; k < 1000; ++k) {
    const double a = std::exp(g.uniform(-5, 5)), b = std::exp(g.uniform(-5, 5));
    EXPECT_LE(series_stiffness(a, b), std::min(a, b));
  }
  EXPECT_THROW(series_stiffness(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(series_stiffness(1.0, -1.0), std::invalid_argument);
}

TEST(PulleyLoad, Examples) {
  EXPECT_EQ(pulley_load(10.0, 0.0), 0.0);
  EXPECT_NEAR(pulley_load(10.0, kPi), 10.0, 1e-12);
  Gen g(54);
  for (int k = 0; k < 100; ++k) {
    const double th = g.uniform(0.1, 2 * kPi - 0.1);
    EXPECT_NEAR(pulley_load(117.0 / std::sin(th / 2), th), 117.0, 1e-9);
  }
}

TEST(TransmissionRating, DefaultRatingsOrderAndRatio) {
  const RobotModel m = crane8_model();
  const TransmissionModel t = crane8_transmission(m);
  double r[4];
  for (int k = 0; k < 4; ++k) {
    const JointSpec& j = m.joint(4 + k);
    r[k] = transmission_rating(t.pulleys[static_cast<std::size_t>(k)], j.lower, j.upper, j.kind);
  }
  EXPECT_NEAR(r[0], 2.5, 1e-9);
  EXPECT_NEAR(r[1], 1.25, 1e-9);
  EXPECT_NEAR(r[2], 1.25, 1e-9);
  EXPECT_NEAR(r[3], 50.0, 1e-9);
  EXPECT_NEAR(r[0] / r[1], 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(r[1], r[2]);
}

TEST(TransmissionRating, SinglePointRangeMatchesFormula) {
  Gen g(55);
  for (int k = 0; k < 100; ++k) {
    PulleyGeometry pg{g.uniform(10, 200), g.uniform(0.5, 5.0), g.uniform(0.005, 0.05)};
    const double q = g.uniform(-0.4, 0.4);
    const double wrap = q + pg.wrap_offset;
    const double expect = pg.rated_load / std::sin(wrap / 2) * pg.joint_radius;
    EXPECT_NEAR(transmission_rating(pg, q, q, JointKind::Revolute), expect, 1e-9 * expect);
    EXPECT_NEAR(transmission_rating(pg, q, q, JointKind::Prismatic), expect / pg.joint_radius, 1e-9 * expect);
  }
}

TEST(TransmissionRating, WideningRangeNeverIncreasesRating) {
  Gen g(56);
  for (int k = 0; k < 200; ++k) {
    PulleyGeometry pg{g.uniform(10, 200), g.uniform(0.5, 5.0), g.uniform(0.005, 0.05)};
    const double lo = g.uniform(-1.0, 0.0), hi = g.uniform(0.0, 1.0);
    const double grow = g.uniform(0.0, 0.5);
    EXPECT_LE(transmission_rating(pg, lo - grow, hi + grow, JointKind::Revolute),
              transmission_rating(pg, lo, hi, JointKind::Revolute) * (1 + 1e-12));
  }
}

TEST(TransmissionRating, UnloadedBearingIsInfinite) {
  PulleyGeometry pg{100.0, -1.0, 0.01};  // wrap stays <= 0 for q in [-1, 0.5]
  EXPECT_TRUE(std::isinf(transmission_rating(pg, -1.0, 0.5, JointKind::Revolute)));
  EXPECT_THROW(transmission_rating(pg, 1.0, 0.0, JointKind::Revolute), std::invalid_argument);
}

TEST(Statics, DefaultCableStiffnessAtReference) {
  const RobotModel m = crane8_model();
  const TransmissionModel t = crane8_transmission(m);
  EXPECT_NEAR(ee_cable_stiffness(t, m, JointConfig::Zero(), Vec3::UnitZ()), 800.0, 1e-6);
  EXPECT_NEAR(series_stiffness(t.link_stiffness, 800.0) / 1000.0, 0.553, 0.005);
}

TEST(Statics, DeflectionIsLinearInWrench) {
  const RobotModel m = crane8_model();
  const TransmissionModel t = crane8_transmission(m);
  Gen g(57);
  for (int k = 0; k < 50; ++k) {
    const JointConfig q = g.config(m);
    const Vec6 w = g.vector<6>(1.0);
    const StaticDeflection a = static_deflection(t, m, q, w), b = static_deflection(t, m, q, 3.0 * w);
    EXPECT_LT((b.dq - 3.0 * a.dq).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((b.link_offset - 3.0 * a.link_offset).norm(), 1e-12);
    EXPECT_EQ(a.dq.head<4>().norm(), 0.0);  // base stages are rigid
  }
}

TEST(Statics, DeflectedTipMatchesComplianceOracle) {
  const RobotModel m = crane8_model();
  const TransmissionModel t = crane8_transmission(m);
  Gen g(58);
  const JointConfig q = g.config(m, 0.1);
  Vec6 w = Vec6::Zero();
  w[2] = 1.0;
  const StaticDeflection d = static_deflection(t, m, q, w);
  // dq = C·Jᵇᵀ·w evaluated densely.
  const Jacobian jb = jacobian(m, q, JacobianFrame::Body);
  const JointConfig oracle = joint_compliance(t, m).asDiagonal() * (jb.transpose() * w);
  EXPECT_LT((d.dq - oracle).cwiseAbs().maxCoeff(), 1e-15);
  const Pose tip = deflected_fk(m, q, d);
  EXPECT_LT((tip.translation() - (fk(m, q + d.dq) * d.link_offset)).norm(), 1e-15);
}

TEST(TransmissionJson, RoundTrip) {
  const RobotModel m = crane8_model();
  const TransmissionModel t = crane8_transmission(m);
  const nlohmann::json j = t;
  const TransmissionModel back = transmission_from_json(j, TransmissionModel{});
  EXPECT_EQ((back.coupling.matrix() - t.coupling.matrix()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(back.compliance_scale, t.compliance_scale);
  EXPECT_DOUBLE_EQ(back.link_stiffness, t.link_stiffness);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(back.cables[k].nominal_length, t.cables[k].nominal_length);
    EXPECT_DOUBLE_EQ(back.pulleys[k].joint_radius, t.pulleys[k].joint_radius);
  }
}
