#include <gtest/gtest.h>

#include "generators.hpp"
#include "inbore/dexterity.hpp"
#include "inbore/ik_planning.hpp"

using namespace inbore;
using inbore::testing::Gen;

namespace {

Pose needle_down(const Vec3& p) { return Pose(align_z_axis(Vec3(0.0, 0.0, -1.0)), p); }

Environment open_space() { return default_scene(std::nullopt, 5.0); }

}  // namespace

TEST(SolveIk, AlreadySolvedIsFixedPoint) {
  const RobotModel m = crane8_model();
  Gen g(71);
  for (int k = 0; k < 20; ++k) {
    const JointConfig q = g.config(m, 0.1);
    const IKResult r = solve_ik(m, fk(m, q), q, IKSettings{}, false);
    EXPECT_TRUE(r.success);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(r.q, q);
  }
}

TEST(SolveIk, ConvergesFromPerturbedSeed) {
  const RobotModel m = crane8_model();
  Gen g(72);
  int ok = 0;
  for (int k = 0; k < 50; ++k) {
    const JointConfig q = g.config(m, 0.15);
    JointConfig q0 = q;
    for (int i = 0; i < 7; ++i) q0[i] += g.uniform(-0.05, 0.05);
    const Pose target = fk(m, q);
    const IKResult r = solve_ik(m, target, q0, IKSettings{}, false);
    if (r.success) {
      ++ok;
      const PoseError e = pose_error(target, fk(m, r.q));
      EXPECT_LT(e.position_norm(), 1e-3);
      EXPECT_LT(e.orientation_norm(), deg2rad(1.0));
      EXPECT_TRUE(m.within_limits(r.q));
      EXPECT_EQ(r.q[7], q0[7]);  // insertion is excluded
    }
  }
  EXPECT_GE(ok, 48);
}

TEST(SolveIk, PartitionMovesOnlyNonredundantJoints) {
  const RobotModel m = crane8_model();
  const JointConfig q0 = home_configuration();
  const IKResult r = solve_ik(m, needle_down(fk(m, q0).translation() + Vec3(0.01, 0.01, -0.01)), q0, IKSettings{}, true);
  ASSERT_TRUE(r.success);
  for (int i : m.redundant_indices()) EXPECT_EQ(r.q[i], q0[i]);
  for (int i : m.excluded_indices()) EXPECT_EQ(r.q[i], q0[i]);
}

TEST(SolveIk, UnreachableTargetFailsWithMonotoneTrace) {
  const RobotModel m = crane8_model();
  const IKResult r = solve_ik(m, needle_down(Vec3(2.0, 0.0, 0.0)), home_configuration(), IKSettings{}, false);
  EXPECT_FALSE(r.success);
  EXPECT_TRUE(m.within_limits(r.q));
  for (std::size_t i = 1; i < r.error_trace.size(); ++i) EXPECT_LT(r.error_trace[i], r.error_trace[i - 1]);
}

TEST(SolveIk, RejectsBadSettings) {
  IKSettings s;
  s.damping = 0.0;
  EXPECT_THROW(validate(s), std::invalid_argument);
  s = IKSettings{};
  s.max_iters = 0;
  EXPECT_THROW(validate(s), std::invalid_argument);
}

TEST(NullspaceStep, ZeroAtSolutionAndReference) {
  const RobotModel m = crane8_model();
  Gen g(73);
  const JointConfig q = g.config(m, 0.1);
  EXPECT_LT(nullspace_step(m, fk(m, q), q, q, IKSettings{}).norm(), 1e-12);
}

TEST(NullspaceStep, PullDoesNotMoveTheTask) {
  const RobotModel m = crane8_model();
  Gen g(74);
  for (int k = 0; k < 100; ++k) {
    const JointConfig q = g.config(m, 0.1);
    const JointConfig q_ref = g.config(m, 0.1);
    const JointConfig dq = nullspace_step(m, fk(m, q), q, q_ref, IKSettings{});
    const Eigen::MatrixXd j = task_jacobian(m, q, m.ik_mask());
    Eigen::VectorXd dq_active(j.cols());
    const auto idx = mask_indices(m.ik_mask());
    for (std::size_t i = 0; i < idx.size(); ++i) dq_active[static_cast<Eigen::Index>(i)] = dq[idx[i]];
    EXPECT_LT((j * dq_active).norm(), 1e-10 * (1.0 + dq.norm()));
    EXPECT_LE(dq.cwiseAbs().maxCoeff(), IKSettings{}.step_clamp + 1e-15);
    EXPECT_EQ(dq[7], 0.0);
  }
}

TEST(NullspaceProjector, IdempotentSymmetricAnnihilating) {
  Gen g(75);
  for (int k = 0; k < 50; ++k) {
    Eigen::MatrixXd j(5, 7);
    for (Eigen::Index r = 0; r < j.rows(); ++r)
      for (Eigen::Index c = 0; c < j.cols(); ++c) j(r, c) = g.uniform(-1, 1);
    const Eigen::MatrixXd p = nullspace_projector(j);
    EXPECT_LT((p * p - p).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((j * p).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(p.trace(), 2.0, 1e-9);  // rank 5 out of 7
  }
}

TEST(DampedPinv, MatchesNormalEquations) {
  Gen g(76);
  Eigen::MatrixXd j(5, 6);
  for (Eigen::Index r = 0; r < j.rows(); ++r)
    for (Eigen::Index c = 0; c < j.cols(); ++c) j(r, c) = g.uniform(-1, 1);
  const double lambda = 0.01;
  const Eigen::MatrixXd oracle =
      (j.transpose() * j + lambda * Eigen::MatrixXd::Identity(6, 6)).inverse() * j.transpose();
  EXPECT_LT((damped_pinv(j, lambda) - oracle).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LocalTargets, CountAndOrdering) {
  const Pose nominal = needle_down(Vec3(0.1, 0.0, 0.1));
  EXPECT_EQ(calc_local_targets(nominal, deg2rad(15.0), 1, 1).size(), 2u);
  EXPECT_EQ(calc_local_targets(nominal, deg2rad(15.0), 8, 8).size(), 72u);
  EXPECT_THROW(calc_local_targets(nominal, 0.0, 8, 8), std::invalid_argument);
  EXPECT_THROW(calc_local_targets(nominal, deg2rad(15.0), 0, 8), std::invalid_argument);
}

TEST(LocalTargets, RingAnglesAndSharedPosition) {
  Gen g(77);
  const Pose nominal = g.pose(0.2);
  const int n = 4, mm = 6;
  const double delta = deg2rad(20.0);
  const auto t = calc_local_targets(nominal, delta, n, mm);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= mm; ++j) {
      const Pose& p = t[static_cast<std::size_t>(i * (mm + 1) + j)];
      EXPECT_EQ(p.translation(), nominal.translation());
      const double ang = std::acos(std::clamp(p.rotation().z_axis().dot(nominal.rotation().z_axis()), -1.0, 1.0));
      EXPECT_NEAR(ang, delta * (i + 1) / n, 1e-9);
    }
    // Azimuth 0 and 2π coincide.
    const Pose& first = t[static_cast<std::size_t>(i * (mm + 1))];
    const Pose& last = t[static_cast<std::size_t>(i * (mm + 1) + mm)];
    EXPECT_LT((first.rotation().z_axis() - last.rotation().z_axis()).norm(), 1e-12);
  }
}

TEST(CFeas, TorqueRatioMatchesJacobianTransposeOracle) {
  const RobotModel m = crane8_model();
  Gen g(78);
  const TaskWrench f;
  for (int k = 0; k < 100; ++k) {
    const JointConfig q = g.config(m);
    const Jacobian jb = jacobian(m, q, JacobianFrame::Body);
    Vec6 w;
    w << f.force, f.moment;
    double worst = 0.0;
    for (int i = 0; i < kNumJoints; ++i) worst = std::max(worst, std::abs(jb.col(i).dot(w)) / m.joint(i).effort_limit);
    EXPECT_NEAR(torque_ratio(m, q, f), worst, 1e-12);
    EXPECT_EQ(in_c_feas(m, q, f), worst <= 1.0);
  }
}

TEST(CFeas, ScalingTheWrenchCrossesTheLimit) {
  const RobotModel m = crane8_model();
  const JointConfig q = home_configuration();
  TaskWrench f;
  const double r = torque_ratio(m, q, f);
  ASSERT_GT(r, 0.0);
  f.force *= 0.99 / r;
  f.moment *= 0.99 / r;
  EXPECT_TRUE(in_c_feas(m, q, f));
  f.force *= 1.02 / 0.99;
  f.moment *= 1.02 / 0.99;
  EXPECT_FALSE(in_c_feas(m, q, f));
}

TEST(CFeas, OutsideJointLimitsIsInfeasible) {
  const RobotModel m = crane8_model();
  JointConfig q = home_configuration();
  q[0] = 0.25;
  EXPECT_FALSE(in_c_feas(m, q, TaskWrench{0.0 * Vec3::Ones(), Vec3::Zero()}));
}

TEST(Cost, MatchesFormulaAndDecreasesWithClearance) {
  const RobotModel m = crane8_model();
  const JointConfig q = home_configuration();
  CostWeights w;
  auto with_lump = [&](double gap) {
    // Patient sphere placed `gap` beyond the tool tip capsule clearance.
    const Environment env = default_scene(std::nullopt).with_obstacle(
        {"lump", ObstacleClass::Patient, Sphere{fk(m, q).translation() + Vec3(0.0, 0.0, -0.05 - gap), 0.02}});
    return configuration_cost_terms(m, env, q, q, w, m.ik_mask());
  };
  const CostTerms near = with_lump(0.0), far = with_lump(0.05);
  EXPECT_GT(far.d_patient, near.d_patient);
  EXPECT_LT(far.total, near.total);
  const double oracle = w.alpha / near.manipulability + (1.0 - w.beta) / near.d_bore + w.beta / near.d_patient +
                        w.gamma / (near.d_home + kHomeRegularizer);
  EXPECT_NEAR(near.total, oracle, 1e-9 * oracle);
}

TEST(Cost, SingularWristSaturates) {
  const RobotModel m = crane8_model();
  // Only the prismatic stages: no angular motion, w = 0.
  const CostTerms t = configuration_cost_terms(m, default_scene(std::nullopt), home_configuration(),
                                               home_configuration(), CostWeights{}, mask_of({0, 1, 2}));
  EXPECT_EQ(t.manipulability, 0.0);
  EXPECT_EQ(t.total, kCostInfeasible);
}

TEST(Cost, DistancesAreFloored) {
  const RobotModel m = crane8_model();
  const CostTerms t = configuration_cost_terms(m, default_scene(std::nullopt, 0.01), home_configuration(),
                                               home_configuration(), CostWeights{}, m.ik_mask());
  EXPECT_EQ(t.d_bore, kDistanceFloor);
}

TEST(Manipulability, MatchesDeterminantOracle) {
  const RobotModel m = crane8_model();
  Gen g(79);
  for (int k = 0; k < 50; ++k) {
    const JointConfig q = g.config(m);
    const Jacobian jb = jacobian(m, q, JacobianFrame::Body);
    Eigen::MatrixXd j = jb.block(3, 0, 2, 7);
    const double oracle = std::sqrt(std::max(0.0, (j * j.transpose()).determinant()));
    EXPECT_NEAR(manipulability(m, q, m.ik_mask()), oracle, 1e-12);
  }
}

TEST(IkLoss, InfeasibleReturnsSeed) {
  const RobotModel m = crane8_model();
  const JointConfig q0 = home_configuration();
  const SetupResult r =
      ik_configuration_loss(m, open_space(), needle_down(Vec3(2.0, 0.0, 0.0)), q0, {0.0, 0.0, 0.0}, PlannerSettings{});
  EXPECT_FALSE(r.feasible);
  EXPECT_EQ(r.cost, kCostInfeasible);
  EXPECT_EQ(r.q_star, q0);
}

TEST(IkLoss, FeasibleConeImpliesNominalReachedAndLocalTargets) {
  const RobotModel m = crane8_model();
  const JointConfig q0 = home_configuration();
  const Pose target = needle_down(Vec3(0.1, 0.0, 0.1));
  const Environment env = open_space();
  PlannerSettings s;
  const SetupResult r = ik_configuration_loss(m, env, target, q0, {0.0, 0.0, 0.0}, s, true);
  ASSERT_TRUE(r.feasible) << r.diagnostics.failure;
  const PoseError e = pose_error(target, fk(m, r.q_star));
  EXPECT_LT(e.position_norm(), s.ik.eps_p);
  EXPECT_LT(e.orientation_norm(), s.ik.eps_o);
  EXPECT_EQ(r.diagnostics.local_targets_reached, r.diagnostics.local_targets_total);
  EXPECT_EQ(r.diagnostics.local_targets_total, s.cone_n * (s.cone_m + 1));
  EXPECT_TRUE(in_c_free(env, m, r.q_star));
  EXPECT_TRUE(in_c_feas(m, r.q_star, s.wrench));
  EXPECT_NEAR(r.cost, configuration_cost_terms(m, env, r.q_star, q0, s.weights, m.ik_mask()).total, 1e-9 * r.cost);
  // Smaller cone: still feasible.
  s.delta_adj = deg2rad(5.0);
  EXPECT_TRUE(ik_configuration_loss(m, env, target, q0, {0.0, 0.0, 0.0}, s).feasible);
}

TEST(OptimizeSetup, FeasibleInObstacleFreeScene) {
  const RobotModel m = crane8_model();
  PlannerSettings s;
  s.grid_points = 5;
  const SetupResult r = optimize_setup(m, open_space(), needle_down(Vec3(0.1, 0.0, 0.1)), home_configuration(), s);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.search_values.size(), search_joints(m, s.mobility).size());
  for (std::size_t k = 0; k < r.search_values.size(); ++k)
    EXPECT_EQ(r.q_star[search_joints(m, s.mobility)[k]], r.search_values[k]);
}

TEST(OptimizeSetup, PatientWeightChangesSelectedCell) {
  const RobotModel m = crane8_model();
  const SceneConfig sc = load_scene_config(INBORE_CONFIG_DIR "/scene_asymmetric.json", 1);
  const Pose target = needle_down(Vec3(0.1, 0.0, 0.1));
  PlannerSettings lo, hi;
  lo.weights.beta = 0.1;
  hi.weights.beta = 0.5;
  const SetupResult a = optimize_setup(m, sc.env, target, home_configuration(), lo);
  const SetupResult b = optimize_setup(m, sc.env, target, home_configuration(), hi);
  ASSERT_TRUE(a.feasible);
  ASSERT_TRUE(b.feasible);
  EXPECT_NE(a.search_values, b.search_values);
  // Heavier patient weight never buys less patient clearance.
  EXPECT_GE(b.diagnostics.terms.d_patient, a.diagnostics.terms.d_patient - 1e-12);
}

TEST(OptimizeSetup, TinyBoreIsInfeasible) {
  const RobotModel m = crane8_model();
  PlannerSettings s;
  s.grid_points = 3;
  s.insertion_grid_points = 2;
  const JointConfig q0 = home_configuration();
  const SetupResult r = optimize_setup(m, default_scene(std::nullopt, 0.05), needle_down(Vec3(0.1, 0.0, 0.1)), q0, s);
  EXPECT_FALSE(r.feasible);
  EXPECT_EQ(r.cost, kCostInfeasible);
  EXPECT_EQ(r.q_star, q0);
}

TEST(OptimizeSetup, DeterministicAcrossJobCounts) {
  const RobotModel m = crane8_model();
  const SceneConfig sc = load_scene_config(INBORE_CONFIG_DIR "/scene.json", 1);
  PlannerSettings s;
  s.grid_points = 5;
  const Pose target = needle_down(Vec3(0.0, 0.0, 0.1));
  const SetupResult a = optimize_setup(m, sc.env, target, home_configuration(), s);
  s.jobs = 3;
  const SetupResult b = optimize_setup(m, sc.env, target, home_configuration(), s);
  EXPECT_EQ(a.feasible, b.feasible);
  EXPECT_EQ(a.cost, b.cost);
  EXPECT_EQ(a.q_star, b.q_star);
}

TEST(PlannerSettings, JsonRoundTripAndValidation) {
  PlannerSettings s;
  s.delta_adj = deg2rad(30.0);
  s.grid_points = 9;
  s.weights.beta = 0.3;
  const nlohmann::json j = s;
  const PlannerSettings back = planner_settings_from_json(j);
  EXPECT_NEAR(back.delta_adj, s.delta_adj, 1e-12);
  EXPECT_EQ(back.grid_points, 9);
  EXPECT_EQ(back.weights.beta, 0.3);
  s.weights.beta = 1.5;
  EXPECT_THROW(validate(s), std::invalid_argument);
}

TEST(Birrt, StartEqualsGoal) {
  const RobotModel m = crane8_model();
  const BirrtResult r = plan_birrt(m, open_space(), home_configuration(), home_configuration(), BirrtSettings{});
  ASSERT_TRUE(r.success);
  EXPECT_EQ(r.path.size(), 1u);
  EXPECT_EQ(path_length(r.path), 0.0);
}

TEST(Birrt, FreeSpaceIsNearStraightLine) {
  const RobotModel m = crane8_model();
  const Environment env = open_space();
  Gen g(80);
  int planned = 0;
  for (int k = 0; k < 10; ++k) {
    const JointConfig a = g.config(m, 0.1), b = g.config(m, 0.1);
    if (!config_valid(m, env, a) || !config_valid(m, env, b)) continue;
    ++planned;
    BirrtSettings s;
    s.seed = static_cast<std::uint64_t>(k);
    const BirrtResult r = plan_birrt(m, env, a, b, s);
    ASSERT_TRUE(r.success) << r.message;
    EXPECT_EQ(r.path.front(), a);
    EXPECT_EQ(r.path.back(), b);
    EXPECT_LE(path_length(r.path), 2.0 * (b - a).norm() + 1e-12);
    EXPECT_TRUE(path_valid(m, env, r.path, 0.005));
  }
  EXPECT_GE(planned, 5);
}

TEST(Birrt, PathAroundObstacleIsDenselyValid) {
  const RobotModel m = crane8_model();
  const Environment base = default_scene(generate_patient(SexProfile::Male, 0.0, 1));
  // A block between two stage positions forces a detour.
  const JointConfig a = home_configuration();
  JointConfig b = a;
  b[0] = 0.18;
  const Vec3 mid = fk(m, 0.5 * (a + b)).translation();
  const Environment env = base.with_obstacle({"wall", ObstacleClass::Bore, Sphere{mid, 0.015}});
  ASSERT_TRUE(config_valid(m, env, a));
  ASSERT_TRUE(config_valid(m, env, b));
  ASSERT_FALSE(edge_valid(m, env, a, b, 0.005));
  BirrtSettings s;
  s.max_samples = 20000;
  const BirrtResult r = plan_birrt(m, env, a, b, s);
  ASSERT_TRUE(r.success) << r.message;
  EXPECT_TRUE(path_valid(m, env, r.path, 0.001));
}

TEST(Birrt, InvalidEndpointsReported) {
  const RobotModel m = crane8_model();
  JointConfig bad = home_configuration();
  bad[0] = 1.0;
  const BirrtResult r = plan_birrt(m, open_space(), bad, home_configuration(), BirrtSettings{});
  EXPECT_FALSE(r.success);
  EXPECT_FALSE(r.message.empty());
}
