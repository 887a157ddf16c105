#pragma once
// Inverse kinematics, configuration-space membership tests, the RCM
// adjustability loss, the global setup optimizer and a joint-space BiRRT.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "inbore/robot_model.hpp"
#include "inbore/world.hpp"

namespace inbore {

/// Force and moment the needle must be able to apply, end-effector frame.
struct TaskWrench {
  Vec3 force = Vec3(0.0, 0.0, 10.0);
  Vec3 moment = Vec3(0.05, 0.05, 0.0);
  /// [force; moment]
  Vec6 stacked() const;
};

struct IKSettings {
  double damping = 1e-3;                              ///< λ
  Eigen::Matrix<double, 5, 1> k_e = Eigen::Matrix<double, 5, 1>::Constant(0.5);  ///< task gain diagonal
  JointConfig k_c = JointConfig::Constant(0.1);       ///< nullspace gain diagonal
  double eps_p = 1e-3;                                ///< m
  double eps_o = deg2rad(1.0);                        ///< rad
  int max_iters = 200;
  double step_clamp = 0.05;                           ///< largest joint increment per iteration
  int restarts = 4;                                   ///< re-seeds after a failed solve
  std::uint64_t restart_seed = 1;                     ///< seeds the uniform restart draws over the limits
};

/// Throws std::invalid_argument unless λ > 0, tolerances > 0, max_iters ≥ 1.
void validate(const IKSettings& s);

struct IKResult {
  JointConfig q = JointConfig::Zero();
  bool success = false;
  int iterations = 0;
  PoseError error;
  /// Normalized error after every accepted iteration of the returned attempt.
  std::vector<double> error_trace;
};

/// ‖e_p‖²/ε_p² + ‖e_o‖²/ε_o², the scalar the solver drives down.
double ik_error_measure(const PoseError& e, const IKSettings& s);
bool within_tolerance(const PoseError& e, const IKSettings& s);

/// Body-frame roll-free task error [Rᵀe_p; (Rᵀe_o)_xy] at `current`.
Eigen::Matrix<double, 5, 1> task_error(const Pose& target, const Pose& current);

/// Rows vx, vy, vz, ωx, ωy of the body Jacobian, restricted to `cols`.
Eigen::MatrixXd task_jacobian(const RobotModel& model, const JointConfig& q, const JointMask& cols);

/// (JᵀJ + λI)⁻¹Jᵀ
Eigen::MatrixXd damped_pinv(const Eigen::MatrixXd& J, double lambda);
/// Moore-Penrose pseudoinverse by complete orthogonal decomposition.
Eigen::MatrixXd pinv(const Eigen::MatrixXd& J);
/// I − J⁺J
Eigen::MatrixXd nullspace_projector(const Eigen::MatrixXd& J);

/// Damped least squares on the joints in `active` (others held at q0), with
/// backtracking so the error never increases and joint-limit clamping.
/// Restarts from deterministic perturbations of q0 before reporting failure.
IKResult solve_ik(const RobotModel& model, const Pose& target, const JointConfig& q0, const IKSettings& s,
                  const JointMask& active);

/// `use_partition` moves only the non-redundant joints; otherwise every
/// joint that is not excluded.
IKResult solve_ik(const RobotModel& model, const Pose& target, const JointConfig& q0, const IKSettings& s,
                  bool use_partition);

/// Joint increment J†K_e e + (I − J⁺J)K_c(q_ref − q) over the joints in
/// `active`, scaled so no joint moves more than the step clamp.
JointConfig nullspace_step(const RobotModel& model, const Pose& target, const JointConfig& q, const JointConfig& q_ref,
                           const IKSettings& s, const JointMask& active);
JointConfig nullspace_step(const RobotModel& model, const Pose& target, const JointConfig& q, const JointConfig& q_ref,
                           const IKSettings& s);

/// Needle poses on a cone about the nominal Z-axis, sharing its position:
/// ring i = 1..N tilts by i·Δ/N, and each ring visits azimuths 2πj/M for
/// j = 0..M. Returns N·(M+1) poses, ring-major.
std::vector<Pose> calc_local_targets(const Pose& nominal, double delta_zenith, int n, int m);

/// |J^bᵀ f| ≤ effort limits elementwise and q inside the joint limits.
bool in_c_feas(const RobotModel& model, const JointConfig& q, const TaskWrench& f);
/// Largest |τ_i| / τ_max,i.
double torque_ratio(const RobotModel& model, const JointConfig& q, const TaskWrench& f);

struct CostWeights {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 0.1;
};

inline constexpr double kCostInfeasible = 1e9;
inline constexpr double kDistanceFloor = 1e-4;
inline constexpr double kHomeRegularizer = 0.1;

/// sqrt(det(J_ωxy J_ωxyᵀ)) over the body angular x/y rows and columns `cols`.
double manipulability(const RobotModel& model, const JointConfig& q, const JointMask& cols);

struct CostTerms {
  double manipulability = 0.0;
  double d_bore = 0.0;
  double d_patient = 0.0;
  double d_home = 0.0;
  double total = kCostInfeasible;
};

/// α/w + (1−β)/d_bore + β/d_patient + γ/(d_q0 + 0.1); distances floored at
/// 1e-4 m, w = 0 saturates at the infeasible cost.
CostTerms configuration_cost_terms(const RobotModel& model, const Environment& env, const JointConfig& q,
                                   const JointConfig& q0, const CostWeights& w, const JointMask& cols);
double configuration_cost(const RobotModel& model, const Environment& env, const JointConfig& q,
                          const JointConfig& q0, const CostWeights& w);

/// Everything the setup planner needs beyond the robot and the scene.
struct PlannerSettings {
  IKSettings ik;
  CostWeights weights;
  TaskWrench wrench;
  double delta_adj = deg2rad(15.0);
  int cone_n = 8;
  int cone_m = 8;
  /// Joints allowed to move. Joints outside it stay at their q0 value.
  JointMask mobility = JointMask().set();
  int grid_points = 17;           ///< per revolute search dimension
  int insertion_grid_points = 5;  ///< for the insertion joint when it is searched
  int k_best = 5;                 ///< feasible cells refined by pattern search
  int refine_rounds = 3;          ///< step halvings per refinement
  bool refine = true;
  int jobs = 1;
  /// Wall-clock limit per optimize_setup call in seconds; 0 disables it.
  /// A non-zero budget makes results depend on machine speed.
  double time_budget = 0.0;
};

void validate(const PlannerSettings& s);

struct SetupDiagnostics {
  CostTerms terms;
  double d_self = 0.0;
  double torque_ratio = 0.0;
  double nominal_error_p = 0.0;
  double nominal_error_o = 0.0;
  int cells_total = 0;
  int cells_nominal_ok = 0;
  int adjust_evaluations = 0;
  /// Local targets reached from the returned (or best nominal) configuration.
  int local_targets_reached = 0;
  int local_targets_total = 0;
  bool timed_out = false;
  std::string failure;
};

struct SetupResult {
  double cost = kCostInfeasible;
  JointConfig q_star = JointConfig::Zero();
  bool feasible = false;
  std::vector<double> search_values;  ///< values of the search joints at q_star
  SetupDiagnostics diagnostics;
};

/// Joints searched by the global optimizer: mobility ∩ (redundant ∪ excluded).
std::vector<int> search_joints(const RobotModel& model, const JointMask& mobility);

/// Fixes the search joints to `search_values`, solves the nominal IK on the
/// non-redundant joints and checks that every local cone target is reachable
/// by nullspace steps inside C_free ∩ C_feas. Returns (c(q), q) on success and
/// (c_infeasible, q0) otherwise. With `count_all` the walk does not stop at the
/// first unreachable target, so diagnostics report how many were reached.
SetupResult ik_configuration_loss(const RobotModel& model, const Environment& env, const Pose& target,
                                  const JointConfig& q0, const std::vector<double>& search_values,
                                  const PlannerSettings& s, bool count_all = false);

/// Grid over the search joints, lazy adjustability checks in ascending nominal
/// cost, then pattern-search refinement of the best feasible cells. When the
/// time budget runs out the best feasible result so far is returned, or an
/// infeasible one if none was found; either way `timed_out` is set.
SetupResult optimize_setup(const RobotModel& model, const Environment& env, const Pose& target, const JointConfig& q0,
                           const PlannerSettings& s);

/// Straight joint-space edge sampled so no joint moves more than `step`
/// between checks; every sample must be inside the limits and C_free.
bool edge_valid(const RobotModel& model, const Environment& env, const JointConfig& a, const JointConfig& b,
                double step);
bool path_valid(const RobotModel& model, const Environment& env, const std::vector<JointConfig>& path, double step);
bool config_valid(const RobotModel& model, const Environment& env, const JointConfig& q);

struct BirrtSettings {
  double step = 0.02;         ///< edge check resolution while planning (rad or m)
  double verify_step = 0.005; ///< resolution of the final re-check of the returned path
  double range = 0.3;        ///< largest extension per tree step
  int max_samples = 4000;
  int shortcut_attempts = 200;
  std::uint64_t seed = 1;
};

struct BirrtResult {
  bool success = false;
  std::vector<JointConfig> path;
  int samples_used = 0;
  std::string message;
};

BirrtResult plan_birrt(const RobotModel& model, const Environment& env, const JointConfig& q_start,
                       const JointConfig& q_goal, const BirrtSettings& s);

double path_length(const std::vector<JointConfig>& path);

void to_json(nlohmann::json& j, const SetupResult& r);
/// Missing keys keep the defaults.
PlannerSettings planner_settings_from_json(const nlohmann::json& j, PlannerSettings base = {});
void to_json(nlohmann::json& j, const PlannerSettings& s);

}  // namespace inbore
