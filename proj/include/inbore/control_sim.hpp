#pragma once
// Quasi-static plant with motor lag and transmission compliance, the joint
// estimator, the actuator-space PD loop, the tracker-driven local controller
// and the RCM cone tracking experiment built from them.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "inbore/ik_planning.hpp"
#include "inbore/transmission.hpp"

namespace inbore {

using Vec5 = Eigen::Matrix<double, 5, 1>;

struct MotorParams {
  double time_constant = 0.02;  ///< s, first-order velocity lag
  double damping = 1.0;         ///< N·m·s/rad, steady velocity = τ / damping
};

/// Everything the plant integrates.
struct PlantModel {
  RobotModel robot;
  TransmissionModel transmission;
  MotorParams motor;
  Vec6 wrench = Vec6::Zero();  ///< [force; moment] on the end-effector, EE frame
  bool deflection = true;
};

struct PlantState {
  Vec8 theta = Vec8::Zero();
  Vec8 theta_dot = Vec8::Zero();
  JointConfig q_nominal = JointConfig::Zero();  ///< M·θ
  JointConfig q_true = JointConfig::Zero();     ///< M·θ plus cable deflection
  StaticDeflection deflection;
  Pose ee;                                      ///< true end-effector pose
};

/// Plant at rest with M·θ = q.
PlantState plant_at_rest(const PlantModel& p, const JointConfig& q);

/// Advances the motors under a torque held constant for `dt` (exact solution
/// of the first-order lag), then recomputes the loaded joint and tip state.
PlantState plant_step(const PlantModel& p, const PlantState& s, const Vec8& tau, double dt);

struct EstimatorState {
  JointConfig q_hat = JointConfig::Zero();
  double alpha = 0.9;
  double dt = 0.01;
};

/// Base joints from M_b·θ_b. Cable joints from the incremental complementary
/// filter q̂ ← q̂ + α·M_c·θ̇_c·ΔT + (1−α)(q̃ − q̂). Updates and returns q̂.
JointConfig estimate_joints(EstimatorState& e, const CouplingModel& c, const Vec8& theta, const Vec8& theta_dot,
                            const JointConfig& q_encoders);

struct GainSet {
  Vec8 kp = Vec8::Constant(50.0);  ///< actuator-space, N·m/rad
  Vec8 kd = Vec8::Constant(0.5);   ///< actuator-space, N·m·s/rad
  Vec5 k_e = Vec5::Constant(0.3);
  JointConfig k_c = JointConfig::Constant(0.05);
  double derivative_filter = 0.5;  ///< weight of the previous derivative estimate
};

void validate(const GainSet& g);

struct PdState {
  Vec8 previous_error = Vec8::Zero();
  Vec8 derivative = Vec8::Zero();
  bool primed = false;
};

/// τ = K_p·u + K_d·u̇ with u = M⁻¹(q_set − q̂) and u̇ a low-pass filtered
/// backward difference.
Vec8 joint_pd(const GainSet& g, const JointConfig& q_set, const JointConfig& q_hat, const CouplingModel& c,
              PdState& st, double dt);

/// q_set = q̂ + J†K_e·e + (I − J⁺J)K_c(q_ref − q̂), with e the roll-free task
/// error between `target` and the end-effector estimated from the tracker:
/// T^b_mb · tracker_pose · (T^EE_trk)⁻¹. J is the task Jacobian at q̂ over the
/// IK-active joints, J† its damped inverse and J⁺ the exact pseudoinverse.
JointConfig local_controller_step(const RobotModel& model, const Pose& target, const Pose& tracker_pose,
                                  const Pose& T_b_mb, const JointConfig& q_hat, const JointConfig& q_ref,
                                  const GainSet& g, double lambda);

struct TrackerNoise {
  double position_rms = 1.4e-3;             ///< m, 3-D RMS
  double orientation_rms = deg2rad(0.5);    ///< rad, 3-D RMS
};

/// Measured tracker pose in the tracker base frame: true pose perturbed by
/// zero-mean Gaussian noise with σ = RMS/√3 per axis.
Pose measure_tracker(const Pose& true_tracker, const TrackerNoise& n, std::mt19937_64& rng);

struct ConeSpec {
  Pose apex;
  double zenith = deg2rad(15.0);
  int n_points = 64;
};

/// Target at phase φ: apex rotated by Rz(φ)·Rx(zenith), position unchanged.
Pose cone_target(const ConeSpec& c, double phase);
/// The n_points waypoints at φ = 2πk/n.
std::vector<Pose> cone_waypoints(const ConeSpec& c);

struct SimSettings {
  double dt = 0.01;
  MotorParams motor;
  GainSet gains;
  double alpha = 0.9;
  double encoder_noise = deg2rad(0.1);  ///< σ of the cable joint encoders (rad or m)
  TrackerNoise tracker;
  Pose T_b_mb;                          ///< tracker base in the robot base frame
  double lambda = 1e-4;                 ///< controller damping
  Vec6 wrench = (Vec6() << 0.6, 0.0, 1.0, 0.0, 0.0, 0.0).finished();
  bool deflection = true;
  double waypoint_period = 3.0;         ///< s spent between consecutive waypoints
  double settle_time = 1.0;             ///< s at the first waypoint before recording
};

void validate(const SimSettings& s);

struct TraceRow {
  int step = 0;
  double t = 0.0;
  Vec3 position_error = Vec3::Zero();
  Vec3 orientation_error = Vec3::Zero();
};

struct RcmRun {
  bool completed = false;
  std::string message;
  bool closed_loop = false;
  std::vector<TraceRow> trace;
  double mean_position_error = 0.0;     ///< m
  double mean_orientation_error = 0.0;  ///< rad
  double max_position_error = 0.0;
  double max_orientation_error = 0.0;
};

/// Tracks the cone through plant, estimator and controllers at 1/dt Hz. The
/// target sweeps the cone continuously, passing waypoint k at k·period.
/// Open loop: joint setpoints come from IK on the rigid model and the motors
/// are servoed on q̂ = M·θ alone. Closed loop: complementary-filter joint
/// estimate plus the tracker-driven local controller. Stops with the trace so
/// far if the reference IK fails.
RcmRun run_rcm_trajectory(const RobotModel& model, const TransmissionModel& transmission, const ConeSpec& cone,
                          bool closed_loop, std::uint64_t seed, const SimSettings& s);

/// Header `step,t,ex,ey,ez,eax,eay,eaz,ep_norm,eo_norm`; metres and radians.
void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);

void to_json(nlohmann::json& j, const RcmRun& r);
SimSettings sim_settings_from_json(const nlohmann::json& j, SimSettings base = {});
void to_json(nlohmann::json& j, const SimSettings& s);

}  // namespace inbore
