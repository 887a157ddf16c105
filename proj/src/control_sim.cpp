#include "inbore/control_sim.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace inbore {

namespace {

PlantState settle(const PlantModel& p, PlantState s) {
  s.q_nominal = actuator_to_joint(p.transmission.coupling, s.theta);
  if (p.deflection && !p.wrench.isZero(0.0)) {
    s.deflection = static_deflection(p.transmission, p.robot, s.q_nominal, p.wrench);
  } else {
    s.deflection = StaticDeflection{};
  }
  s.q_true = s.q_nominal + s.deflection.dq;
  s.ee = deflected_fk(p.robot, s.q_nominal, s.deflection);
  return s;
}

}  // namespace

PlantState plant_at_rest(const PlantModel& p, const JointConfig& q) {
  PlantState s;
  s.theta = joint_to_actuator(p.transmission.coupling, q);
  return settle(p, s);
}

PlantState plant_step(const PlantModel& p, const PlantState& s, const Vec8& tau, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("plant_step: dt must be > 0");
  if (!(p.motor.time_constant > 0.0) || !(p.motor.damping > 0.0)) {
    throw std::invalid_argument("motor time constant and damping must be > 0");
  }
  const double decay = std::exp(-dt / p.motor.time_constant);
  const Vec8 v_ss = tau / p.motor.damping;
  PlantState n = s;
  n.theta = s.theta + v_ss * dt + (s.theta_dot - v_ss) * p.motor.time_constant * (1.0 - decay);
  n.theta_dot = v_ss + (s.theta_dot - v_ss) * decay;
  return settle(p, n);
}

JointConfig estimate_joints(EstimatorState& e, const CouplingModel& c, const Vec8& theta, const Vec8& theta_dot,
                            const JointConfig& q_encoders) {
  if (e.alpha < 0.0 || e.alpha > 1.0) throw std::invalid_argument("estimator alpha must lie in [0, 1]");
  if (!(e.dt > 0.0)) throw std::invalid_argument("estimator dt must be > 0");
  e.q_hat.head<4>() = c.base_block() * theta.head<4>();
  const Eigen::Vector4d predicted = c.cable_block() * theta_dot.tail<4>() * e.dt;
  e.q_hat.tail<4>() += e.alpha * predicted + (1.0 - e.alpha) * (q_encoders.tail<4>() - e.q_hat.tail<4>());
  return e.q_hat;
}

void validate(const GainSet& g) {
  if ((g.kp.array() < 0.0).any() || (g.kd.array() < 0.0).any() || (g.k_e.array() < 0.0).any() ||
      (g.k_c.array() < 0.0).any()) {
    throw std::invalid_argument("controller gains must be non-negative");
  }
  if (g.derivative_filter < 0.0 || g.derivative_filter >= 1.0) {
    throw std::invalid_argument("derivative_filter must lie in [0, 1)");
  }
}

Vec8 joint_pd(const GainSet& g, const JointConfig& q_set, const JointConfig& q_hat, const CouplingModel& c,
              PdState& st, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("joint_pd: dt must be > 0");
  const Vec8 u = c.inverse_matrix() * (q_set - q_hat);
  if (st.primed) {
    st.derivative = g.derivative_filter * st.derivative + (1.0 - g.derivative_filter) * (u - st.previous_error) / dt;
  } else {
    st.derivative.setZero();
    st.primed = true;
  }
  st.previous_error = u;
  return g.kp.cwiseProduct(u) + g.kd.cwiseProduct(st.derivative);
}

JointConfig local_controller_step(const RobotModel& model, const Pose& target, const Pose& tracker_pose,
                                  const Pose& T_b_mb, const JointConfig& q_hat, const JointConfig& q_ref,
                                  const GainSet& g, double lambda) {
  const Pose ee_hat = T_b_mb * tracker_pose * model.ee_offset().inverse();
  const auto idx = mask_indices(model.ik_mask());
  const Eigen::MatrixXd j = task_jacobian(model, q_hat, model.ik_mask());
  Eigen::VectorXd pull(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    pull[static_cast<Eigen::Index>(k)] = g.k_c[idx[k]] * (q_ref[idx[k]] - q_hat[idx[k]]);
  }
  const Eigen::VectorXd dq =
      damped_pinv(j, lambda) * g.k_e.cwiseProduct(task_error(target, ee_hat)) + nullspace_projector(j) * pull;
  JointConfig q_set = q_hat;
  for (std::size_t k = 0; k < idx.size(); ++k) q_set[idx[k]] += dq[static_cast<Eigen::Index>(k)];
  return q_set;
}

Pose measure_tracker(const Pose& true_tracker, const TrackerNoise& n, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sp = n.position_rms / std::sqrt(3.0);
  const double so = n.orientation_rms / std::sqrt(3.0);
  // Draw all six even when a σ is zero so both noise channels stay aligned across settings.
  Vec3 dp, dw;
  for (int i = 0; i < 3; ++i) dp[i] = sp * unit(rng);
  for (int i = 0; i < 3; ++i) dw[i] = so * unit(rng);
  return perturb(true_tracker, dp, dw);
}

Pose cone_target(const ConeSpec& c, double phase) {
  const Rotation r =
      c.apex.rotation() * rot_mat(Vec3::UnitZ(), phase) * rot_mat(Vec3::UnitX(), c.zenith);
  return Pose(r, c.apex.translation());
}

std::vector<Pose> cone_waypoints(const ConeSpec& c) {
  if (c.n_points < 1) throw std::invalid_argument("cone needs at least one waypoint");
  std::vector<Pose> out;
  for (int k = 0; k < c.n_points; ++k) out.push_back(cone_target(c, 2.0 * kPi * k / c.n_points));
  return out;
}

void validate(const SimSettings& s) {
  if (!(s.dt > 0.0)) throw std::invalid_argument("sim dt must be > 0");
  if (!(s.motor.time_constant > 0.0) || !(s.motor.damping > 0.0)) {
    throw std::invalid_argument("motor time constant and damping must be > 0");
  }
  validate(s.gains);
  if (s.alpha < 0.0 || s.alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (s.encoder_noise < 0.0 || s.tracker.position_rms < 0.0 || s.tracker.orientation_rms < 0.0) {
    throw std::invalid_argument("noise levels must be >= 0");
  }
  if (!(s.lambda > 0.0)) throw std::invalid_argument("controller damping must be > 0");
  if (!(s.waypoint_period > 0.0) || s.settle_time < 0.0) throw std::invalid_argument("invalid trajectory timing");
}

namespace {

/// Converges the rigid-model reference onto `target`, warm-started at `q`,
/// with a weak pull toward `q_ref` in the nullspace.
bool reference_ik(const RobotModel& model, const Pose& target, JointConfig& q, const JointConfig& q_ref) {
  IKSettings s;
  s.k_e.setOnes();
  s.k_c.setConstant(0.02);
  s.damping = 1e-10;
  s.step_clamp = 0.2;
  s.eps_p = 1e-10;
  s.eps_o = 1e-10;
  for (int it = 0; it < 50; ++it) {
    if (within_tolerance(pose_error(target, fk(model, q)), s)) return true;
    q += nullspace_step(model, target, q, q_ref, s, model.ik_mask());
  }
  const PoseError e = pose_error(target, fk(model, q));
  return e.position_norm() < 1e-8 && e.orientation_norm() < 1e-8;
}

}  // namespace

RcmRun run_rcm_trajectory(const RobotModel& model, const TransmissionModel& transmission, const ConeSpec& cone,
                          bool closed_loop, std::uint64_t seed, const SimSettings& s) {
  validate(s);
  if (cone.n_points < 1) throw std::invalid_argument("cone needs at least one waypoint");
  RcmRun run;
  run.closed_loop = closed_loop;

  PlantModel plant{model, transmission, s.motor, s.wrench, s.deflection};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  JointConfig home = JointConfig::Zero();
  home[3] = -kPi / 2.0;
  home[6] = kPi / 2.0;
  IKSettings seed_ik;
  seed_ik.eps_p = 1e-9;
  seed_ik.eps_o = 1e-9;
  seed_ik.max_iters = 2000;
  const IKResult start = solve_ik(model, cone_target(cone, 0.0), home, seed_ik, model.ik_mask());
  JointConfig q_star = start.q;
  if (!reference_ik(model, cone_target(cone, 0.0), q_star, q_star)) {
    run.message = "cone apex is not reachable";
    return run;
  }

  PlantState state = plant_at_rest(plant, q_star);
  EstimatorState est{q_star, s.alpha, s.dt};
  PdState pd;
  JointConfig q_plan = q_star;
  const Pose mb_from_b = s.T_b_mb.inverse();

  const int settle_steps = static_cast<int>(std::llround(s.settle_time / s.dt));
  const int record_steps = static_cast<int>(std::llround(cone.n_points * s.waypoint_period / s.dt));
  const double sweep_time = cone.n_points * s.waypoint_period;

  for (int k = -settle_steps; k < record_steps; ++k) {
    const double t = k * s.dt;
    const Pose target = cone_target(cone, k <= 0 ? 0.0 : 2.0 * kPi * t / sweep_time);

    if (k >= 0) {
      const PoseError e = pose_error(target, state.ee);
      run.trace.push_back({k, t, e.position, e.orientation});
    }

    JointConfig q_set;
    JointConfig q_hat;
    if (closed_loop) {
      q_hat = est.q_hat;
      const Pose tracker = measure_tracker(mb_from_b * state.ee * model.ee_offset(), s.tracker, rng);
      q_set = local_controller_step(model, target, tracker, s.T_b_mb, q_hat, q_star, s.gains, s.lambda);
    } else {
      q_hat = actuator_to_joint(transmission.coupling, state.theta);
      if (!reference_ik(model, target, q_plan, q_star)) {
        run.message = "reference IK failed at step " + std::to_string(k);
        break;
      }
      q_set = q_plan;
    }

    const Vec8 tau = joint_pd(s.gains, q_set, q_hat, transmission.coupling, pd, s.dt);
    const PlantState next = plant_step(plant, state, tau, s.dt);
    if (closed_loop) {
      JointConfig enc = next.q_true;
      for (int i = 4; i < kNumJoints; ++i) enc[i] += s.encoder_noise * unit(rng);
      estimate_joints(est, transmission.coupling, next.theta, (next.theta - state.theta) / s.dt, enc);
    }
    state = next;
  }

  run.completed = run.message.empty();
  if (!run.trace.empty()) {
    for (const auto& r : run.trace) {
      run.mean_position_error += r.position_error.norm();
      run.mean_orientation_error += r.orientation_error.norm();
      run.max_position_error = std::max(run.max_position_error, r.position_error.norm());
      run.max_orientation_error = std::max(run.max_orientation_error, r.orientation_error.norm());
    }
    run.mean_position_error /= static_cast<double>(run.trace.size());
    run.mean_orientation_error /= static_cast<double>(run.trace.size());
  }
  return run;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "step,t,ex,ey,ez,eax,eay,eaz,ep_norm,eo_norm\n";
  const auto old = os.precision(12);
  for (const auto& r : trace) {
    os << r.step << "," << r.t;
    for (int i = 0; i < 3; ++i) os << "," << r.position_error[i];
    for (int i = 0; i < 3; ++i) os << "," << r.orientation_error[i];
    os << "," << r.position_error.norm() << "," << r.orientation_error.norm() << "\n";
  }
  os.precision(old);
}

void to_json(nlohmann::json& j, const RcmRun& r) {
  j = {{"completed", r.completed},
       {"closed_loop", r.closed_loop},
       {"message", r.message},
       {"steps", r.trace.size()},
       {"mean_position_error_m", r.mean_position_error},
       {"mean_orientation_error_rad", r.mean_orientation_error},
       {"max_position_error_m", r.max_position_error},
       {"max_orientation_error_rad", r.max_orientation_error}};
}

namespace {

template <int N>
Eigen::Matrix<double, N, 1> fixed_vec(const nlohmann::json& j, const char* name) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != static_cast<std::size_t>(N)) {
    throw std::invalid_argument(std::string(name) + " needs " + std::to_string(N) + " entries");
  }
  return Eigen::Map<const Eigen::Matrix<double, N, 1>>(v.data());
}

template <int N>
std::vector<double> to_vec(const Eigen::Matrix<double, N, 1>& v) {
  return std::vector<double>(v.data(), v.data() + N);
}

}  // namespace

SimSettings sim_settings_from_json(const nlohmann::json& j, SimSettings s) {
  if (j.contains("dt")) s.dt = j.at("dt").get<double>();
  if (j.contains("motor_time_constant")) s.motor.time_constant = j.at("motor_time_constant").get<double>();
  if (j.contains("motor_damping")) s.motor.damping = j.at("motor_damping").get<double>();
  if (j.contains("kp")) s.gains.kp = fixed_vec<8>(j.at("kp"), "kp");
  if (j.contains("kd")) s.gains.kd = fixed_vec<8>(j.at("kd"), "kd");
  if (j.contains("k_e")) s.gains.k_e = fixed_vec<5>(j.at("k_e"), "k_e");
  if (j.contains("k_c")) s.gains.k_c = fixed_vec<8>(j.at("k_c"), "k_c");
  if (j.contains("derivative_filter")) s.gains.derivative_filter = j.at("derivative_filter").get<double>();
  if (j.contains("alpha")) s.alpha = j.at("alpha").get<double>();
  if (j.contains("encoder_noise_deg")) s.encoder_noise = deg2rad(j.at("encoder_noise_deg").get<double>());
  if (j.contains("tracker_position_rms")) s.tracker.position_rms = j.at("tracker_position_rms").get<double>();
  if (j.contains("tracker_orientation_rms_deg")) {
    s.tracker.orientation_rms = deg2rad(j.at("tracker_orientation_rms_deg").get<double>());
  }
  if (j.contains("T_b_mb")) s.T_b_mb = j.at("T_b_mb").get<Pose>();
  if (j.contains("lambda")) s.lambda = j.at("lambda").get<double>();
  if (j.contains("wrench")) s.wrench = fixed_vec<6>(j.at("wrench"), "wrench");
  if (j.contains("deflection")) s.deflection = j.at("deflection").get<bool>();
  if (j.contains("waypoint_period")) s.waypoint_period = j.at("waypoint_period").get<double>();
  if (j.contains("settle_time")) s.settle_time = j.at("settle_time").get<double>();
  validate(s);
  return s;
}

void to_json(nlohmann::json& j, const SimSettings& s) {
  j = {{"dt", s.dt},
       {"motor_time_constant", s.motor.time_constant},
       {"motor_damping", s.motor.damping},
       {"kp", to_vec<8>(s.gains.kp)},
       {"kd", to_vec<8>(s.gains.kd)},
       {"k_e", to_vec<5>(s.gains.k_e)},
       {"k_c", to_vec<8>(s.gains.k_c)},
       {"derivative_filter", s.gains.derivative_filter},
       {"alpha", s.alpha},
       {"encoder_noise_deg", rad2deg(s.encoder_noise)},
       {"tracker_position_rms", s.tracker.position_rms},
       {"tracker_orientation_rms_deg", rad2deg(s.tracker.orientation_rms)},
       {"T_b_mb", s.T_b_mb},
       {"lambda", s.lambda},
       {"wrench", to_vec<6>(s.wrench)},
       {"deflection", s.deflection},
       {"waypoint_period", s.waypoint_period},
       {"settle_time", s.settle_time}};
}

}  // namespace inbore
