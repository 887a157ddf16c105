#include "inbore/ik_planning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "inbore/parallel.hpp"

namespace inbore {

namespace {

void scale_to_clamp(Eigen::VectorXd& dq, double clamp) {
  const double biggest = dq.cwiseAbs().maxCoeff();
  if (biggest > clamp) dq *= clamp / biggest;
}

}  // namespace

Vec6 TaskWrench::stacked() const {
  Vec6 w;
  w << force, moment;
  return w;
}

void validate(const IKSettings& s) {
  if (!(s.damping > 0.0)) throw std::invalid_argument("IK damping must be > 0");
  if (!(s.eps_p > 0.0) || !(s.eps_o > 0.0)) throw std::invalid_argument("IK tolerances must be > 0");
  if (s.max_iters < 1) throw std::invalid_argument("IK max_iters must be >= 1");
  if (!(s.step_clamp > 0.0)) throw std::invalid_argument("IK step clamp must be > 0");
  if ((s.k_e.array() < 0.0).any() || (s.k_c.array() < 0.0).any()) {
    throw std::invalid_argument("IK gains must be nonnegative");
  }
  if (s.restarts < 0) throw std::invalid_argument("IK restarts must be >= 0");
}

double ik_error_measure(const PoseError& e, const IKSettings& s) {
  return e.position.squaredNorm() / (s.eps_p * s.eps_p) + e.orientation.squaredNorm() / (s.eps_o * s.eps_o);
}

bool within_tolerance(const PoseError& e, const IKSettings& s) {
  return e.position_norm() < s.eps_p && e.orientation_norm() < s.eps_o;
}

Eigen::Matrix<double, 5, 1> task_error(const Pose& target, const Pose& current) {
  const PoseError e = pose_error(target, current);
  const Mat3 rt = current.rotation().matrix().transpose();
  const Vec3 p = rt * e.position;
  const Vec3 o = rt * e.orientation;
  Eigen::Matrix<double, 5, 1> out;
  out << p, o.x(), o.y();
  return out;
}

Eigen::MatrixXd task_jacobian(const RobotModel& model, const JointConfig& q, const JointMask& cols) {
  const Jacobian jb = jacobian(model, q, JacobianFrame::Body);
  const auto idx = mask_indices(cols);
  Eigen::MatrixXd j(5, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) j.col(static_cast<Eigen::Index>(k)) = jb.col(idx[k]).head<5>();
  return j;
}

Eigen::MatrixXd damped_pinv(const Eigen::MatrixXd& J, double lambda) {
  const Eigen::MatrixXd jtj = J.transpose() * J + lambda * Eigen::MatrixXd::Identity(J.cols(), J.cols());
  return jtj.ldlt().solve(J.transpose());
}

Eigen::MatrixXd pinv(const Eigen::MatrixXd& J) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(J);
  cod.setThreshold(1e-10);
  return cod.pseudoInverse();
}

Eigen::MatrixXd nullspace_projector(const Eigen::MatrixXd& J) {
  return Eigen::MatrixXd::Identity(J.cols(), J.cols()) - pinv(J) * J;
}

namespace {

IKResult ik_attempt(const RobotModel& model, const Pose& target, const JointConfig& seed, const IKSettings& s,
                    const std::vector<int>& active) {
  IKResult r;
  r.q = model.clamp(seed);
  Pose current = fk(model, r.q);
  r.error = pose_error(target, current);
  double measure = ik_error_measure(r.error, s);
  double window_start = measure;
  const JointMask mask = mask_of(active);
  const Eigen::VectorXd gains = s.k_e;

  const JointConfig lo = model.lower_limits(), hi = model.upper_limits();
  for (int it = 0; it < s.max_iters; ++it) {
    if (within_tolerance(r.error, s)) break;
    const Eigen::MatrixXd j = task_jacobian(model, r.q, mask);
    const Eigen::VectorXd e = gains.cwiseProduct(task_error(target, current));
    Eigen::VectorXd dq = damped_pinv(j, s.damping) * e;
    // Joints resting on a limit and pushed further out would only be clamped
    // back; drop them and redistribute the step over the free joints.
    std::vector<char> pinned(active.size(), 0);
    for (int pass = 0; pass < static_cast<int>(active.size()); ++pass) {
      bool changed = false;
      for (std::size_t k = 0; k < active.size(); ++k) {
        const int i = active[k];
        const double d = dq[static_cast<Eigen::Index>(k)];
        if (!pinned[k] && ((r.q[i] <= lo[i] && d < 0.0) || (r.q[i] >= hi[i] && d > 0.0))) {
          pinned[k] = 1;
          changed = true;
        }
      }
      if (!changed) break;
      Eigen::MatrixXd jf = j;
      for (std::size_t k = 0; k < active.size(); ++k) {
        if (pinned[k]) jf.col(static_cast<Eigen::Index>(k)).setZero();
      }
      dq = damped_pinv(jf, s.damping) * e;
      for (std::size_t k = 0; k < active.size(); ++k) {
        if (pinned[k]) dq[static_cast<Eigen::Index>(k)] = 0.0;
      }
    }
    scale_to_clamp(dq, s.step_clamp);

    bool accepted = false;
    double alpha = 1.0;
    for (int ls = 0; ls < 12 && !accepted; ++ls, alpha *= 0.5) {
      JointConfig qn = r.q;
      for (std::size_t k = 0; k < active.size(); ++k) qn[active[k]] += alpha * dq[static_cast<Eigen::Index>(k)];
      qn = model.clamp(qn);
      const Pose pn = fk(model, qn);
      const PoseError en = pose_error(target, pn);
      const double mn = ik_error_measure(en, s);
      if (mn < measure) {
        r.q = qn;
        r.error = en;
        current = pn;
        measure = mn;
        accepted = true;
      }
    }
    if (!accepted) break;
    ++r.iterations;
    r.error_trace.push_back(measure);
    // Give up on a solve that has stopped making progress (local minimum or
    // joint-limit wall); the caller may restart from another seed.
    if (r.iterations % 20 == 0) {
      if (measure > 0.98 * window_start) break;
      window_start = measure;
    }
  }
  r.success = within_tolerance(r.error, s);
  return r;
}

}  // namespace

IKResult solve_ik(const RobotModel& model, const Pose& target, const JointConfig& q0, const IKSettings& s,
                  const JointMask& active) {
  validate(s);
  if (!q0.allFinite()) throw std::invalid_argument("IK seed must be finite");
  const auto idx = mask_indices(active);
  if (idx.empty()) {
    IKResult r;
    r.q = q0;
    r.error = pose_error(target, fk(model, q0));
    r.success = within_tolerance(r.error, s);
    return r;
  }
  std::vector<int> revolute;
  for (int i : idx) {
    if (model.joint(i).kind == JointKind::Revolute) revolute.push_back(i);
  }

  IKResult best = ik_attempt(model, target, q0, s, idx);
  if (best.success || revolute.empty()) return best;
  // Fixed-seed draws keep the solver deterministic.
  std::mt19937_64 rng(s.restart_seed);
  const JointConfig lo = model.lower_limits(), hi = model.upper_limits();
  for (int k = 1; k <= s.restarts; ++k) {
    JointConfig seed = q0;
    for (int i : revolute) seed[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
    IKResult r = ik_attempt(model, target, seed, s, idx);
    if (r.success) return r;
    if (ik_error_measure(r.error, s) < ik_error_measure(best.error, s)) best = std::move(r);
  }
  return best;
}

IKResult solve_ik(const RobotModel& model, const Pose& target, const JointConfig& q0, const IKSettings& s,
                  bool use_partition) {
  const JointMask active = use_partition ? mask_of(model.nonredundant_indices()) : model.ik_mask();
  return solve_ik(model, target, q0, s, active);
}

namespace {

JointConfig increment(const Jacobian& jb, const Pose& current, const Pose& target, const JointConfig& q,
                      const JointConfig& q_ref, const IKSettings& s, const std::vector<int>& idx) {
  JointConfig step = JointConfig::Zero();
  if (idx.empty()) return step;
  Eigen::MatrixXd j(5, static_cast<Eigen::Index>(idx.size()));
  Eigen::VectorXd pull(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    j.col(static_cast<Eigen::Index>(k)) = jb.col(idx[k]).head<5>();
    pull[static_cast<Eigen::Index>(k)] = s.k_c[idx[k]] * (q_ref[idx[k]] - q[idx[k]]);
  }
  const Eigen::VectorXd ke = s.k_e;
  Eigen::VectorXd dq = damped_pinv(j, s.damping) * ke.cwiseProduct(task_error(target, current)) +
                       nullspace_projector(j) * pull;
  scale_to_clamp(dq, s.step_clamp);
  for (std::size_t k = 0; k < idx.size(); ++k) step[idx[k]] = dq[static_cast<Eigen::Index>(k)];
  return step;
}

bool torques_ok(const RobotModel& model, const Jacobian& jb, const TaskWrench& f) {
  const JointConfig tau = jb.transpose() * f.stacked();
  for (int i = 0; i < kNumJoints; ++i) {
    if (std::abs(tau[i]) > model.joint(i).effort_limit) return false;
  }
  return true;
}

}  // namespace

JointConfig nullspace_step(const RobotModel& model, const Pose& target, const JointConfig& q, const JointConfig& q_ref,
                           const IKSettings& s, const JointMask& active) {
  const FramePoses frames = frame_poses(model, q);
  return increment(jacobian(model, frames, JacobianFrame::Body), frames[kNumJoints], target, q, q_ref, s,
                   mask_indices(active));
}

JointConfig nullspace_step(const RobotModel& model, const Pose& target, const JointConfig& q, const JointConfig& q_ref,
                           const IKSettings& s) {
  return nullspace_step(model, target, q, q_ref, s, model.ik_mask());
}

std::vector<Pose> calc_local_targets(const Pose& nominal, double delta_zenith, int n, int m) {
  if (!(delta_zenith > 0.0 && delta_zenith <= kPi / 2.0 + 1e-12)) {
    throw std::invalid_argument("cone zenith must lie in (0, pi/2]");
  }
  if (n < 1 || m < 1) throw std::invalid_argument("cone ring and azimuth counts must be >= 1");
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(n * (m + 1)));
  for (int i = 1; i <= n; ++i) {
    const Rotation tilt = rot_mat(Vec3::UnitX(), delta_zenith * i / n);
    for (int j = 0; j <= m; ++j) {
      const Rotation spin = rot_mat(Vec3::UnitZ(), 2.0 * kPi * j / m);
      out.emplace_back(nominal.rotation() * spin * tilt, nominal.translation());
    }
  }
  return out;
}

double torque_ratio(const RobotModel& model, const JointConfig& q, const TaskWrench& f) {
  const JointConfig tau = jacobian(model, q, JacobianFrame::Body).transpose() * f.stacked();
  double worst = 0.0;
  for (int i = 0; i < kNumJoints; ++i) {
    const double lim = model.joint(i).effort_limit;
    const double t = std::abs(tau[i]);
    if (t == 0.0) continue;
    worst = std::max(worst, lim > 0.0 ? t / lim : std::numeric_limits<double>::infinity());
  }
  return worst;
}

bool in_c_feas(const RobotModel& model, const JointConfig& q, const TaskWrench& f) {
  return model.within_limits(q) && torques_ok(model, jacobian(model, q, JacobianFrame::Body), f);
}

double manipulability(const RobotModel& model, const JointConfig& q, const JointMask& cols) {
  const Jacobian jb = jacobian(model, q, JacobianFrame::Body);
  const auto idx = mask_indices(cols);
  Eigen::MatrixXd j(2, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) j.col(static_cast<Eigen::Index>(k)) = jb.col(idx[k]).segment<2>(3);
  const double det = (j * j.transpose()).determinant();
  return std::sqrt(std::max(0.0, det));
}

CostTerms configuration_cost_terms(const RobotModel& model, const Environment& env, const JointConfig& q,
                                   const JointConfig& q0, const CostWeights& w, const JointMask& cols) {
  CostTerms t;
  t.manipulability = manipulability(model, q, cols);
  const ClassDistances d = class_distances(env, model, q, class_bit(ObstacleClass::Bore) | class_bit(ObstacleClass::Patient));
  t.d_bore = std::max(d.bore, kDistanceFloor);
  t.d_patient = std::max(d.patient, kDistanceFloor);
  t.d_home = (q - q0).norm();
  if (!(t.manipulability > 0.0)) {
    t.total = kCostInfeasible;
    return t;
  }
  // An empty class contributes nothing (1/∞ = 0).
  t.total = w.alpha / t.manipulability + (1.0 - w.beta) / t.d_bore + w.beta / t.d_patient +
            w.gamma / (t.d_home + kHomeRegularizer);
  t.total = std::min(t.total, kCostInfeasible);
  return t;
}

double configuration_cost(const RobotModel& model, const Environment& env, const JointConfig& q,
                          const JointConfig& q0, const CostWeights& w) {
  return configuration_cost_terms(model, env, q, q0, w, model.ik_mask()).total;
}

void validate(const PlannerSettings& s) {
  validate(s.ik);
  if (!(s.weights.alpha >= 0.0) || !(s.weights.gamma >= 0.0) || !(s.weights.beta >= 0.0 && s.weights.beta <= 1.0)) {
    throw std::invalid_argument("cost weights need alpha, gamma >= 0 and beta in [0, 1]");
  }
  if (!(s.delta_adj > 0.0 && s.delta_adj <= kPi / 2.0 + 1e-12)) {
    throw std::invalid_argument("adjustment cone must lie in (0, 90] degrees");
  }
  if (s.cone_n < 1 || s.cone_m < 1) throw std::invalid_argument("cone counts must be >= 1");
  if (s.grid_points < 1 || s.insertion_grid_points < 1) throw std::invalid_argument("grid sizes must be >= 1");
  if (s.k_best < 1 || s.refine_rounds < 0) throw std::invalid_argument("k_best must be >= 1, refine_rounds >= 0");
  if (s.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (!(s.time_budget >= 0.0)) throw std::invalid_argument("time_budget must be >= 0");
  if (!s.wrench.stacked().allFinite()) throw std::invalid_argument("task wrench must be finite");
}

std::vector<int> search_joints(const RobotModel& model, const JointMask& mobility) {
  std::vector<int> out;
  for (int i = 0; i < kNumJoints; ++i) {
    const bool red = std::find(model.redundant_indices().begin(), model.redundant_indices().end(), i) !=
                     model.redundant_indices().end();
    const bool exc = std::find(model.excluded_indices().begin(), model.excluded_indices().end(), i) !=
                     model.excluded_indices().end();
    if ((red || exc) && mobility.test(static_cast<std::size_t>(i))) out.push_back(i);
  }
  return out;
}

namespace {

struct Context {
  const RobotModel& model;
  const Environment& env;
  const PlannerSettings& s;
  JointMask core;         ///< non-redundant joints that may move
  JointMask walk;         ///< joints moved by the adjustment walk
  std::vector<JointMask> ladder;
  JointMask cost_cols;
};

Context make_context(const RobotModel& model, const Environment& env, const PlannerSettings& s) {
  Context c{model, env, s, {}, {}, {}, {}};
  c.core = mask_of(model.nonredundant_indices()) & s.mobility;
  c.walk = model.ik_mask() & s.mobility;
  c.cost_cols = c.walk;
  // Adjustment walks first use every mobile joint, then fall back to the core
  // plus each smaller subset of the mobile redundant joints.
  std::vector<int> red;
  for (int i : model.redundant_indices()) {
    if (c.walk.test(static_cast<std::size_t>(i))) red.push_back(i);
  }
  const int nred = static_cast<int>(red.size());
  std::vector<unsigned> subsets;
  for (unsigned b = 0; b < (1u << nred); ++b) subsets.push_back(b);
  std::stable_sort(subsets.begin(), subsets.end(), [](unsigned a, unsigned b) {
    return __builtin_popcount(a) > __builtin_popcount(b);
  });
  for (unsigned b : subsets) {
    JointMask m = c.core;
    for (int k = 0; k < nred; ++k) {
      if (b & (1u << k)) m.set(static_cast<std::size_t>(red[static_cast<std::size_t>(k)]));
    }
    c.ladder.push_back(m);
  }
  return c;
}

bool walk_to(const Context& c, const JointConfig& q_nom, const Pose& target, const JointMask& mask) {
  const IKSettings& ik = c.s.ik;
  const auto idx = mask_indices(mask);
  JointConfig ql = q_nom;
  FramePoses frames = frame_poses(c.model, ql);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int it = 0; it <= ik.max_iters; ++it) {
    const PoseError e = pose_error(target, frames[kNumJoints]);
    if (within_tolerance(e, ik)) return true;
    if (it == ik.max_iters) break;
    const double m = ik_error_measure(e, ik);
    if (m < best * (1.0 - 1e-4)) {
      best = m;
      since_best = 0;
    } else if (++since_best > 25) {
      return false;
    }
    const Jacobian jb = jacobian(c.model, frames, JacobianFrame::Body);
    ql += increment(jb, frames[kNumJoints], target, ql, q_nom, ik, idx);
    if (!c.model.within_limits(ql)) return false;
    frames = frame_poses(c.model, ql);
    if (!torques_ok(c.model, jacobian(c.model, frames, JacobianFrame::Body), c.s.wrench)) return false;
    if (!in_c_free(c.env, link_geometry(c.model, frames))) return false;
  }
  return false;
}

struct Nominal {
  bool ok = false;
  JointConfig q = JointConfig::Zero();
  double cost = kCostInfeasible;
  PoseError error;
  std::string failure;
};

Nominal nominal_solution(const Context& c, const Pose& target, const JointConfig& seed, const JointConfig& q0) {
  Nominal n;
  const IKResult ik = solve_ik(c.model, target, seed, c.s.ik, c.core);
  n.error = ik.error;
  if (!ik.success) {
    n.failure = "nominal IK did not converge";
    return n;
  }
  if (!c.model.within_limits(ik.q)) {
    n.failure = "nominal configuration outside joint limits";
  } else if (!in_c_feas(c.model, ik.q, c.s.wrench)) {
    n.failure = "nominal configuration cannot supply the task wrench";
  } else if (!in_c_free(c.env, c.model, ik.q)) {
    n.failure = "nominal configuration violates clearance";
  } else {
    n.ok = true;
    n.q = ik.q;
    n.cost = configuration_cost_terms(c.model, c.env, ik.q, q0, c.s.weights, c.cost_cols).total;
  }
  return n;
}

SetupResult adjust_from_nominal(const Context& c, const Pose& target, const Nominal& nom, const JointConfig& q0,
                                const std::vector<int>& dims, bool count_all) {
  SetupResult r;
  r.q_star = q0;
  r.diagnostics.nominal_error_p = nom.error.position_norm();
  r.diagnostics.nominal_error_o = nom.error.orientation_norm();
  for (int d : dims) r.search_values.push_back(nom.q[d]);
  if (!nom.ok) {
    r.diagnostics.failure = nom.failure;
    return r;
  }

  auto targets = calc_local_targets(target, c.s.delta_adj, c.s.cone_n, c.s.cone_m);
  // Outer rings first: they fail most often, and each walk restarts from the
  // nominal configuration so the order does not change the outcome.
  std::vector<std::size_t> order(targets.size());
  const std::size_t ring = static_cast<std::size_t>(c.s.cone_m + 1);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    order[k] = targets.size() - ring * (k / ring + 1) + k % ring;
  }
  r.diagnostics.local_targets_total = static_cast<int>(targets.size());
  bool all = true;
  for (std::size_t k : order) {
    bool reached = false;
    for (const JointMask& m : c.ladder) {
      if (walk_to(c, nom.q, targets[k], m)) {
        reached = true;
        break;
      }
    }
    if (reached) {
      ++r.diagnostics.local_targets_reached;
    } else {
      all = false;
      if (!count_all) break;
    }
  }
  if (!all) {
    r.diagnostics.failure = "adjustment cone not reachable";
    return r;
  }
  r.feasible = true;
  r.q_star = nom.q;
  r.diagnostics.terms = configuration_cost_terms(c.model, c.env, nom.q, q0, c.s.weights, c.cost_cols);
  r.cost = r.diagnostics.terms.total;
  r.feasible = r.cost < kCostInfeasible;
  if (!r.feasible) {
    r.q_star = q0;
    r.diagnostics.failure = "degenerate manipulability";
    return r;
  }
  r.diagnostics.d_self = class_distances(c.env, c.model, nom.q, class_bit(ObstacleClass::RobotSelf)).robot_self;
  r.diagnostics.torque_ratio = torque_ratio(c.model, nom.q, c.s.wrench);
  return r;
}

JointConfig with_values(JointConfig q, const std::vector<int>& dims, const std::vector<double>& values) {
  for (std::size_t k = 0; k < dims.size(); ++k) q[dims[k]] = values[k];
  return q;
}

}  // namespace

SetupResult ik_configuration_loss(const RobotModel& model, const Environment& env, const Pose& target,
                                  const JointConfig& q0, const std::vector<double>& search_values,
                                  const PlannerSettings& s, bool count_all) {
  validate(s);
  const Context c = make_context(model, env, s);
  const auto dims = search_joints(model, s.mobility);
  if (search_values.size() != dims.size()) {
    throw std::invalid_argument("expected " + std::to_string(dims.size()) + " search values, got " +
                                std::to_string(search_values.size()));
  }
  const JointConfig seed = with_values(q0, dims, search_values);
  const Nominal nom = nominal_solution(c, target, seed, q0);
  SetupResult r = adjust_from_nominal(c, target, nom, q0, dims, count_all);
  r.search_values = search_values;
  r.diagnostics.cells_total = 1;
  r.diagnostics.cells_nominal_ok = nom.ok ? 1 : 0;
  r.diagnostics.adjust_evaluations = nom.ok ? 1 : 0;
  return r;
}

SetupResult optimize_setup(const RobotModel& model, const Environment& env, const Pose& target, const JointConfig& q0,
                           const PlannerSettings& s) {
  validate(s);
  const Context c = make_context(model, env, s);
  const auto dims = search_joints(model, s.mobility);
  const auto started = std::chrono::steady_clock::now();
  auto out_of_time = [&] {
    return s.time_budget > 0.0 &&
           std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() > s.time_budget;
  };
  bool timed_out = false;

  std::vector<std::vector<double>> axes;
  std::vector<double> spacing;
  for (int d : dims) {
    const JointSpec& js = model.joint(d);
    const int n = js.kind == JointKind::Prismatic ? s.insertion_grid_points : s.grid_points;
    std::vector<double> axis;
    for (int k = 0; k < n; ++k) axis.push_back(n == 1 ? q0[d] : js.lower + (js.upper - js.lower) * k / (n - 1));
    spacing.push_back(n == 1 ? 0.0 : (js.upper - js.lower) / (n - 1));
    axes.push_back(std::move(axis));
  }
  std::size_t n_cells = 1;
  for (const auto& a : axes) n_cells *= a.size();
  auto cell_values = [&](std::size_t idx) {
    std::vector<double> v(dims.size());
    for (std::size_t d = dims.size(); d-- > 0;) {
      v[d] = axes[d][idx % axes[d].size()];
      idx /= axes[d].size();
    }
    return v;
  };

  std::vector<Nominal> nominal(n_cells);
  parallel_for(n_cells, s.jobs, [&](std::size_t i) {
    if (out_of_time()) return;
    nominal[i] = nominal_solution(c, target, with_values(q0, dims, cell_values(i)), q0);
  });
  timed_out = out_of_time();

  SetupResult best;
  best.q_star = q0;
  best.diagnostics.cells_total = static_cast<int>(n_cells);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n_cells; ++i) {
    if (nominal[i].ok) order.push_back(i);
  }
  best.diagnostics.cells_nominal_ok = static_cast<int>(order.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return nominal[a].cost < nominal[b].cost; });

  // Adjustability checks in ascending nominal cost, batched by worker count;
  // a batch is consumed in order so the result is independent of `jobs`.
  std::vector<SetupResult> seeds;
  int evaluations = 0;
  const std::size_t batch = static_cast<std::size_t>(s.jobs);
  for (std::size_t start = 0; start < order.size() && static_cast<int>(seeds.size()) < s.k_best; start += batch) {
    if (timed_out || out_of_time()) {
      timed_out = true;
      break;
    }
    const std::size_t count = std::min(batch, order.size() - start);
    std::vector<SetupResult> results(count);
    parallel_for(count, s.jobs, [&](std::size_t k) {
      results[k] = adjust_from_nominal(c, target, nominal[order[start + k]], q0, dims, false);
    });
    for (std::size_t k = 0; k < count && static_cast<int>(seeds.size()) < s.k_best; ++k) {
      ++evaluations;
      if (results[k].feasible) seeds.push_back(std::move(results[k]));
    }
  }

  if (seeds.empty()) {
    best.diagnostics.adjust_evaluations = evaluations;
    best.diagnostics.timed_out = timed_out;
    if (timed_out) {
      best.diagnostics.failure = "time budget exhausted";
      best.diagnostics.local_targets_total = s.cone_n * (s.cone_m + 1);
    } else if (!order.empty()) {
      const SetupResult partial = adjust_from_nominal(c, target, nominal[order.front()], q0, dims, true);
      best.diagnostics.local_targets_reached = partial.diagnostics.local_targets_reached;
      best.diagnostics.local_targets_total = partial.diagnostics.local_targets_total;
      best.diagnostics.nominal_error_p = partial.diagnostics.nominal_error_p;
      best.diagnostics.nominal_error_o = partial.diagnostics.nominal_error_o;
      best.diagnostics.failure = "no cell admits the adjustment cone";
    } else {
      best.diagnostics.failure = "nominal IK infeasible in every cell";
      best.diagnostics.local_targets_total = s.cone_n * (s.cone_m + 1);
    }
    return best;
  }

  auto better = [](const SetupResult& a, const SetupResult& b) { return a.feasible && a.cost < b.cost; };
  for (const auto& sd : seeds) {
    if (better(sd, best) || !best.feasible) best = sd;
  }

  if (s.refine && !dims.empty()) {
    for (const auto& sd : seeds) {
      SetupResult cur = sd;
      std::vector<double> step(spacing.size());
      for (std::size_t d = 0; d < spacing.size(); ++d) step[d] = 0.5 * spacing[d];
      int shrinks = 0;
      int moves = 0;
      while (shrinks < s.refine_rounds && !timed_out) {
        if (out_of_time()) {
          timed_out = true;
          break;
        }
        bool moved = false;
        for (std::size_t d = 0; d < dims.size() && !moved; ++d) {
          if (step[d] <= 0.0) continue;
          for (double sign : {1.0, -1.0}) {
            std::vector<double> v = cur.search_values;
            v[d] += sign * step[d];
            const JointSpec& js = model.joint(dims[d]);
            if (v[d] < js.lower || v[d] > js.upper) continue;
            const Nominal nom = nominal_solution(c, target, with_values(cur.q_star, dims, v), q0);
            ++evaluations;
            SetupResult probe = adjust_from_nominal(c, target, nom, q0, dims, false);
            probe.search_values = v;
            if (better(probe, cur)) {
              cur = std::move(probe);
              moved = true;
              break;
            }
          }
        }
        if (moved && ++moves < 8) continue;
        for (auto& st : step) st *= 0.5;
        ++shrinks;
        moves = 0;
      }
      if (better(cur, best)) best = cur;
    }
  }
  best.diagnostics.cells_total = static_cast<int>(n_cells);
  best.diagnostics.cells_nominal_ok = static_cast<int>(order.size());
  best.diagnostics.adjust_evaluations = evaluations;
  best.diagnostics.timed_out = timed_out;
  return best;
}

// ---------------------------------------------------------------------------

bool config_valid(const RobotModel& model, const Environment& env, const JointConfig& q) {
  return model.within_limits(q) && in_c_free(env, model, q);
}

bool edge_valid(const RobotModel& model, const Environment& env, const JointConfig& a, const JointConfig& b,
                double step) {
  if (!(step > 0.0)) throw std::invalid_argument("edge check step must be > 0");
  const double span = (b - a).cwiseAbs().maxCoeff();
  const int n = std::max(1, static_cast<int>(std::ceil(span / step)));
  for (int k = 0; k <= n; ++k) {
    const JointConfig q = a + (b - a) * (static_cast<double>(k) / n);
    if (!config_valid(model, env, q)) return false;
  }
  return true;
}

bool path_valid(const RobotModel& model, const Environment& env, const std::vector<JointConfig>& path, double step) {
  if (path.empty()) return false;
  if (path.size() == 1) return config_valid(model, env, path.front());
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!edge_valid(model, env, path[i], path[i + 1], step)) return false;
  }
  return true;
}

double path_length(const std::vector<JointConfig>& path) {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) len += (path[i + 1] - path[i]).norm();
  return len;
}

namespace {

struct Node {
  JointConfig q;
  int parent;
};

enum class Extend { Trapped, Advanced, Reached };

}  // namespace

BirrtResult plan_birrt(const RobotModel& model, const Environment& env, const JointConfig& q_start,
                       const JointConfig& q_goal, const BirrtSettings& s) {
  if (!(s.step > 0.0) || !(s.verify_step > 0.0) || !(s.range > 0.0) || s.max_samples < 1 ||
      s.shortcut_attempts < 0) {
    throw std::invalid_argument("BiRRT needs step, verify_step, range > 0 and max_samples >= 1");
  }
  BirrtResult out;
  if (!config_valid(model, env, q_start)) {
    out.message = "start configuration is not collision-free";
    return out;
  }
  if (!config_valid(model, env, q_goal)) {
    out.message = "goal configuration is not collision-free";
    return out;
  }
  if ((q_goal - q_start).cwiseAbs().maxCoeff() < 1e-12) {
    out.success = true;
    out.path = {q_start};
    return out;
  }
  if (edge_valid(model, env, q_start, q_goal, s.verify_step)) {
    out.success = true;
    out.path = {q_start, q_goal};
    return out;
  }

  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const JointConfig lo = model.lower_limits();
  const JointConfig hi = model.upper_limits();

  std::vector<Node> trees[2] = {{{q_start, -1}}, {{q_goal, -1}}};
  auto nearest = [](const std::vector<Node>& t, const JointConfig& q) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double d = (t[i].q - q).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  };
  auto extend = [&](std::vector<Node>& t, const JointConfig& q) {
    const std::size_t near = nearest(t, q);
    const JointConfig d = q - t[near].q;
    const double span = d.cwiseAbs().maxCoeff();
    const bool reach = span <= s.range;
    const JointConfig q_new = reach ? q : JointConfig(t[near].q + d * (s.range / span));
    if (!edge_valid(model, env, t[near].q, q_new, s.step)) return Extend::Trapped;
    t.push_back({q_new, static_cast<int>(near)});
    return reach ? Extend::Reached : Extend::Advanced;
  };

  int a = 0;
  bool connected = false;
  for (out.samples_used = 0; out.samples_used < s.max_samples; ++out.samples_used) {
    JointConfig q_rand;
    for (int i = 0; i < kNumJoints; ++i) q_rand[i] = lo[i] + (hi[i] - lo[i]) * unit(rng);
    if (extend(trees[a], q_rand) != Extend::Trapped) {
      const JointConfig q_new = trees[a].back().q;
      Extend st = Extend::Advanced;
      while (st == Extend::Advanced) st = extend(trees[1 - a], q_new);
      if (st == Extend::Reached) {
        connected = true;
        break;
      }
    }
    a = 1 - a;
  }
  if (!connected) {
    out.message = "no connection after " + std::to_string(s.max_samples) + " samples";
    return out;
  }

  auto branch = [](const std::vector<Node>& t) {
    std::vector<JointConfig> p;
    for (int i = static_cast<int>(t.size()) - 1; i >= 0; i = t[static_cast<std::size_t>(i)].parent) {
      p.push_back(t[static_cast<std::size_t>(i)].q);
    }
    return p;
  };
  std::vector<JointConfig> from_start = branch(trees[0]);
  std::vector<JointConfig> from_goal = branch(trees[1]);
  std::reverse(from_start.begin(), from_start.end());
  // Both branches end at the shared connection configuration.
  std::vector<JointConfig> path = from_start;
  path.insert(path.end(), from_goal.begin() + 1, from_goal.end());

  for (int k = 0; k < s.shortcut_attempts && path.size() > 2; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, path.size() - 1);
    std::size_t i = pick(rng), j = pick(rng);
    if (i > j) std::swap(i, j);
    if (j < i + 2) continue;
    if (edge_valid(model, env, path[i], path[j], s.step)) {
      path.erase(path.begin() + static_cast<std::ptrdiff_t>(i + 1), path.begin() + static_cast<std::ptrdiff_t>(j));
    }
  }

  if (!path_valid(model, env, path, s.verify_step)) {
    out.message = "path failed the dense edge re-check";
    return out;
  }
  out.success = true;
  out.path = std::move(path);
  return out;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const SetupResult& r) {
  const auto& d = r.diagnostics;
  j = nlohmann::json{
      {"feasible", r.feasible},
      {"cost", r.cost},
      {"q_star", std::vector<double>(r.q_star.data(), r.q_star.data() + kNumJoints)},
      {"search_values", r.search_values},
      {"diagnostics",
       {{"manipulability", d.terms.manipulability},
        {"d_bore", d.terms.d_bore},
        {"d_patient", d.terms.d_patient},
        {"d_home", d.terms.d_home},
        {"d_self", d.d_self},
        {"torque_ratio", d.torque_ratio},
        {"nominal_error_p", d.nominal_error_p},
        {"nominal_error_o", d.nominal_error_o},
        {"cells_total", d.cells_total},
        {"cells_nominal_ok", d.cells_nominal_ok},
        {"adjust_evaluations", d.adjust_evaluations},
        {"local_targets_reached", d.local_targets_reached},
        {"local_targets_total", d.local_targets_total},
        {"timed_out", d.timed_out},
        {"failure", d.failure}}}};
}

namespace {

Vec3 vec3_of(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

}  // namespace

PlannerSettings planner_settings_from_json(const nlohmann::json& j, PlannerSettings s) {
  if (j.contains("ik")) {
    const auto& k = j.at("ik");
    s.ik.damping = k.value("damping", s.ik.damping);
    if (k.contains("k_e")) s.ik.k_e.setConstant(k.at("k_e").get<double>());
    if (k.contains("k_c")) s.ik.k_c.setConstant(k.at("k_c").get<double>());
    s.ik.eps_p = k.value("eps_p", s.ik.eps_p);
    if (k.contains("eps_o_deg")) s.ik.eps_o = deg2rad(k.at("eps_o_deg").get<double>());
    s.ik.max_iters = k.value("max_iters", s.ik.max_iters);
    s.ik.step_clamp = k.value("step_clamp", s.ik.step_clamp);
    s.ik.restarts = k.value("restarts", s.ik.restarts);
    s.ik.restart_seed = k.value("restart_seed", s.ik.restart_seed);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    s.weights.alpha = w.value("alpha", s.weights.alpha);
    s.weights.beta = w.value("beta", s.weights.beta);
    s.weights.gamma = w.value("gamma", s.weights.gamma);
  }
  if (j.contains("wrench")) {
    const auto& w = j.at("wrench");
    if (w.contains("force")) s.wrench.force = vec3_of(w.at("force"));
    if (w.contains("moment")) s.wrench.moment = vec3_of(w.at("moment"));
  }
  if (j.contains("delta_adj_deg")) s.delta_adj = deg2rad(j.at("delta_adj_deg").get<double>());
  if (j.contains("cone")) {
    s.cone_n = j.at("cone").value("n", s.cone_n);
    s.cone_m = j.at("cone").value("m", s.cone_m);
  }
  s.grid_points = j.value("grid_points", s.grid_points);
  s.insertion_grid_points = j.value("insertion_grid_points", s.insertion_grid_points);
  s.k_best = j.value("k_best", s.k_best);
  s.refine_rounds = j.value("refine_rounds", s.refine_rounds);
  s.refine = j.value("refine", s.refine);
  s.time_budget = j.value("time_budget_s", s.time_budget);
  if (j.contains("mobility")) {
    JointMask m;
    for (int i : j.at("mobility").get<std::vector<int>>()) {
      if (i < 1 || i > kNumJoints) throw std::invalid_argument("mobility joint index out of range");
      m.set(static_cast<std::size_t>(i - 1));
    }
    s.mobility = m;
  }
  validate(s);
  return s;
}

void to_json(nlohmann::json& j, const PlannerSettings& s) {
  std::vector<int> mob;
  for (int i = 0; i < kNumJoints; ++i) {
    if (s.mobility.test(static_cast<std::size_t>(i))) mob.push_back(i + 1);
  }
  j = nlohmann::json{
      {"ik",
       {{"damping", s.ik.damping},
        {"k_e", s.ik.k_e[0]},
        {"k_c", s.ik.k_c[0]},
        {"eps_p", s.ik.eps_p},
        {"eps_o_deg", rad2deg(s.ik.eps_o)},
        {"max_iters", s.ik.max_iters},
        {"step_clamp", s.ik.step_clamp},
        {"restarts", s.ik.restarts},
        {"restart_seed", s.ik.restart_seed}}},
      {"weights", {{"alpha", s.weights.alpha}, {"beta", s.weights.beta}, {"gamma", s.weights.gamma}}},
      {"wrench",
       {{"force", {s.wrench.force.x(), s.wrench.force.y(), s.wrench.force.z()}},
        {"moment", {s.wrench.moment.x(), s.wrench.moment.y(), s.wrench.moment.z()}}}},
      {"delta_adj_deg", rad2deg(s.delta_adj)},
      {"cone", {{"n", s.cone_n}, {"m", s.cone_m}}},
      {"grid_points", s.grid_points},
      {"insertion_grid_points", s.insertion_grid_points},
      {"k_best", s.k_best},
      {"refine_rounds", s.refine_rounds},
      {"refine", s.refine},
      {"time_budget_s", s.time_budget},
      {"mobility", mob}};
}

}  // namespace inbore
