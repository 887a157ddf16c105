#include "inbore/robot_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace inbore {

RobotModel::RobotModel(std::vector<JointSpec> joints, Pose base_pose, Pose ee_offset,
                       std::vector<int> redundant_indices, std::vector<int> excluded_indices,
                       std::vector<CollisionLinkSpec> links)
    : joints_(std::move(joints)),
      base_pose_(base_pose),
      ee_offset_(ee_offset),
      redundant_(std::move(redundant_indices)),
      excluded_(std::move(excluded_indices)),
      links_(std::move(links)) {
  if (joints_.size() != static_cast<std::size_t>(kNumJoints)) {
    throw std::invalid_argument("robot model needs exactly 8 joints, got " +
                                std::to_string(joints_.size()));
  }
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    if (!std::isfinite(j.lower) || !std::isfinite(j.upper) || !(j.lower < j.upper)) {
      throw std::invalid_argument("joint " + std::to_string(i + 1) + " needs finite limits with min < max");
    }
    if (!(j.effort_limit >= 0.0)) {
      throw std::invalid_argument("joint " + std::to_string(i + 1) + " effort limit must be >= 0");
    }
  }
  std::set<int> seen;
  for (int idx : redundant_) {
    if (idx < 0 || idx >= kNumJoints) throw std::invalid_argument("redundant joint index out of range");
    if (!seen.insert(idx).second) throw std::invalid_argument("duplicate redundant joint index");
  }
  for (int idx : excluded_) {
    if (idx < 0 || idx >= kNumJoints) throw std::invalid_argument("excluded joint index out of range");
    if (!seen.insert(idx).second) {
      throw std::invalid_argument("redundant and excluded joint sets must be disjoint");
    }
  }
  for (const auto& l : links_) {
    if (l.frame < 0 || l.frame > kNumJoints) throw std::invalid_argument("collision link frame out of range");
    if (l.to_next_origin && l.frame == kNumJoints) {
      throw std::invalid_argument("collision link on the last frame cannot end at the next origin");
    }
    if (!(l.radius >= 0.0)) throw std::invalid_argument("collision link radius must be >= 0");
  }
}

std::vector<int> RobotModel::nonredundant_indices() const {
  std::vector<int> out;
  for (int i = 0; i < kNumJoints; ++i) {
    const bool red = std::find(redundant_.begin(), redundant_.end(), i) != redundant_.end();
    const bool exc = std::find(excluded_.begin(), excluded_.end(), i) != excluded_.end();
    if (!red && !exc) out.push_back(i);
  }
  return out;
}

std::vector<int> mask_indices(const JointMask& m) {
  std::vector<int> out;
  for (int i = 0; i < kNumJoints; ++i) {
    if (m.test(static_cast<std::size_t>(i))) out.push_back(i);
  }
  return out;
}

JointMask mask_of(const std::vector<int>& idx) {
  JointMask m;
  for (int i : idx) {
    if (i < 0 || i >= kNumJoints) throw std::invalid_argument("joint index " + std::to_string(i) + " out of range");
    m.set(static_cast<std::size_t>(i));
  }
  return m;
}

JointMask RobotModel::ik_mask() const {
  JointMask m;
  m.set();
  for (int i : excluded_) m.reset(static_cast<std::size_t>(i));
  return m;
}

JointConfig RobotModel::lower_limits() const {
  JointConfig v;
  for (int i = 0; i < kNumJoints; ++i) v[i] = joint(i).lower;
  return v;
}

JointConfig RobotModel::upper_limits() const {
  JointConfig v;
  for (int i = 0; i < kNumJoints; ++i) v[i] = joint(i).upper;
  return v;
}

JointConfig RobotModel::effort_limits() const {
  JointConfig v;
  for (int i = 0; i < kNumJoints; ++i) v[i] = joint(i).effort_limit;
  return v;
}

bool RobotModel::within_limits(const JointConfig& q, double tol) const {
  for (int i = 0; i < kNumJoints; ++i) {
    if (!std::isfinite(q[i]) || q[i] < joint(i).lower - tol || q[i] > joint(i).upper + tol) return false;
  }
  return true;
}

JointConfig RobotModel::clamp(const JointConfig& q) const {
  return q.cwiseMax(lower_limits()).cwiseMin(upper_limits());
}

RobotModel RobotModel::with_base_pose(const Pose& base) const {
  RobotModel m = *this;
  m.base_pose_ = base;
  return m;
}

RobotModel RobotModel::with_effort_limits(const JointConfig& limits) const {
  RobotModel m = *this;
  for (int i = 0; i < kNumJoints; ++i) m.joints_[static_cast<std::size_t>(i)].effort_limit = limits[i];
  return m;
}

Pose dh_transform(const JointSpec& j, double q) {
  double theta = j.dh_theta;
  double d = j.dh_d;
  if (j.kind == JointKind::Revolute) theta += q;
  if (j.kind == JointKind::Prismatic) d += q;

  const double ca = std::cos(j.dh_alpha), sa = std::sin(j.dh_alpha);
  const double ct = std::cos(theta), st = std::sin(theta);
  // T_x(α, a)·T_z(θ, d) multiplied out.
  Mat3 r;
  r << ct, -st, 0.0,
       ca * st, ca * ct, -sa,
       sa * st, sa * ct, ca;
  const Vec3 t(j.dh_a, -sa * d, ca * d);
  return Pose(Rotation::trusted(r), t);
}

FramePoses frame_poses(const RobotModel& model, const JointConfig& q) {
  FramePoses frames;
  frames[0] = model.base_pose();
  for (int i = 0; i < kNumJoints; ++i) {
    frames[static_cast<std::size_t>(i + 1)] = frames[static_cast<std::size_t>(i)] * dh_transform(model.joint(i), q[i]);
  }
  return frames;
}

Pose fk(const RobotModel& model, const JointConfig& q) { return frame_poses(model, q)[kNumJoints]; }

Jacobian jacobian(const RobotModel& model, const JointConfig& q, JacobianFrame frame) {
  return jacobian(model, frame_poses(model, q), frame);
}

Jacobian jacobian(const RobotModel& model, const FramePoses& frames, JacobianFrame frame) {
  Jacobian js = Jacobian::Zero();
  for (int i = 0; i < kNumJoints; ++i) {
    const Pose& f = frames[static_cast<std::size_t>(i + 1)];
    const Vec3 axis = f.rotation().z_axis();
    switch (model.joint(i).kind) {
      case JointKind::Revolute:
        js.col(i) << f.translation().cross(axis), axis;
        break;
      case JointKind::Prismatic:
        js.col(i) << axis, Vec3::Zero();
        break;
      case JointKind::Fixed:
        break;
    }
  }
  if (frame == JacobianFrame::Space) return js;
  return adjoint(frames[kNumJoints].inverse()) * js;
}

JacobianPartition partition_jacobian(const Eigen::MatrixXd& J, const RobotModel& model) {
  if (J.cols() != kNumJoints) {
    throw std::invalid_argument("partition_jacobian expects " + std::to_string(kNumJoints) + " columns");
  }
  JacobianPartition p;
  p.nonredundant_indices = model.nonredundant_indices();
  p.redundant_indices = model.redundant_indices();
  if (p.nonredundant_indices.size() + p.redundant_indices.size() + model.excluded_indices().size() !=
      static_cast<std::size_t>(kNumJoints)) {
    throw std::invalid_argument("joint partition does not cover the chain");
  }
  p.nonredundant.resize(J.rows(), static_cast<Eigen::Index>(p.nonredundant_indices.size()));
  p.redundant.resize(J.rows(), static_cast<Eigen::Index>(p.redundant_indices.size()));
  for (std::size_t k = 0; k < p.nonredundant_indices.size(); ++k) {
    p.nonredundant.col(static_cast<Eigen::Index>(k)) = J.col(p.nonredundant_indices[k]);
  }
  for (std::size_t k = 0; k < p.redundant_indices.size(); ++k) {
    p.redundant.col(static_cast<Eigen::Index>(k)) = J.col(p.redundant_indices[k]);
  }
  return p;
}

RobotModel crane8_model() {
  const double h = kPi / 2.0;
  auto prism = [](double a, double alpha, double d, double theta, double lo, double hi, double eff) {
    return JointSpec{JointKind::Prismatic, a, alpha, d, theta, lo, hi, eff};
  };
  auto rev = [](double a, double alpha, double d, double theta, double lo, double hi, double eff) {
    return JointSpec{JointKind::Revolute, a, alpha, d, theta, lo, hi, eff};
  };
  std::vector<JointSpec> joints = {
      prism(0.0, 0.0, 0.0, 0.0, -0.2, 0.2, 100.0),
      prism(0.0, -h, 0.0, -h, -0.2, 0.2, 100.0),
      prism(0.0, -h, 0.0, -h, -0.2, 0.2, 100.0),
      rev(0.0, 0.0, 0.0, 0.0, -2.0, 2.0, 5.0),
      rev(0.0, h, 0.0, h, -2.0, 2.0, 2.5),
      rev(7e-2, h, 0.0, 0.0, -2.0, 2.0, 1.25),
      rev(7e-2, h, 3e-2, -h, -2.0, 2.0, 1.25),
      prism(1e-2, -h, 2e-2, 0.0, 0.0, 0.18, 50.0),
  };

  std::vector<CollisionLinkSpec> links = {
      {"tube", 4, Vec3::Zero(), Vec3(0.0, 0.0, -0.7), false, 0.02, false},
      {"yaw_link", 5, Vec3::Zero(), Vec3::Zero(), true, 0.015, false},
      {"pitch_link", 6, Vec3::Zero(), Vec3::Zero(), true, 0.015, false},
      {"insertion_stage", 7, Vec3::Zero(), Vec3::Zero(), true, 0.012, true},
  };

  const Pose base = Pose::from_translation(Vec3(-0.10, 0.0, 0.08));
  const Pose tracker = Pose(rot_mat(Vec3::UnitZ(), h), Vec3(0.012, 0.0, -0.015));
  return RobotModel(std::move(joints), base, tracker, {4, 5}, {7}, std::move(links));
}

namespace {

std::string kind_name(JointKind k) {
  switch (k) {
    case JointKind::Revolute: return "revolute";
    case JointKind::Prismatic: return "prismatic";
    case JointKind::Fixed: return "fixed";
  }
  return "fixed";
}

JointKind kind_from(const std::string& s) {
  if (s == "revolute" || s == "r") return JointKind::Revolute;
  if (s == "prismatic" || s == "p") return JointKind::Prismatic;
  if (s == "fixed" || s == "-") return JointKind::Fixed;
  throw std::invalid_argument("unknown joint type '" + s + "'");
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

}  // namespace

void to_json(nlohmann::json& j, const RobotModel& m) {
  j = nlohmann::json::object();
  for (const auto& js : m.joints()) {
    j["joints"].push_back({{"type", kind_name(js.kind)},
                           {"a", js.dh_a},
                           {"alpha", js.dh_alpha},
                           {"d", js.dh_d},
                           {"theta", js.dh_theta},
                           {"limits", {js.lower, js.upper}},
                           {"effort", js.effort_limit}});
  }
  j["base_pose"] = m.base_pose();
  j["ee_offset"] = m.ee_offset();
  for (int i : m.redundant_indices()) j["redundant_joints"].push_back(i + 1);
  for (int i : m.excluded_indices()) j["excluded_joints"].push_back(i + 1);
  for (const auto& l : m.collision_links()) {
    nlohmann::json lj{{"name", l.name},
                      {"frame", l.frame},
                      {"p0", vec_json(l.p0)},
                      {"radius", l.radius},
                      {"insertion_mechanism", l.insertion_mechanism}};
    if (l.to_next_origin) {
      lj["p1"] = "next_origin";
    } else {
      lj["p1"] = vec_json(l.p1);
    }
    j["collision_links"].push_back(lj);
  }
}

RobotModel robot_model_from_json(const nlohmann::json& j) {
  std::vector<JointSpec> joints;
  for (const auto& jj : j.at("joints")) {
    JointSpec s;
    s.kind = kind_from(jj.at("type").get<std::string>());
    s.dh_a = jj.value("a", 0.0);
    s.dh_alpha = jj.value("alpha", 0.0);
    s.dh_d = jj.value("d", 0.0);
    s.dh_theta = jj.value("theta", 0.0);
    const auto lim = jj.at("limits").get<std::vector<double>>();
    if (lim.size() != 2) throw std::invalid_argument("joint limits need [min, max]");
    s.lower = lim[0];
    s.upper = lim[1];
    s.effort_limit = jj.value("effort", 0.0);
    joints.push_back(s);
  }
  auto indices = [&](const char* key) {
    std::vector<int> out;
    if (j.contains(key)) {
      for (int v : j.at(key).get<std::vector<int>>()) out.push_back(v - 1);
    }
    return out;
  };
  std::vector<CollisionLinkSpec> links;
  if (j.contains("collision_links")) {
    for (const auto& lj : j.at("collision_links")) {
      CollisionLinkSpec l;
      l.name = lj.value("name", std::string{});
      l.frame = lj.at("frame").get<int>();
      l.p0 = vec_from(lj.at("p0"));
      if (lj.at("p1").is_string()) {
        if (lj.at("p1").get<std::string>() != "next_origin") {
          throw std::invalid_argument("collision link p1 must be a 3-vector or \"next_origin\"");
        }
        l.to_next_origin = true;
      } else {
        l.p1 = vec_from(lj.at("p1"));
      }
      l.radius = lj.at("radius").get<double>();
      l.insertion_mechanism = lj.value("insertion_mechanism", false);
      links.push_back(l);
    }
  }
  const Pose base = j.contains("base_pose") ? j.at("base_pose").get<Pose>() : Pose();
  const Pose ee = j.contains("ee_offset") ? j.at("ee_offset").get<Pose>() : Pose();
  return RobotModel(std::move(joints), base, ee, indices("redundant_joints"), indices("excluded_joints"),
                    std::move(links));
}

RobotModel load_robot_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open robot config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("robot config '" + path + "': " + e.what());
  }
  return robot_model_from_json(j);
}

}  // namespace inbore
