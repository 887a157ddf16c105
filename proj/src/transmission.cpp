#include "inbore/transmission.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace inbore {

CouplingModel::CouplingModel(const Mat4d& m_base, const Mat4d& m_cable) : mb_(m_base), mc_(m_cable) {
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (r != c && m_base(r, c) != 0.0) throw std::invalid_argument("M_b must be diagonal");
      if (c > r && m_cable(r, c) != 0.0) throw std::invalid_argument("M_c must be lower triangular");
    }
  }
  if (!m_base.allFinite() || !m_cable.allFinite()) throw std::invalid_argument("coupling entries must be finite");
  m_ = Mat8::Zero();
  m_.topLeftCorner<4, 4>() = mb_;
  m_.bottomRightCorner<4, 4>() = mc_;
  // Block-triangular structure: the determinant is the product of diagonals.
  const double scale = m_.cwiseAbs().maxCoeff();
  for (int i = 0; i < kNumJoints; ++i) {
    if (!(std::abs(m_(i, i)) > 1e-12 * scale)) {
      throw std::invalid_argument("coupling matrix is singular (diagonal entry " + std::to_string(i + 1) + ")");
    }
  }
  m_inv_ = Mat8::Zero();
  m_inv_.topLeftCorner<4, 4>() = mb_.diagonal().cwiseInverse().asDiagonal();
  m_inv_.bottomRightCorner<4, 4>() =
      mc_.triangularView<Eigen::Lower>().solve(Mat4d::Identity());
}

CouplingModel crane8_coupling() {
  Mat4d mb = Eigen::Vector4d(0.637, 0.637, 1.27, -5.49).asDiagonal();
  mb *= 1e-3;
  Mat4d mc;
  mc << -0.21, 0.0, 0.0, 0.0,
        0.15, 0.20, 0.0, 0.0,
        -0.29, -0.20, 0.26, 0.0,
        2.4e-4, 3.0e-5, -2.3e-4, 2.6e-4;
  return CouplingModel(mb, mc);
}

JointConfig actuator_to_joint(const CouplingModel& c, const Vec8& theta) {
  JointConfig q;
  q.head<4>() = c.base_block().diagonal().cwiseProduct(theta.head<4>());
  q.tail<4>() = c.cable_block().triangularView<Eigen::Lower>() * theta.tail<4>();
  return q;
}

Vec8 joint_to_actuator(const CouplingModel& c, const JointConfig& q) {
  Vec8 theta;
  theta.head<4>() = q.head<4>().cwiseQuotient(c.base_block().diagonal());
  theta.tail<4>() = c.cable_block().triangularView<Eigen::Lower>().solve(q.tail<4>());
  return theta;
}

void validate(const CableParams& p) {
  if (!(p.youngs_modulus > 0.0) || !(p.nominal_length > 0.0) || !(p.cross_section > 0.0) ||
      !(p.capstan_radius > 0.0)) {
    throw std::invalid_argument("cable parameters must all be strictly positive");
  }
}

CableStretch cable_stretch(const CableParams& p, double force) {
  validate(p);
  if (!(force >= 0.0)) throw std::invalid_argument("cable tension must be >= 0");
  CableStretch s;
  s.length = force * p.nominal_length / (p.cross_section * p.youngs_modulus);
  s.angle = s.length / (2.0 * kPi * p.capstan_radius);
  return s;
}

double series_stiffness(double k_link, double k_cable) {
  if (!(k_link > 0.0) || !(k_cable > 0.0)) throw std::invalid_argument("stiffness values must be > 0");
  return k_link * k_cable / (k_link + k_cable);
}

double pulley_load(double cable_tension, double wrap) { return cable_tension * std::sin(wrap / 2.0); }

double transmission_rating(const PulleyGeometry& g, double lower, double upper, JointKind kind) {
  if (!(lower <= upper)) throw std::invalid_argument("transmission_rating needs lower <= upper");
  if (!(g.rated_load > 0.0) || !(g.joint_radius > 0.0)) {
    throw std::invalid_argument("pulley rated load and radius must be > 0");
  }
  constexpr int kSamples = 1024;
  double best_sin = 0.0;
  auto visit = [&](double q) {
    const double wrap = q + g.wrap_offset;
    if (wrap <= 0.0 || wrap >= 2.0 * kPi) return;
    best_sin = std::max(best_sin, std::sin(wrap / 2.0));
  };
  for (int i = 0; i < kSamples; ++i) {
    visit(lower + (upper - lower) * static_cast<double>(i) / (kSamples - 1));
  }
  // The load peaks at a half-turn wrap; include it so the grid cannot miss it.
  const double q_peak = kPi - g.wrap_offset;
  if (q_peak >= lower && q_peak <= upper) visit(q_peak);
  if (best_sin <= 0.0) return std::numeric_limits<double>::infinity();

  const double f_min = g.rated_load / best_sin;
  return kind == JointKind::Revolute ? f_min * g.joint_radius : f_min;
}

JointConfig joint_compliance(const TransmissionModel& t, const RobotModel& model) {
  JointConfig c = JointConfig::Zero();
  for (int k = 0; k < 4; ++k) {
    const CableParams& cp = t.cables[static_cast<std::size_t>(k)];
    validate(cp);
    const double axial = cp.nominal_length / (cp.cross_section * cp.youngs_modulus);
    const int joint = 4 + k;
    if (model.joint(joint).kind == JointKind::Revolute) {
      const double r = t.pulleys[static_cast<std::size_t>(k)].joint_radius;
      c[joint] = axial / (r * r);
    } else if (model.joint(joint).kind == JointKind::Prismatic) {
      c[joint] = axial;
    }
  }
  return t.compliance_scale * c;
}

namespace {

Eigen::Matrix<double, 3, kNumJoints> tip_velocity_jacobian(const RobotModel& model, const JointConfig& q) {
  const Jacobian jb = jacobian(model, q, JacobianFrame::Body);
  return fk(model, q).rotation().matrix() * jb.topRows<3>();
}

}  // namespace

double ee_cable_stiffness(const TransmissionModel& t, const RobotModel& model, const JointConfig& q,
                          const Vec3& dir) {
  const Vec3 u = dir.normalized();
  const auto jv = tip_velocity_jacobian(model, q);
  const JointConfig c = joint_compliance(t, model);
  const Eigen::Matrix<double, kNumJoints, 1> ju = jv.transpose() * u;
  const double compliance = ju.dot(c.cwiseProduct(ju));
  if (!(compliance > 0.0)) return std::numeric_limits<double>::infinity();
  return 1.0 / compliance;
}

TransmissionModel crane8_transmission(const RobotModel& model) {
  TransmissionModel t;
  const double area = kPi * 0.45e-3 * 0.45e-3;
  const std::array<double, 4> lengths = {0.80, 0.85, 0.90, 0.95};
  for (std::size_t k = 0; k < 4; ++k) {
    t.cables[k] = CableParams{120e9, lengths[k], area, 0.005};
  }
  // Radii sized so a 117 N bearing gives 2.5, 1.25 and 1.25 N·m; the insertion
  // idlers carry smaller 50 N bearings.
  t.pulleys[0] = PulleyGeometry{117.0, kPi, 2.5 / 117.0};
  t.pulleys[1] = PulleyGeometry{117.0, kPi, 1.25 / 117.0};
  t.pulleys[2] = PulleyGeometry{117.0, kPi, 1.25 / 117.0};
  t.pulleys[3] = PulleyGeometry{50.0, kPi, 0.01};
  t.compliance_scale = 1.0;
  t.link_stiffness = 1790.0;

  const double k_raw = ee_cable_stiffness(t, model, JointConfig::Zero(), Vec3::UnitZ());
  if (std::isfinite(k_raw)) t.compliance_scale = k_raw / 800.0;
  return t;
}

StaticDeflection static_deflection(const TransmissionModel& t, const RobotModel& model, const JointConfig& q,
                                   const Vec6& wrench_body) {
  StaticDeflection d;
  const Jacobian jb = jacobian(model, q, JacobianFrame::Body);
  const JointConfig tau = jb.transpose() * wrench_body;
  d.dq = joint_compliance(t, model).cwiseProduct(tau);
  if (t.link_stiffness > 0.0) d.link_offset = wrench_body.head<3>() / t.link_stiffness;
  return d;
}

Pose deflected_fk(const RobotModel& model, const JointConfig& q, const StaticDeflection& d) {
  const Pose tip = fk(model, q + d.dq);
  return tip * Pose::from_translation(d.link_offset);
}

namespace {

nlohmann::json mat4_json(const Mat4d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  return rows;
}

Mat4d mat4_from(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.size() != 4) throw std::invalid_argument("coupling block needs 4 rows");
  Mat4d m;
  for (int r = 0; r < 4; ++r) {
    if (rows[static_cast<std::size_t>(r)].size() != 4) throw std::invalid_argument("coupling block needs 4 columns");
    for (int c = 0; c < 4; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace

void to_json(nlohmann::json& j, const TransmissionModel& t) {
  j = nlohmann::json::object();
  j["coupling"] = {{"M_b", mat4_json(t.coupling.base_block())}, {"M_c", mat4_json(t.coupling.cable_block())}};
  for (const auto& c : t.cables) {
    j["cables"].push_back({{"E", c.youngs_modulus},
                           {"L0", c.nominal_length},
                           {"A", c.cross_section},
                           {"capstan_radius", c.capstan_radius}});
  }
  for (const auto& p : t.pulleys) {
    j["pulleys"].push_back(
        {{"rated_load", p.rated_load}, {"wrap_offset", p.wrap_offset}, {"joint_radius", p.joint_radius}});
  }
  j["compliance_scale"] = t.compliance_scale;
  j["link_stiffness"] = t.link_stiffness;
}

TransmissionModel transmission_from_json(const nlohmann::json& j, const TransmissionModel& base) {
  TransmissionModel t = base;
  if (j.contains("coupling")) {
    const auto& c = j.at("coupling");
    t.coupling = CouplingModel(mat4_from(c.at("M_b")), mat4_from(c.at("M_c")));
  }
  if (j.contains("cables")) {
    const auto& arr = j.at("cables");
    if (arr.size() != 4) throw std::invalid_argument("transmission needs 4 cable entries");
    for (std::size_t k = 0; k < 4; ++k) {
      CableParams& c = t.cables[k];
      c.youngs_modulus = arr[k].value("E", c.youngs_modulus);
      c.nominal_length = arr[k].value("L0", c.nominal_length);
      c.cross_section = arr[k].value("A", c.cross_section);
      c.capstan_radius = arr[k].value("capstan_radius", c.capstan_radius);
      validate(c);
    }
  }
  if (j.contains("pulleys")) {
    const auto& arr = j.at("pulleys");
    if (arr.size() != 4) throw std::invalid_argument("transmission needs 4 pulley entries");
    for (std::size_t k = 0; k < 4; ++k) {
      PulleyGeometry& p = t.pulleys[k];
      p.rated_load = arr[k].value("rated_load", p.rated_load);
      p.wrap_offset = arr[k].value("wrap_offset", p.wrap_offset);
      p.joint_radius = arr[k].value("joint_radius", p.joint_radius);
      if (!(p.rated_load > 0.0) || !(p.joint_radius > 0.0)) {
        throw std::invalid_argument("pulley rated load and radius must be > 0");
      }
    }
  }
  t.compliance_scale = j.value("compliance_scale", t.compliance_scale);
  t.link_stiffness = j.value("link_stiffness", t.link_stiffness);
  if (!(t.compliance_scale > 0.0) || !(t.link_stiffness >= 0.0)) {
    throw std::invalid_argument("compliance scale must be > 0 and link stiffness >= 0");
  }
  return t;
}

}  // namespace inbore
