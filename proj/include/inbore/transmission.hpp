#pragma once
// Cable transmission: motor/joint coupling, tendon stretch, pulley bearing
// loads and the static compliance seen at the needle.

#include <array>
#include <string>

#include "inbore/robot_model.hpp"

namespace inbore {

using Mat8 = Eigen::Matrix<double, kNumJoints, kNumJoints>;
using Vec8 = JointConfig;
using Mat4d = Eigen::Matrix4d;

/// q = blockdiag(M_b, M_c)·θ. M_b acts on the base stages and the trunnion roll
/// (joints 1-4), M_c on the cable-driven wrist and insertion (joints 5-8).
class CouplingModel {
 public:
  /// Throws std::invalid_argument if M_b is not diagonal, M_c is not lower
  /// triangular, or the assembled matrix is singular.
  CouplingModel(const Mat4d& m_base, const Mat4d& m_cable);

  const Mat4d& base_block() const { return mb_; }
  const Mat4d& cable_block() const { return mc_; }
  const Mat8& matrix() const { return m_; }
  const Mat8& inverse_matrix() const { return m_inv_; }

 private:
  Mat4d mb_;
  Mat4d mc_;
  Mat8 m_;
  Mat8 m_inv_;
};

/// Gear/capstan ratios of the CRANE prototype.
CouplingModel crane8_coupling();

JointConfig actuator_to_joint(const CouplingModel& c, const Vec8& theta);
Vec8 joint_to_actuator(const CouplingModel& c, const JointConfig& q);

struct CableParams {
  double youngs_modulus = 120e9;   ///< Pa
  double nominal_length = 0.5;     ///< m
  double cross_section = 0.0;      ///< m²
  double capstan_radius = 0.005;   ///< m
};

/// Throws std::invalid_argument unless every field is strictly positive.
void validate(const CableParams& p);

struct CableStretch {
  double length = 0.0;  ///< ΔL (m)
  double angle = 0.0;   ///< Δθ at the capstan (rad)
};

/// ΔL = F·L0/(A·E), Δθ = ΔL/(2π·r). Rejects F < 0.
CableStretch cable_stretch(const CableParams& p, double force);

/// Two springs in series. Rejects non-positive inputs.
double series_stiffness(double k_link, double k_cable);

/// Radial bearing load of a pulley wrapped by angle `wrap`: F_c·sin(wrap/2).
double pulley_load(double cable_tension, double wrap);

struct PulleyGeometry {
  double rated_load = 117.0;  ///< F_r (N)
  double wrap_offset = kPi;   ///< wrap angle at q = 0 (rad)
  double joint_radius = 0.01; ///< r_jp (m)
};

/// Largest output torque (revolute) or force (prismatic) for which no pulley
/// bearing exceeds its rating anywhere in [lower, upper]. The wrap angle is
/// q + wrap_offset; samples whose wrap leaves (0, 2π) carry no bearing load.
/// Returns +infinity when no sample loads the bearing.
double transmission_rating(const PulleyGeometry& g, double lower, double upper, JointKind kind);

/// Everything the statics and the plant need about the cable drive.
struct TransmissionModel {
  CouplingModel coupling = crane8_coupling();
  std::array<CableParams, 4> cables;      ///< joints 5..8
  std::array<PulleyGeometry, 4> pulleys;  ///< joints 5..8
  double compliance_scale = 1.0;          ///< fitted multiplier on the cable compliance
  double link_stiffness = 1790.0;         ///< N/m, end-effector link bending
};

/// Default cable drive: E = 120 GPa, Ø0.9 mm cable, compliance scaled so the
/// end-effector cable stiffness is 0.80 N/mm at q = 0 under a vertical load.
TransmissionModel crane8_transmission(const RobotModel& model);

/// Diagonal joint-space compliance (rad/N·m or m/N) of joints 1..8; the base
/// stages are treated as rigid.
JointConfig joint_compliance(const TransmissionModel& t, const RobotModel& model);

/// Translational stiffness of the cable drive at the end-effector along the
/// unit world direction `dir` (N/m).
double ee_cable_stiffness(const TransmissionModel& t, const RobotModel& model, const JointConfig& q,
                          const Vec3& dir);

struct StaticDeflection {
  JointConfig dq = JointConfig::Zero();  ///< cable-induced joint deflection
  Vec3 link_offset = Vec3::Zero();       ///< link bending at the tip, EE frame (m)
};

/// Quasi-static response to the wrench [force; moment] applied to the
/// end-effector and expressed in the end-effector frame.
StaticDeflection static_deflection(const TransmissionModel& t, const RobotModel& model, const JointConfig& q,
                                   const Vec6& wrench_body);

/// Tip pose under load: fk at q + dq, then the link bending offset.
Pose deflected_fk(const RobotModel& model, const JointConfig& q, const StaticDeflection& d);

void to_json(nlohmann::json& j, const TransmissionModel& t);
/// Missing keys keep the defaults of `base`.
TransmissionModel transmission_from_json(const nlohmann::json& j, const TransmissionModel& base);

}  // namespace inbore
