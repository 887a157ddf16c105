#pragma once
// Modified-DH serial chain: forward kinematics, space/body Jacobians and the
// redundant / non-redundant joint partition used by the planners.

#include <array>
#include <bitset>
#include <string>
#include <vector>

#include "inbore/se3.hpp"

namespace inbore {

inline constexpr int kNumJoints = 8;

using JointConfig = Eigen::Matrix<double, kNumJoints, 1>;
using Jacobian = Eigen::Matrix<double, 6, kNumJoints>;
/// Set of joint indices (0-based).
using JointMask = std::bitset<kNumJoints>;

/// Set bits in ascending order.
std::vector<int> mask_indices(const JointMask& m);
/// Throws std::invalid_argument for an index outside [0, 8).
JointMask mask_of(const std::vector<int>& idx);

enum class JointKind { Revolute, Prismatic, Fixed };

struct JointSpec {
  JointKind kind = JointKind::Revolute;
  double dh_a = 0.0;      ///< a_{i-1} (m)
  double dh_alpha = 0.0;  ///< α_{i-1} (rad)
  double dh_d = 0.0;      ///< d_i offset (m)
  double dh_theta = 0.0;  ///< θ_i offset (rad)
  double lower = 0.0;
  double upper = 0.0;
  double effort_limit = 0.0;  ///< N·m (revolute) or N (prismatic)
};

/// Capsule attached to one joint frame. Endpoints are expressed in that frame;
/// when `to_next_origin` is set the second endpoint is the next frame's origin.
struct CollisionLinkSpec {
  std::string name;
  int frame = 0;  ///< 0 = base, k = frame of joint k (1-based)
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  bool to_next_origin = false;
  double radius = 0.0;
  /// Needle insertion hardware; ignored for patient clearance.
  bool insertion_mechanism = false;
};

class RobotModel {
 public:
  /// Validates sizes, limits and the partition; throws std::invalid_argument.
  RobotModel(std::vector<JointSpec> joints, Pose base_pose, Pose ee_offset,
             std::vector<int> redundant_indices, std::vector<int> excluded_indices,
             std::vector<CollisionLinkSpec> links);

  int dof() const { return kNumJoints; }
  const JointSpec& joint(int i) const { return joints_[static_cast<std::size_t>(i)]; }
  const std::vector<JointSpec>& joints() const { return joints_; }
  const Pose& base_pose() const { return base_pose_; }
  /// Pose of the tip tracker sensor in the end-effector frame.
  const Pose& ee_offset() const { return ee_offset_; }
  const std::vector<int>& redundant_indices() const { return redundant_; }
  const std::vector<int>& excluded_indices() const { return excluded_; }
  const std::vector<CollisionLinkSpec>& collision_links() const { return links_; }

  /// Joints that are neither redundant nor excluded.
  std::vector<int> nonredundant_indices() const;
  /// Joints that may move during IK (everything not excluded).
  JointMask ik_mask() const;

  JointConfig lower_limits() const;
  JointConfig upper_limits() const;
  JointConfig effort_limits() const;
  bool within_limits(const JointConfig& q, double tol = 0.0) const;
  JointConfig clamp(const JointConfig& q) const;

  RobotModel with_base_pose(const Pose& base) const;
  RobotModel with_effort_limits(const JointConfig& limits) const;

 private:
  std::vector<JointSpec> joints_;
  Pose base_pose_;
  Pose ee_offset_;
  std::vector<int> redundant_;
  std::vector<int> excluded_;
  std::vector<CollisionLinkSpec> links_;
};

/// T_x(α, a)·T_z(θ, d) with q substituted into θ (revolute) or d (prismatic).
Pose dh_transform(const JointSpec& j, double q);

using FramePoses = std::array<Pose, kNumJoints + 1>;

/// World poses of the base (index 0) and joint frames 1..8.
FramePoses frame_poses(const RobotModel& model, const JointConfig& q);

/// Base-to-end-effector pose (frame 8), including the model's base pose.
Pose fk(const RobotModel& model, const JointConfig& q);

enum class JacobianFrame { Space, Body };

/// 6×8 Jacobian with twist rows ordered [v; ω]. Space columns are the joint
/// screw axes in the world frame; body columns are those expressed in the
/// end-effector frame (J^s = Ad(T_EE)·J^b).
Jacobian jacobian(const RobotModel& model, const JointConfig& q, JacobianFrame frame);
/// Same, from precomputed frame poses.
Jacobian jacobian(const RobotModel& model, const FramePoses& frames, JacobianFrame frame);

struct JacobianPartition {
  Eigen::MatrixXd nonredundant;  ///< J̃
  Eigen::MatrixXd redundant;     ///< J̊
  std::vector<int> nonredundant_indices;
  std::vector<int> redundant_indices;
};

/// Splits J into non-redundant and redundant column blocks; excluded columns
/// are dropped.
JacobianPartition partition_jacobian(const Eigen::MatrixXd& J, const RobotModel& model);

/// Rows of the body twist that the roll-free needle task constrains:
/// vx, vy, vz, ωx, ωy.
inline constexpr std::array<int, 5> kTaskRows = {0, 1, 2, 3, 4};

/// Default chain with the CRANE DH table, limits and collision proxies.
RobotModel crane8_model();

void to_json(nlohmann::json& j, const RobotModel& m);
RobotModel robot_model_from_json(const nlohmann::json& j);
RobotModel load_robot_config(const std::string& path);

}  // namespace inbore
