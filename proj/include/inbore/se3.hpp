#pragma once
// Rigid-body algebra shared by every module: rotations, poses, twists and the
// roll-free pose difference used by the planners and the servo loop.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace inbore {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Element of SO(3). Construction from raw matrices is validated; products of
/// valid rotations are trusted.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }
  /// Throws std::invalid_argument unless columns are orthonormal and det = +1 (1e-9).
  static Rotation from_matrix(const Mat3& m);
  /// Quaternion (w, x, y, z); accepted when |‖q‖ − 1| ≤ 1e-6, then normalized.
  static Rotation from_quaternion(double w, double x, double y, double z);
  /// No validation; the caller guarantees an SO(3) matrix (hot kinematics paths).
  static Rotation trusted(const Mat3& m) { return Rotation(m, Unchecked{}); }

  const Mat3& matrix() const { return m_; }
  Vec3 x_axis() const { return m_.col(0); }
  Vec3 y_axis() const { return m_.col(1); }
  Vec3 z_axis() const { return m_.col(2); }

  Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Unit quaternion as (w, x, y, z) with w ≥ 0.
  Eigen::Vector4d quaternion_wxyz() const;

  /// Re-orthonormalize after long product chains.
  Rotation normalized() const;

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}
  friend Rotation rot_mat(const Vec3& axis, double angle);
  friend class Pose;

  Mat3 m_;
};

/// Rotation of `angle` radians about the unit vector `axis` (Rodrigues).
/// Throws std::invalid_argument when |‖axis‖ − 1| > 1e-9.
Rotation rot_mat(const Vec3& axis, double angle);

/// Homogeneous transform in SE(3).
class Pose {
 public:
  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rotation_(r), translation_(t) {}

  static Pose identity() { return Pose(); }
  static Pose from_translation(const Vec3& t) { return Pose(Rotation(), t); }
  /// Throws std::invalid_argument if the rotation block is invalid or the
  /// bottom row is not [0 0 0 1].
  static Pose from_matrix(const Mat4& m);

  const Rotation& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Mat4 matrix() const;
  Pose inverse() const;
  Pose operator*(const Pose& o) const {
    return Pose(rotation_ * o.rotation_, rotation_ * o.translation_ + translation_);
  }
  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }

 private:
  Rotation rotation_;
  Vec3 translation_ = Vec3::Zero();
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& p) { return p.inverse(); }

/// Position and roll-free orientation difference between two poses.
struct PoseError {
  Vec3 position = Vec3::Zero();     ///< t_target − t_current (m)
  Vec3 orientation = Vec3::Zero();  ///< axis·angle between the Z-axes (rad)

  /// [position; orientation]
  Vec6 stacked() const;
  double position_norm() const { return position.norm(); }
  double orientation_norm() const { return orientation.norm(); }
};

/// Difference from `current` to `target`. Only the misalignment of the Z
/// (needle) axes contributes to the orientation part; roll about Z is free.
/// The orientation vector is the rotation that carries the current Z-axis onto
/// the target Z-axis, expressed in the common base frame.
PoseError pose_error(const Pose& target, const Pose& current);

Mat3 skew(const Vec3& v);

/// Adjoint for twists ordered [v; ω].
Mat6 adjoint(const Pose& p);

/// Pose translated by `dp` and rotated by the small rotation vector `dw`
/// (both in the base frame).
Pose perturb(const Pose& p, const Vec3& dp, const Vec3& dw);

/// Rotation whose Z-axis is the unit vector `z` (shortest-arc alignment).
Rotation align_z_axis(const Vec3& z);

void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);

}  // namespace inbore
