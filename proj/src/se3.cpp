#include "inbore/se3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace inbore {

namespace {
constexpr double kOrthoTol = 1e-9;
constexpr double kQuatTol = 1e-6;
}  // namespace

Rotation Rotation::from_matrix(const Mat3& m) {
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = m.determinant();
  if (!std::isfinite(ortho) || ortho > kOrthoTol || std::abs(det - 1.0) > kOrthoTol) {
    throw std::invalid_argument("rotation matrix is not in SO(3) (orthogonality error " +
                                std::to_string(ortho) + ", det " + std::to_string(det) + ")");
  }
  return Rotation(m, Unchecked{});
}

Rotation Rotation::from_quaternion(double w, double x, double y, double z) {
  Eigen::Quaterniond q(w, x, y, z);
  const double n = q.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > kQuatTol) {
    throw std::invalid_argument("quaternion norm " + std::to_string(n) + " is not within 1e-6 of 1");
  }
  q.normalize();
  return Rotation(q.toRotationMatrix(), Unchecked{});
}

Eigen::Vector4d Rotation::quaternion_wxyz() const {
  Eigen::Quaterniond q(m_);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  return {q.w(), q.x(), q.y(), q.z()};
}

Rotation Rotation::normalized() const {
  Eigen::JacobiSVD<Mat3> svd(m_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return Rotation(r, Unchecked{});
}

Rotation rot_mat(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > kOrthoTol) {
    throw std::invalid_argument("rot_mat axis must be a unit vector (norm " + std::to_string(n) + ")");
  }
  const Mat3 k = skew(axis);
  const Mat3 r = Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
  return Rotation(r, Rotation::Unchecked{});
}

Pose Pose::from_matrix(const Mat4& m) {
  const Eigen::RowVector4d bottom = m.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > kOrthoTol) {
    throw std::invalid_argument("homogeneous transform bottom row must be [0 0 0 1]");
  }
  return Pose(Rotation::from_matrix(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>());
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_.matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose Pose::inverse() const {
  const Rotation rt = rotation_.inverse();
  return Pose(rt, -(rt * translation_));
}

Vec6 PoseError::stacked() const {
  Vec6 e;
  e << position, orientation;
  return e;
}

PoseError pose_error(const Pose& target, const Pose& current) {
  PoseError e;
  e.position = target.translation() - current.translation();

  const Vec3 zt = target.rotation().z_axis();
  const Vec3 zc = current.rotation().z_axis();
  const double c = std::clamp(zt.dot(zc) / (zt.norm() * zc.norm()), -1.0, 1.0);
  const double angle = std::acos(c);
  if (angle == 0.0) return e;

  Vec3 axis = zc.cross(zt);
  const double s = axis.norm();
  if (s > 1e-12) {
    axis /= s;
  } else {
    // Antiparallel: any axis orthogonal to the current Z-axis works; take the
    // first basis vector that survives projection.
    for (int i = 0; i < 3; ++i) {
      Vec3 ei = Vec3::Unit(i);
      axis = ei - ei.dot(zc) * zc / zc.squaredNorm();
      if (axis.norm() > 1e-6) break;
    }
    axis.normalize();
  }
  e.orientation = angle * axis;
  return e;
}

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

Mat6 adjoint(const Pose& p) {
  const Mat3& r = p.rotation().matrix();
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = r;
  ad.topRightCorner<3, 3>() = skew(p.translation()) * r;
  ad.bottomRightCorner<3, 3>() = r;
  return ad;
}

Pose perturb(const Pose& p, const Vec3& dp, const Vec3& dw) {
  const double angle = dw.norm();
  const Rotation dr = angle > 0.0 ? rot_mat(dw / angle, angle) : Rotation::identity();
  return Pose(dr * p.rotation(), p.translation() + dp);
}

Rotation align_z_axis(const Vec3& z) {
  const Vec3 n = z.normalized();
  const Vec3 ez = Vec3::UnitZ();
  const double c = std::clamp(ez.dot(n), -1.0, 1.0);
  const Vec3 axis = ez.cross(n);
  const double s = axis.norm();
  if (s < 1e-12) {
    return c > 0 ? Rotation::identity() : rot_mat(Vec3::UnitX(), kPi);
  }
  return rot_mat(axis / s, std::acos(c));
}

void to_json(nlohmann::json& j, const Pose& p) {
  const Eigen::Vector4d q = p.rotation().quaternion_wxyz();
  const Vec3& t = p.translation();
  j = nlohmann::json{{"t", {t.x(), t.y(), t.z()}}, {"q", {q[0], q[1], q[2], q[3]}}};
}

void from_json(const nlohmann::json& j, Pose& p) {
  const auto t = j.at("t").get<std::vector<double>>();
  const auto q = j.at("q").get<std::vector<double>>();
  if (t.size() != 3 || q.size() != 4) {
    throw std::invalid_argument("pose JSON needs \"t\" with 3 entries and \"q\" with 4 entries");
  }
  p = Pose(Rotation::from_quaternion(q[0], q[1], q[2], q[3]), Vec3(t[0], t[1], t[2]));
}

}  // namespace inbore
