#include "inbore/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace inbore {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// --- Eberly's robust point-to-ellipse/ellipsoid distance via the secular
// equation in the Lagrange parameter. Inputs are in the first octant with
// e0 >= e1 >= e2.

double robust_length(double a, double b) { return std::hypot(a, b); }
double robust_length(double a, double b, double c) { return std::sqrt(a * a + b * b + c * c); }

// Root of the convex, decreasing secular function on [s0, s1]. Newton from
// the left end converges monotonically; the bracket guards round-off.
template <class F>
double secular_root(double s0, double s1, F&& f) {
  double s = s0;
  for (int i = 0; i < 100; ++i) {
    double g = 0.0, dg = 0.0;
    f(s, g, dg);
    if (g <= 0.0) {
      s1 = s;
    } else {
      s0 = s;
    }
    double next = dg < 0.0 ? s - g / dg : 0.5 * (s0 + s1);
    if (!(next > s0 && next < s1)) next = 0.5 * (s0 + s1);
    if (std::abs(next - s) <= 1e-15 * (1.0 + std::abs(s)) || s1 - s0 <= 1e-15 * (1.0 + std::abs(s))) return next;
    s = next;
  }
  return s;
}

double root2(double r0, double z0, double z1, double g) {
  const double n0 = r0 * z0;
  const double s0 = z1 - 1.0;
  const double s1 = g < 0.0 ? 0.0 : robust_length(n0, z1) - 1.0;
  return secular_root(s0, s1, [&](double s, double& f, double& df) {
    const double a = n0 / (s + r0), b = z1 / (s + 1.0);
    f = a * a + b * b - 1.0;
    df = -2.0 * (a * a / (s + r0) + b * b / (s + 1.0));
  });
}

double root3(double r0, double r1, double z0, double z1, double z2, double g) {
  const double n0 = r0 * z0;
  const double n1 = r1 * z1;
  const double s0 = z2 - 1.0;
  const double s1 = g < 0.0 ? 0.0 : robust_length(n0, n1, z2) - 1.0;
  return secular_root(s0, s1, [&](double s, double& f, double& df) {
    const double a = n0 / (s + r0), b = n1 / (s + r1), c = z2 / (s + 1.0);
    f = a * a + b * b + c * c - 1.0;
    df = -2.0 * (a * a / (s + r0) + b * b / (s + r1) + c * c / (s + 1.0));
  });
}

double ellipse_distance(double e0, double e1, double y0, double y1) {
  if (y1 > 0.0) {
    if (y0 > 0.0) {
      const double z0 = y0 / e0, z1 = y1 / e1;
      const double g = z0 * z0 + z1 * z1 - 1.0;
      if (g != 0.0) {
        const double r0 = (e0 / e1) * (e0 / e1);
        const double sbar = root2(r0, z0, z1, g);
        const double x0 = r0 * y0 / (sbar + r0);
        const double x1 = y1 / (sbar + 1.0);
        return std::hypot(x0 - y0, x1 - y1);
      }
      return 0.0;
    }
    return std::abs(y1 - e1);
  }
  const double numer0 = e0 * y0;
  const double denom0 = e0 * e0 - e1 * e1;
  if (numer0 < denom0) {
    const double xde0 = numer0 / denom0;
    const double x0 = e0 * xde0;
    const double x1 = e1 * std::sqrt(std::max(0.0, 1.0 - xde0 * xde0));
    return std::hypot(x0 - y0, x1);
  }
  return std::abs(y0 - e0);
}

double ellipsoid_distance(double e0, double e1, double e2, double y0, double y1, double y2) {
  if (y2 > 0.0) {
    if (y1 > 0.0) {
      if (y0 > 0.0) {
        const double z0 = y0 / e0, z1 = y1 / e1, z2 = y2 / e2;
        const double g = z0 * z0 + z1 * z1 + z2 * z2 - 1.0;
        if (g != 0.0) {
          const double r0 = (e0 / e2) * (e0 / e2);
          const double r1 = (e1 / e2) * (e1 / e2);
          const double sbar = root3(r0, r1, z0, z1, z2, g);
          const double x0 = r0 * y0 / (sbar + r0);
          const double x1 = r1 * y1 / (sbar + r1);
          const double x2 = y2 / (sbar + 1.0);
          return robust_length(x0 - y0, x1 - y1, x2 - y2);
        }
        return 0.0;
      }
      return ellipse_distance(e1, e2, y1, y2);
    }
    if (y0 > 0.0) return ellipse_distance(e0, e2, y0, y2);
    return std::abs(y2 - e2);
  }
  const double denom0 = e0 * e0 - e2 * e2;
  const double denom1 = e1 * e1 - e2 * e2;
  const double numer0 = e0 * y0;
  const double numer1 = e1 * y1;
  if (numer0 < denom0 && numer1 < denom1) {
    const double xde0 = numer0 / denom0;
    const double xde1 = numer1 / denom1;
    const double discr = 1.0 - xde0 * xde0 - xde1 * xde1;
    if (discr > 0.0) {
      const double x0 = e0 * xde0, x1 = e1 * xde1, x2 = e2 * std::sqrt(discr);
      return robust_length(x0 - y0, x1 - y1, x2);
    }
  }
  return ellipse_distance(e0, e1, y0, y1);
}

// Minimum of a convex function on [0, 1].
template <class F>
double golden_min(F&& f) {
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < 30; ++i) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = f(x2);
    }
  }
  return std::min({f1, f2, f(0.0), f(1.0)});
}

Vec3 face_normal(const ConvexMesh& m, const std::array<int, 3>& f) {
  const Vec3& a = m.vertices[static_cast<std::size_t>(f[0])];
  const Vec3& b = m.vertices[static_cast<std::size_t>(f[1])];
  const Vec3& c = m.vertices[static_cast<std::size_t>(f[2])];
  return (b - a).cross(c - a).normalized();
}

// Cheap lower bound on the capsule-to-ellipsoid distance: in coordinates
// scaled by the semi-axes the ellipsoid is the unit ball, and the inverse
// scaling stretches lengths by at most 1/e_min.
double ellipsoid_lower_bound(const Ellipsoid& e, const Capsule& c) {
  const Pose inv = e.pose.inverse();
  const Vec3 a = (inv * c.a).cwiseQuotient(e.semi_axes);
  const Vec3 b = (inv * c.b).cwiseQuotient(e.semi_axes);
  return e.semi_axes.minCoeff() * (point_segment_distance(Vec3::Zero(), a, b) - 1.0) - c.radius;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

std::string to_string(ObstacleClass c) {
  switch (c) {
    case ObstacleClass::Bore: return "bore";
    case ObstacleClass::Patient: return "patient";
    case ObstacleClass::RobotSelf: return "robot_self";
  }
  return "bore";
}

ObstacleClass obstacle_class_from(const std::string& s) {
  if (s == "bore") return ObstacleClass::Bore;
  if (s == "patient") return ObstacleClass::Patient;
  if (s == "robot_self" || s == "robot") return ObstacleClass::RobotSelf;
  throw std::invalid_argument("unknown obstacle class '" + s + "'");
}

void validate(const Obstacle& o) {
  std::visit(Overloaded{
                 [&](const CylinderShell& s) {
                   require(s.radius > 0.0 && s.length > 0.0, o.name + ": shell radius and length must be > 0");
                 },
                 [&](const Capsule& c) { require(c.radius > 0.0, o.name + ": capsule radius must be > 0"); },
                 [&](const Sphere& s) { require(s.radius > 0.0, o.name + ": sphere radius must be > 0"); },
                 [&](const Box& b) {
                   require((b.half_extents.array() > 0.0).all(), o.name + ": box extents must be > 0");
                 },
                 [&](const Ellipsoid& e) {
                   require((e.semi_axes.array() > 0.0).all(), o.name + ": ellipsoid axes must be > 0");
                 },
                 [&](const ConvexMesh& m) {
                   require(!m.faces.empty(), o.name + ": mesh has no faces");
                   for (const auto& f : m.faces) {
                     for (int v : f) {
                       require(v >= 0 && static_cast<std::size_t>(v) < m.vertices.size(),
                               o.name + ": mesh face index out of range");
                     }
                   }
                   if (m.closed) {
                     require(m.faces.size() >= 4, o.name + ": closed mesh needs at least 4 faces");
                     for (const auto& f : m.faces) {
                       const Vec3 n = face_normal(m, f);
                       const Vec3& a = m.vertices[static_cast<std::size_t>(f[0])];
                       for (const Vec3& v : m.vertices) {
                         require(n.dot(v - a) <= 1e-9, o.name + ": mesh is not convex with outward faces");
                       }
                     }
                   }
                 },
             },
             o.shape);
}

double signed_distance(const Box& b, const Vec3& p) {
  const Vec3 local = b.pose.inverse() * p;
  const Vec3 q = local.cwiseAbs() - b.half_extents;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double signed_distance(const Ellipsoid& e, const Vec3& p) {
  const Vec3 local = (e.pose.inverse() * p).cwiseAbs();
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return e.semi_axes[i] > e.semi_axes[j]; });
  const double e0 = e.semi_axes[order[0]], e1 = e.semi_axes[order[1]], e2 = e.semi_axes[order[2]];
  const double y0 = local[order[0]], y1 = local[order[1]], y2 = local[order[2]];
  const double dist = ellipsoid_distance(e0, e1, e2, y0, y1, y2);
  const double level = (y0 / e0) * (y0 / e0) + (y1 / e1) * (y1 / e1) + (y2 / e2) * (y2 / e2);
  return level < 1.0 ? -dist : dist;
}

double signed_distance(const ConvexMesh& m, const Vec3& p) {
  if (m.closed) {
    double inside = -std::numeric_limits<double>::infinity();
    for (const auto& f : m.faces) {
      const Vec3 n = face_normal(m, f);
      inside = std::max(inside, n.dot(p - m.vertices[static_cast<std::size_t>(f[0])]));
    }
    if (inside <= 0.0) return inside;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : m.faces) {
    const Vec3 c = closest_point_on_triangle(p, m.vertices[static_cast<std::size_t>(f[0])],
                                             m.vertices[static_cast<std::size_t>(f[1])],
                                             m.vertices[static_cast<std::size_t>(f[2])]);
    best = std::min(best, (p - c).norm());
  }
  return best;
}

double signed_distance(const Sphere& s, const Vec3& p) { return (p - s.center).norm() - s.radius; }

double signed_distance(const Capsule& c, const Vec3& p) { return point_segment_distance(p, c.a, c.b) - c.radius; }

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

double segment_segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  // Closest points of two segments (Ericson, Real-Time Collision Detection 5.1.9).
  const Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  constexpr double kEps = 1e-18;
  double s = 0.0, t = 0.0;
  if (a <= kEps && e <= kEps) return r.norm();
  if (a <= kEps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kEps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > kEps * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p0 + s * d1) - (q0 + t * d2)).norm();
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double capsule_distance(const Capsule& cap, const Shape& s) {
  return std::visit(
      Overloaded{
          [&](const CylinderShell& sh) {
            const Vec3 axis = sh.pose.rotation().z_axis();
            const Vec3& o = sh.pose.translation();
            auto radial = [&](const Vec3& p) {
              const Vec3 d = p - o;
              return (d - d.dot(axis) * axis).norm();
            };
            // Radial distance is convex along the segment, so the farthest
            // point is an endpoint.
            return sh.radius - std::max(radial(cap.a), radial(cap.b)) - cap.radius;
          },
          [&](const Capsule& c) { return segment_segment_distance(cap.a, cap.b, c.a, c.b) - cap.radius - c.radius; },
          [&](const Sphere& sp) { return point_segment_distance(sp.center, cap.a, cap.b) - cap.radius - sp.radius; },
          [&](const auto& convex) {
            const Vec3 d = cap.b - cap.a;
            return golden_min([&](double t) { return signed_distance(convex, Vec3(cap.a + t * d)); }) - cap.radius;
          },
      },
      s);
}

std::vector<PlacedLink> link_geometry(const RobotModel& model, const JointConfig& q) {
  return link_geometry(model, frame_poses(model, q));
}

std::vector<PlacedLink> link_geometry(const RobotModel& model, const FramePoses& frames) {
  std::vector<PlacedLink> out;
  out.reserve(model.collision_links().size());
  for (const auto& l : model.collision_links()) {
    const Pose& f = frames[static_cast<std::size_t>(l.frame)];
    PlacedLink p;
    p.name = l.name;
    p.capsule.a = f * l.p0;
    p.capsule.b = l.to_next_origin ? frames[static_cast<std::size_t>(l.frame + 1)].translation() : f * l.p1;
    p.capsule.radius = l.radius;
    p.insertion_mechanism = l.insertion_mechanism;
    out.push_back(std::move(p));
  }
  return out;
}

Environment::Environment(std::vector<Obstacle> obstacles, double bore_radius, double padding)
    : obstacles_(std::move(obstacles)), bore_radius_(bore_radius), padding_(padding) {
  if (!(bore_radius_ > 0.0)) throw std::invalid_argument("bore radius must be > 0");
  if (!(padding_ >= 0.0)) throw std::invalid_argument("clearance padding must be >= 0");
  for (const auto& o : obstacles_) {
    validate(o);
    bounds_.push_back(bound_of(o.shape));
  }
}

Environment Environment::with_obstacle(Obstacle o) const {
  auto obs = obstacles_;
  obs.push_back(std::move(o));
  return Environment(std::move(obs), bore_radius_, padding_);
}

Environment Environment::transformed(const Pose& t) const {
  auto obs = obstacles_;
  for (auto& o : obs) {
    std::visit(Overloaded{
                   [&](CylinderShell& s) { s.pose = t * s.pose; },
                   [&](Capsule& c) {
                     c.a = t * c.a;
                     c.b = t * c.b;
                   },
                   [&](Sphere& s) { s.center = t * s.center; },
                   [&](Box& b) { b.pose = t * b.pose; },
                   [&](Ellipsoid& e) { e.pose = t * e.pose; },
                   [&](ConvexMesh& m) {
                     for (auto& v : m.vertices) v = t * v;
                   },
               },
               o.shape);
  }
  return Environment(std::move(obs), bore_radius_, padding_);
}

Environment::Bound Environment::bound_of(const Shape& s) {
  return std::visit(Overloaded{
                        [](const CylinderShell&) { return Bound{}; },
                        [](const Capsule& c) {
                          return Bound{0.5 * (c.a + c.b), 0.5 * (c.b - c.a).norm() + c.radius};
                        },
                        [](const Sphere& sp) { return Bound{sp.center, sp.radius}; },
                        [](const Box& b) { return Bound{b.pose.translation(), b.half_extents.norm()}; },
                        [](const Ellipsoid& e) { return Bound{e.pose.translation(), e.semi_axes.maxCoeff()}; },
                        [](const ConvexMesh& m) {
                          Vec3 c = Vec3::Zero();
                          for (const auto& v : m.vertices) c += v;
                          c /= static_cast<double>(std::max<std::size_t>(1, m.vertices.size()));
                          double r = 0.0;
                          for (const auto& v : m.vertices) r = std::max(r, (v - c).norm());
                          return Bound{c, r};
                        },
                    },
                    s);
}

ClassDistances class_distances(const Environment& env, const std::vector<PlacedLink>& links, ClassFilter filter,
                               double stop_above) {
  ClassDistances d;
  const auto& obs = env.obstacles();
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const Obstacle& o = obs[k];
    if (!filter.test(static_cast<std::size_t>(o.cls))) continue;
    double& slot = o.cls == ObstacleClass::Bore ? d.bore : o.cls == ObstacleClass::Patient ? d.patient : d.robot_self;
    const auto& bnd = env.bound(k);
    for (const auto& l : links) {
      if (o.cls == ObstacleClass::Patient && l.insertion_mechanism) continue;
      if (bnd.radius >= 0.0) {
        double lower = point_segment_distance(bnd.center, l.capsule.a, l.capsule.b) - bnd.radius - l.capsule.radius;
        if (lower >= slot || lower > stop_above) continue;
        if (const auto* e = std::get_if<Ellipsoid>(&o.shape)) {
          lower = ellipsoid_lower_bound(*e, l.capsule);
          if (lower >= slot || lower > stop_above) continue;
        }
      }
      slot = std::min(slot, capsule_distance(l.capsule, o.shape));
    }
  }
  if (filter.test(static_cast<std::size_t>(ObstacleClass::RobotSelf))) {
    for (std::size_t i = 0; i < links.size(); ++i) {
      for (std::size_t j = i + 2; j < links.size(); ++j) {
        const Capsule& a = links[i].capsule;
        const Capsule& b = links[j].capsule;
        d.robot_self = std::min(d.robot_self, segment_segment_distance(a.a, a.b, b.a, b.b) - a.radius - b.radius);
      }
    }
  }
  return d;
}

ClassDistances class_distances(const Environment& env, const RobotModel& model, const JointConfig& q,
                               ClassFilter filter) {
  return class_distances(env, link_geometry(model, q), filter);
}

double distance_to_class(const Environment& env, const RobotModel& model, const JointConfig& q,
                         ClassFilter filter) {
  return class_distances(env, model, q, filter).min();
}

bool in_c_free(const Environment& env, const RobotModel& model, const JointConfig& q) {
  return in_c_free(env, link_geometry(model, q));
}

bool in_c_free(const Environment& env, const std::vector<PlacedLink>& links) {
  const double eps = env.padding();
  return class_distances(env, links, kAllClasses, eps).min() >= eps;
}

// ---------------------------------------------------------------------------

std::string to_string(SexProfile s) { return s == SexProfile::Male ? "male" : "female"; }

SexProfile sex_profile_from(const std::string& s) {
  if (s == "male" || s == "m") return SexProfile::Male;
  if (s == "female" || s == "f") return SexProfile::Female;
  throw std::invalid_argument("unknown body profile '" + s + "' (expected male or female)");
}

PatientProxy generate_patient(SexProfile sex, double sigma_bmi, std::uint64_t seed, const BodyLayout& layout) {
  if (!(sigma_bmi >= 0.0 && sigma_bmi <= 3.0)) throw std::invalid_argument("sigma_bmi must lie in [0, 3]");
  if (layout.surface_samples < 1) throw std::invalid_argument("surface sample count must be >= 1");
  PatientProxy p;
  p.sex = sex;
  p.sigma_bmi = sigma_bmi;

  const bool male = sex == SexProfile::Male;
  const double girth = 1.0 + 0.12 * sigma_bmi;
  const double half_length = male ? 0.33 : 0.31;
  const double half_width = (male ? 0.17 : 0.155) * girth;
  const double half_depth = (male ? 0.11 : 0.10) * girth;
  const double zc = layout.couch_top_z;
  const double cx = layout.torso_center_x;

  p.torso.pose = Pose::from_translation(Vec3(cx, 0.0, zc + half_depth));
  p.torso.semi_axes = Vec3(half_length, half_width, half_depth);

  const double head_r = male ? 0.09 : 0.085;
  const double neck_x = cx - half_length - 0.02;
  p.limbs.push_back({Vec3(neck_x - head_r, 0.0, zc + head_r), Vec3(neck_x - head_r - 0.10, 0.0, zc + head_r), head_r});
  const double leg_r = (male ? 0.075 : 0.07) * (1.0 + 0.08 * sigma_bmi);
  const double hip_x = cx + half_length - 0.05;
  for (double side : {-1.0, 1.0}) {
    const double y = side * 0.5 * half_width;
    p.limbs.push_back({Vec3(hip_x, y, zc + leg_r), Vec3(hip_x + 0.75, y, zc + leg_r), leg_r});
  }

  // Stratified (u, φ) cells on the torso with seeded jitter; u runs along the
  // bore axis, φ = 0 is the top of the torso.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  const int n_u = std::max(1, static_cast<int>(std::lround(std::sqrt(layout.surface_samples * 1.6))));
  const int n_phi = std::max(1, layout.surface_samples / n_u);
  const Vec3 c = p.torso.pose.translation();
  for (int i = 0; i < n_u; ++i) {
    for (int k = 0; k < n_phi; ++k) {
      const double u = -1.0 + 2.0 * (i + jitter(rng)) / n_u;
      const double phi = -kPi + 2.0 * kPi * (k + jitter(rng)) / n_phi;
      const double ring = std::sqrt(std::max(0.0, 1.0 - u * u));
      const Vec3 local(half_length * u, half_width * ring * std::sin(phi), half_depth * ring * std::cos(phi));
      const Vec3 grad(local.x() / (half_length * half_length), local.y() / (half_width * half_width),
                      local.z() / (half_depth * half_depth));
      SurfaceSample s;
      s.vertex = c + local;
      s.normal = grad.norm() > 0.0 ? Vec3(grad.normalized()) : Vec3::Zero();
      p.surface.push_back(s);
    }
  }
  return p;
}

std::vector<Obstacle> patient_obstacles(const PatientProxy& p) {
  std::vector<Obstacle> out;
  out.push_back({"torso", ObstacleClass::Patient, p.torso});
  for (std::size_t i = 0; i < p.limbs.size(); ++i) {
    out.push_back({i == 0 ? "head" : "leg_" + std::to_string(i), ObstacleClass::Patient, p.limbs[i]});
  }
  return out;
}

std::vector<Obstacle> scanner_obstacles(double bore_radius, double bore_length, double couch_top_z) {
  std::vector<Obstacle> out;
  CylinderShell shell;
  shell.pose = Pose(rot_mat(Vec3::UnitY(), kPi / 2.0), Vec3::Zero());
  shell.radius = bore_radius;
  shell.length = bore_length;
  out.push_back({"bore", ObstacleClass::Bore, shell});
  Box couch;
  couch.half_extents = Vec3(1.0, 0.25, 0.03);
  couch.pose = Pose::from_translation(Vec3(0.2, 0.0, couch_top_z - couch.half_extents.z()));
  out.push_back({"couch", ObstacleClass::Bore, couch});
  return out;
}

Environment default_scene(const std::optional<PatientProxy>& patient, double bore_radius, double padding) {
  auto obs = scanner_obstacles(bore_radius, 1.6, BodyLayout{}.couch_top_z);
  if (patient) {
    for (auto& o : patient_obstacles(*patient)) obs.push_back(std::move(o));
  }
  return Environment(std::move(obs), bore_radius, padding);
}

Pose surface_pose(const Vec3& vertex, const Vec3& normal) {
  const Vec3 n = normal.normalized();
  const Vec3 z = Vec3::UnitZ();
  const double xi = std::acos(std::clamp(n.dot(z), -1.0, 1.0));
  const Vec3 delta = z.cross(n);
  const double s = delta.norm();
  if (s < 1e-12) {
    return Pose(xi < kPi / 2.0 ? Rotation::identity() : rot_mat(Vec3::UnitX(), kPi), vertex);
  }
  return Pose(rot_mat(delta / s, xi), vertex);
}

CandidateSet candidates_from_samples(const std::vector<SurfaceSample>& samples, const RegionMask& mask,
                                     int max_count) {
  if (max_count < 1) throw std::invalid_argument("candidate count must be >= 1");
  CandidateSet all;
  for (const auto& s : samples) {
    if (s.vertex.x() < mask.x_min || s.vertex.x() > mask.x_max) continue;
    if (!(s.normal.norm() > 1e-9)) {
      ++all.skipped_degenerate;
      continue;
    }
    const Vec3 n = s.normal.normalized();
    if (n.z() < mask.min_normal_z) continue;
    all.samples.push_back({s.vertex, n});
  }
  if (all.samples.empty()) throw std::invalid_argument("candidate region mask selects no surface samples");

  CandidateSet out;
  out.skipped_degenerate = all.skipped_degenerate;
  const std::size_t n = all.samples.size();
  const std::size_t keep = std::min<std::size_t>(n, static_cast<std::size_t>(max_count));
  for (std::size_t i = 0; i < keep; ++i) {
    const SurfaceSample& s = all.samples[i * n / keep];
    out.samples.push_back(s);
    out.poses.push_back(surface_pose(s.vertex, s.normal));
  }
  return out;
}

CandidateSet sample_insertion_candidates(const PatientProxy& p, const RegionMask& mask, int max_count) {
  return candidates_from_samples(p.surface, mask, max_count);
}

Pose needle_target(const Pose& skin_pose, double standoff) {
  const Vec3 n = skin_pose.rotation().z_axis();
  return Pose(skin_pose.rotation() * rot_mat(Vec3::UnitX(), kPi), skin_pose.translation() + standoff * n);
}

// ---------------------------------------------------------------------------

namespace {

Vec3 vec3_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

std::vector<ConvexMesh> split_triangles(const std::vector<Vec3>& verts, const std::vector<std::array<int, 3>>& faces,
                                        bool convex) {
  if (faces.empty()) throw std::invalid_argument("mesh file contains no triangles");
  if (convex) {
    ConvexMesh m{verts, faces, true};
    // Orient every face away from the vertex centroid.
    Vec3 c = Vec3::Zero();
    for (const auto& v : verts) c += v;
    c /= static_cast<double>(verts.size());
    for (auto& f : m.faces) {
      if (face_normal(m, f).dot(m.vertices[static_cast<std::size_t>(f[0])] - c) < 0.0) std::swap(f[1], f[2]);
    }
    return {m};
  }
  std::vector<ConvexMesh> out;
  for (const auto& f : faces) {
    ConvexMesh m;
    m.closed = false;
    for (int k = 0; k < 3; ++k) m.vertices.push_back(verts[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])]);
    m.faces.push_back({0, 1, 2});
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

std::vector<ConvexMesh> load_mesh(const std::string& path, bool convex) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open mesh '" + path + "'");
  const std::string ext = std::filesystem::path(path).extension().string();
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::string line;
  if (ext == ".obj" || ext == ".OBJ") {
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "v") {
        double x, y, z;
        if (!(ls >> x >> y >> z)) throw std::invalid_argument(path + ": malformed vertex line");
        verts.emplace_back(x, y, z);
      } else if (tag == "f") {
        std::vector<int> idx;
        std::string tok;
        while (ls >> tok) {
          const int v = std::stoi(tok.substr(0, tok.find('/')));
          idx.push_back(v > 0 ? v - 1 : static_cast<int>(verts.size()) + v);
        }
        if (idx.size() < 3) throw std::invalid_argument(path + ": face with fewer than 3 vertices");
        for (std::size_t k = 1; k + 1 < idx.size(); ++k) faces.push_back({idx[0], idx[k], idx[k + 1]});
      }
    }
  } else if (ext == ".stl" || ext == ".STL") {
    std::array<int, 3> tri{};
    int corner = 0;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "vertex") {
        double x, y, z;
        if (!(ls >> x >> y >> z)) throw std::invalid_argument(path + ": malformed vertex line");
        verts.emplace_back(x, y, z);
        tri[static_cast<std::size_t>(corner++)] = static_cast<int>(verts.size()) - 1;
        if (corner == 3) {
          faces.push_back(tri);
          corner = 0;
        }
      }
    }
  } else {
    throw std::invalid_argument("unsupported mesh format '" + ext + "' (expected .stl or .obj)");
  }
  for (const auto& f : faces) {
    for (int v : f) {
      if (v < 0 || static_cast<std::size_t>(v) >= verts.size()) {
        throw std::invalid_argument(path + ": face index out of range");
      }
    }
  }
  return split_triangles(verts, faces, convex);
}

SceneConfig scene_from_json(const nlohmann::json& j, const std::string& base_dir, std::uint64_t seed) {
  SceneConfig sc;
  double radius = 0.35, length = 1.6;
  if (j.contains("bore")) {
    radius = j.at("bore").value("radius", radius);
    length = j.at("bore").value("length", length);
  }
  const double couch = j.value("couch_top_z", BodyLayout{}.couch_top_z);
  const double padding = j.value("padding", 0.01);
  auto obs = scanner_obstacles(radius, length, couch);

  if (j.contains("patient") && !j.at("patient").is_null()) {
    const auto& pj = j.at("patient");
    BodyLayout layout;
    layout.couch_top_z = couch;
    layout.torso_center_x = pj.value("torso_center_x", layout.torso_center_x);
    layout.surface_samples = pj.value("surface_samples", layout.surface_samples);
    sc.patient = generate_patient(sex_profile_from(pj.value("sex", std::string("male"))),
                                  pj.value("sigma_bmi", 0.0), seed, layout);
    for (auto& o : patient_obstacles(*sc.patient)) obs.push_back(std::move(o));
  }
  if (j.contains("region_mask")) {
    const auto& m = j.at("region_mask");
    sc.mask.x_min = m.value("x_min", sc.mask.x_min);
    sc.mask.x_max = m.value("x_max", sc.mask.x_max);
    sc.mask.min_normal_z = m.value("min_normal_z", sc.mask.min_normal_z);
  }
  if (j.contains("obstacles")) {
    for (const auto& oj : j.at("obstacles")) {
      const std::string name = oj.value("name", std::string("obstacle"));
      const ObstacleClass cls = obstacle_class_from(oj.value("class", std::string("patient")));
      const std::string shape = oj.at("shape").get<std::string>();
      if (shape == "sphere") {
        obs.push_back({name, cls, Sphere{vec3_from(oj.at("center")), oj.at("radius").get<double>()}});
      } else if (shape == "capsule") {
        obs.push_back({name, cls, Capsule{vec3_from(oj.at("a")), vec3_from(oj.at("b")), oj.at("radius").get<double>()}});
      } else if (shape == "box") {
        obs.push_back({name, cls, Box{oj.value("pose", Pose()), vec3_from(oj.at("half_extents"))}});
      } else if (shape == "ellipsoid") {
        obs.push_back({name, cls, Ellipsoid{oj.value("pose", Pose()), vec3_from(oj.at("semi_axes"))}});
      } else if (shape == "cylinder_shell") {
        obs.push_back({name, cls,
                       CylinderShell{oj.value("pose", Pose()), oj.at("radius").get<double>(), oj.at("length").get<double>()}});
      } else if (shape == "mesh") {
        std::filesystem::path mp = oj.at("path").get<std::string>();
        if (mp.is_relative()) mp = std::filesystem::path(base_dir) / mp;
        int k = 0;
        for (auto& m : load_mesh(mp.string(), oj.value("convex", false))) {
          obs.push_back({name + "_" + std::to_string(k++), cls, std::move(m)});
        }
      } else {
        throw std::invalid_argument("unknown obstacle shape '" + shape + "'");
      }
    }
  }
  sc.env = Environment(std::move(obs), radius, padding);
  return sc;
}

SceneConfig load_scene_config(const std::string& path, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open scene config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("scene config '" + path + "': " + e.what());
  }
  return scene_from_json(j, std::filesystem::path(path).parent_path().string(), seed);
}

}  // namespace inbore
