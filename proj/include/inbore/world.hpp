#pragma once
// Obstacle scene around the robot: scanner bore, couch, patient proxy, and the
// signed distances between robot link capsules and those obstacles.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "inbore/robot_model.hpp"

namespace inbore {

enum class ObstacleClass { Bore, Patient, RobotSelf };

using ClassFilter = std::bitset<3>;
inline ClassFilter class_bit(ObstacleClass c) { return ClassFilter().set(static_cast<std::size_t>(c)); }
inline const ClassFilter kAllClasses = ClassFilter().set();

std::string to_string(ObstacleClass c);
ObstacleClass obstacle_class_from(const std::string& s);

struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.0;
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

/// Inward-facing cylindrical shell. The axis is the Z-axis of `pose`; the shell
/// is treated as unbounded along it for clearance (a robot leaving the bore
/// ends never touches the shell).
struct CylinderShell {
  Pose pose;
  double radius = 0.0;
  double length = 0.0;
};

struct Box {
  Pose pose;
  Vec3 half_extents = Vec3::Zero();
};

struct Ellipsoid {
  Pose pose;
  Vec3 semi_axes = Vec3::Zero();
};

/// Closed convex polyhedron given by triangles with outward winding, or an
/// open triangle soup (`closed = false`) measured by unsigned distance.
struct ConvexMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  bool closed = true;
};

using Shape = std::variant<CylinderShell, Capsule, Sphere, Box, Ellipsoid, ConvexMesh>;

struct Obstacle {
  std::string name;
  ObstacleClass cls = ObstacleClass::Bore;
  Shape shape;
};

/// Throws std::invalid_argument on non-positive dimensions or malformed meshes.
void validate(const Obstacle& o);

/// Signed distance from a point to a convex solid (negative inside).
double signed_distance(const Box& b, const Vec3& p);
double signed_distance(const Ellipsoid& e, const Vec3& p);
double signed_distance(const ConvexMesh& m, const Vec3& p);
double signed_distance(const Sphere& s, const Vec3& p);
double signed_distance(const Capsule& c, const Vec3& p);

/// Closest distance between two segments.
double segment_segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1);
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Signed separation between a capsule and an obstacle shape.
double capsule_distance(const Capsule& c, const Shape& s);

struct PlacedLink {
  std::string name;
  Capsule capsule;
  bool insertion_mechanism = false;
};

/// Collision capsules of the robot posed at q, in declaration order.
std::vector<PlacedLink> link_geometry(const RobotModel& model, const JointConfig& q);
std::vector<PlacedLink> link_geometry(const RobotModel& model, const FramePoses& frames);

class Environment {
 public:
  Environment() = default;
  /// Throws std::invalid_argument on invalid obstacles, bore_radius ≤ 0 or padding < 0.
  Environment(std::vector<Obstacle> obstacles, double bore_radius, double padding);

  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  double bore_radius() const { return bore_radius_; }
  double padding() const { return padding_; }

  Environment with_obstacle(Obstacle o) const;
  Environment transformed(const Pose& t) const;

  /// Bounding sphere of obstacle i; negative radius means unbounded.
  struct Bound {
    Vec3 center = Vec3::Zero();
    double radius = -1.0;
  };
  const Bound& bound(std::size_t i) const { return bounds_[i]; }

 private:
  static Bound bound_of(const Shape& s);

  std::vector<Obstacle> obstacles_;
  std::vector<Bound> bounds_;
  double bore_radius_ = 0.35;
  double padding_ = 0.01;
};

/// Minimum signed distance per obstacle class (+infinity when the class is empty).
struct ClassDistances {
  double bore = std::numeric_limits<double>::infinity();
  double patient = std::numeric_limits<double>::infinity();
  double robot_self = std::numeric_limits<double>::infinity();
  double min() const { return std::min({bore, patient, robot_self}); }
};

/// Per-class minima over (link, obstacle) pairs. Insertion-mechanism links are
/// ignored for the patient class; self pairs skip adjacent links. Pairs whose
/// bounding-sphere lower bound already exceeds `stop_above` may be skipped,
/// so any reported value above `stop_above` is only a lower bound.
ClassDistances class_distances(const Environment& env, const std::vector<PlacedLink>& links,
                               ClassFilter filter = kAllClasses,
                               double stop_above = std::numeric_limits<double>::infinity());

ClassDistances class_distances(const Environment& env, const RobotModel& model, const JointConfig& q,
                               ClassFilter filter = kAllClasses);

/// min over the filtered classes of the link-to-obstacle signed distance.
double distance_to_class(const Environment& env, const RobotModel& model, const JointConfig& q,
                         ClassFilter filter);

/// d_B(q) ≥ ε_d for every class.
bool in_c_free(const Environment& env, const RobotModel& model, const JointConfig& q);
bool in_c_free(const Environment& env, const std::vector<PlacedLink>& links);

// ---------------------------------------------------------------------------
// Patient proxy

enum class SexProfile { Male, Female };

std::string to_string(SexProfile s);
SexProfile sex_profile_from(const std::string& s);

struct SurfaceSample {
  Vec3 vertex = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct PatientProxy {
  SexProfile sex = SexProfile::Male;
  double sigma_bmi = 0.0;
  Ellipsoid torso;
  std::vector<Capsule> limbs;  ///< head first, then legs
  std::vector<SurfaceSample> surface;
};

/// Scene placement of the proxy.
struct BodyLayout {
  double couch_top_z = -0.18;     ///< m, couch surface in the scanner frame
  double torso_center_x = 0.0;    ///< m, along the bore axis
  int surface_samples = 10000;  ///< stratified torso samples; the default mask keeps > 2000 of them
};

/// Parametric body whose torso width and depth grow with σ-BMI. Throws
/// std::invalid_argument for σ outside [0, 3].
PatientProxy generate_patient(SexProfile sex, double sigma_bmi, std::uint64_t seed = 0,
                              const BodyLayout& layout = {});

std::vector<Obstacle> patient_obstacles(const PatientProxy& p);

/// Bore shell (R, L) along the scanner X-axis plus the couch slab.
std::vector<Obstacle> scanner_obstacles(double bore_radius, double bore_length, double couch_top_z);

/// Bore + couch + optional patient, with the default clearance padding.
Environment default_scene(const std::optional<PatientProxy>& patient, double bore_radius = 0.35,
                          double padding = 0.01);

/// Candidate skin region: axial band and upward-facing limit on the normal.
struct RegionMask {
  double x_min = -0.20;
  double x_max = 0.15;
  double min_normal_z = 0.35;
};

struct CandidateSet {
  std::vector<Pose> poses;  ///< translation = vertex, Z-axis = outward normal
  std::vector<SurfaceSample> samples;
  int skipped_degenerate = 0;
};

/// Pose with Z-axis along `normal`, rotating by acos(nᵀz) about z × n.
Pose surface_pose(const Vec3& vertex, const Vec3& normal);

/// Masked surface samples of the proxy, deterministically thinned to at most
/// `max_count` by stratified striding. Degenerate normals are skipped and counted.
CandidateSet sample_insertion_candidates(const PatientProxy& p, const RegionMask& mask, int max_count);

/// Same for a raw vertex/normal list (e.g. a loaded mesh).
CandidateSet candidates_from_samples(const std::vector<SurfaceSample>& samples, const RegionMask& mask,
                                     int max_count);

/// End-effector goal for a skin pose: offset by `standoff` along the outward
/// normal, needle axis pointing into the skin.
Pose needle_target(const Pose& skin_pose, double standoff);

// ---------------------------------------------------------------------------
// IO

/// ASCII STL or OBJ (by extension). `convex` keeps the file as one closed
/// convex piece; otherwise every triangle becomes an open piece.
std::vector<ConvexMesh> load_mesh(const std::string& path, bool convex);

struct SceneConfig {
  Environment env;
  std::optional<PatientProxy> patient;
  RegionMask mask;
};

SceneConfig scene_from_json(const nlohmann::json& j, const std::string& base_dir, std::uint64_t seed);
SceneConfig load_scene_config(const std::string& path, std::uint64_t seed);

}  // namespace inbore
