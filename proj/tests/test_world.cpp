#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "generators.hpp"
#include "inbore/dexterity.hpp"
#include "inbore/world.hpp"

using namespace inbore;
using inbore::testing::Gen;

namespace {

double segment_point_oracle(const Vec3& a, const Vec3& b, const Vec3& p) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

// Brute force: nearest obstacle surface sample to the capsule axis, minus radius.
template <class SurfaceFn>
double surface_sampled_distance(const Capsule& c, int samples, Gen& g, SurfaceFn surface_point) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) best = std::min(best, segment_point_oracle(c.a, c.b, surface_point(g)));
  return best - c.radius;
}

RobotModel ball_robot(double r) {
  const RobotModel base = crane8_model();
  return RobotModel(base.joints(), Pose(), Pose(), {4, 5}, {7},
                    {CollisionLinkSpec{"ball", 0, Vec3::Zero(), Vec3::Zero(), false, r, false}});
}

Environment bore_only(double radius) {
  return Environment(scanner_obstacles(radius, 1.6, -10.0), radius, 0.01);
}

}  // namespace

TEST(LinkGeometry, CountAndFirstCapsuleAtBase) {
  const RobotModel m = crane8_model();
  const auto links = link_geometry(m, JointConfig::Zero());
  ASSERT_EQ(links.size(), m.collision_links().size());
  EXPECT_LT((links.front().capsule.a - m.base_pose().translation()).norm(), 1e-12);
}

TEST(LinkGeometry, EndpointsFollowFrameOrigins) {
  const RobotModel m = crane8_model();
  Gen g(61);
  for (int k = 0; k < 50; ++k) {
    const JointConfig q = g.config(m);
    const FramePoses f = frame_poses(m, q);
    const auto links = link_geometry(m, q);
    for (std::size_t i = 0; i < links.size(); ++i) {
      const CollisionLinkSpec& spec = m.collision_links()[i];
      const Pose& frame = f[static_cast<std::size_t>(spec.frame)];
      EXPECT_LT((links[i].capsule.a - frame * spec.p0).norm(), 1e-12);
      if (spec.to_next_origin) {
        EXPECT_LT((links[i].capsule.b - f[static_cast<std::size_t>(spec.frame + 1)].translation()).norm(), 1e-12);
      } else {
        EXPECT_LT((links[i].capsule.b - frame * spec.p1).norm(), 1e-12);
      }
      EXPECT_EQ(links[i].capsule.radius, spec.radius);
    }
  }
}

TEST(LinkGeometry, BaseTranslationMovesEveryCapsule) {
  const RobotModel m = crane8_model();
  const Vec3 shift(0.05, -0.02, 0.03);
  const RobotModel moved = m.with_base_pose(Pose::from_translation(shift) * m.base_pose());
  Gen g(62);
  const JointConfig q = g.config(m);
  const auto a = link_geometry(m, q), b = link_geometry(moved, q);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LT((b[i].capsule.a - a[i].capsule.a - shift).norm(), 1e-12);
    EXPECT_LT((b[i].capsule.b - a[i].capsule.b - shift).norm(), 1e-12);
  }
}

TEST(Distance, SphereAtBoreCenter) {
  for (double r : {0.01, 0.05, 0.2}) {
    const RobotModel m = ball_robot(r);
    const Environment env = bore_only(0.35);
    EXPECT_NEAR(distance_to_class(env, m, JointConfig::Zero(), class_bit(ObstacleClass::Bore)), 0.35 - r, 1e-12);
  }
}

TEST(Distance, SphereTouchingPatientCapsule) {
  const double r = 0.03;
  const RobotModel m = ball_robot(r);
  const Capsule limb{Vec3(-0.2, 0.1, 0.0), Vec3(0.2, 0.1, 0.0), 0.07};
  const Environment env({{"limb", ObstacleClass::Patient, limb}}, 0.35, 0.0);
  // Ball center at the origin: gap to the limb axis is 0.1, so 0.1 - 0.07 - r = 0.
  EXPECT_NEAR(distance_to_class(env, m, JointConfig::Zero(), class_bit(ObstacleClass::Patient)), 0.0, 1e-9);
}

TEST(Distance, PenetrationCrossesZeroAtRadiusGap) {
  const double r = 0.04, R = 0.35;
  const Environment env = bore_only(R);
  auto dist_at = [&](double y) {
    const RobotModel m = ball_robot(r).with_base_pose(Pose::from_translation(Vec3(0.0, y, 0.0)));
    return distance_to_class(env, m, JointConfig::Zero(), class_bit(ObstacleClass::Bore));
  };
  double lo = 0.0, hi = 0.5;
  ASSERT_GT(dist_at(lo), 0.0);
  ASSERT_LT(dist_at(hi), 0.0);
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (dist_at(mid) > 0.0 ? lo : hi) = mid;
  }
  EXPECT_NEAR(lo, R - r, 1e-6);
}

TEST(Distance, CapsuleVersusSampledSurfaces) {
  Gen g(63);
  int checked = 0;
  for (int k = 0; k < 20; ++k) {
    const Capsule c{g.vec3(0.3), g.vec3(0.3), g.uniform(0.005, 0.03)};
    const Vec3 center = g.vec3(0.2) + Vec3(0.6, 0.0, 0.0);
    const Vec3 axes(g.uniform(0.05, 0.15), g.uniform(0.05, 0.15), g.uniform(0.05, 0.15));
    const Rotation rot = g.rotation();

    const Sphere s{center, axes.x()};
    const double ds = capsule_distance(c, s);
    if (ds > 0.0) {
      const double oracle = surface_sampled_distance(c, 100000, g, [&](Gen& gg) {
        return Vec3(center + axes.x() * gg.unit_vector());
      });
      EXPECT_NEAR(ds, oracle, 2e-3) << "sphere " << k;
      ++checked;
    }

    const Ellipsoid e{Pose(rot, center), axes};
    const double de = capsule_distance(c, e);
    if (de > 0.0) {
      const double oracle = surface_sampled_distance(c, 100000, g, [&](Gen& gg) {
        const Vec3 u = gg.unit_vector();
        return Vec3(Pose(rot, center) * Vec3(axes.cwiseProduct(u)));
      });
      EXPECT_NEAR(de, oracle, 2e-3) << "ellipsoid " << k;
      ++checked;
    }

    const Box b{Pose(rot, center), axes};
    const double db = capsule_distance(c, b);
    if (db > 0.0) {
      const double oracle = surface_sampled_distance(c, 100000, g, [&](Gen& gg) {
        Vec3 p(gg.uniform(-1, 1), gg.uniform(-1, 1), gg.uniform(-1, 1));
        const int face = gg.integer(0, 2);
        p[face] = gg.uniform(0, 1) < 0.5 ? -1.0 : 1.0;
        return Vec3(Pose(rot, center) * Vec3(axes.cwiseProduct(p)));
      });
      EXPECT_NEAR(db, oracle, 2e-3) << "box " << k;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(Distance, ConvexMeshMatchesBox) {
  // Unit cube as a closed triangle mesh against the equivalent box.
  ConvexMesh cube;
  for (int i = 0; i < 8; ++i) cube.vertices.emplace_back(i & 1 ? 0.5 : -0.5, i & 2 ? 0.5 : -0.5, i & 4 ? 0.5 : -0.5);
  cube.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  const Box box{Pose(), Vec3(0.5, 0.5, 0.5)};
  Gen g(64);
  for (int k = 0; k < 500; ++k) {
    const Vec3 p = g.vec3(1.5);
    EXPECT_NEAR(signed_distance(cube, p), signed_distance(box, p), 1e-9);
  }
}

TEST(Distance, ClassUnionIsMinimumOfClasses) {
  const RobotModel m = crane8_model();
  const Environment env = default_scene(generate_patient(SexProfile::Male, 0.0, 1));
  Gen g(65);
  for (int k = 0; k < 100; ++k) {
    const JointConfig q = g.config(m);
    const double bore = distance_to_class(env, m, q, class_bit(ObstacleClass::Bore));
    const double pat = distance_to_class(env, m, q, class_bit(ObstacleClass::Patient));
    const double self = distance_to_class(env, m, q, class_bit(ObstacleClass::RobotSelf));
    EXPECT_DOUBLE_EQ(distance_to_class(env, m, q, kAllClasses), std::min({bore, pat, self}));
    EXPECT_DOUBLE_EQ(distance_to_class(env, m, q, class_bit(ObstacleClass::Bore) | class_bit(ObstacleClass::Patient)),
                     std::min(bore, pat));
  }
}

TEST(Distance, InvariantUnderRigidMotionOfScene) {
  const RobotModel m = crane8_model();
  const Environment env = default_scene(generate_patient(SexProfile::Male, 0.0, 1));
  Gen g(66);
  for (int k = 0; k < 20; ++k) {
    const Pose t = g.pose(0.5);
    const Environment moved = env.transformed(t);
    const RobotModel mm = m.with_base_pose(t * m.base_pose());
    const JointConfig q = g.config(m);
    const ClassDistances a = class_distances(env, m, q), b = class_distances(moved, mm, q);
    // Ellipsoid and box pairs use a golden-section line search (about sqrt(eps) accurate).
    EXPECT_NEAR(a.bore, b.bore, 1e-7);
    EXPECT_NEAR(a.patient, b.patient, 1e-7);
    EXPECT_NEAR(a.robot_self, b.robot_self, 1e-7);
  }
}

TEST(Distance, HomeIsCollisionFreeInDefaultScene) {
  const RobotModel m = crane8_model();
  const Environment env = default_scene(generate_patient(SexProfile::Male, 0.0, 1));
  EXPECT_TRUE(in_c_free(env, m, home_configuration()));
}

TEST(Environment, RejectsBadParameters) {
  EXPECT_THROW(Environment({}, 0.0, 0.01), std::invalid_argument);
  EXPECT_THROW(Environment({}, 0.35, -0.01), std::invalid_argument);
  EXPECT_THROW(Environment({{"s", ObstacleClass::Patient, Sphere{Vec3::Zero(), -1.0}}}, 0.35, 0.0),
               std::invalid_argument);
}

TEST(Patient, DeterministicForSameSeed) {
  const PatientProxy a = generate_patient(SexProfile::Female, 0.0, 5);
  const PatientProxy b = generate_patient(SexProfile::Female, 0.0, 5);
  ASSERT_EQ(a.surface.size(), b.surface.size());
  for (std::size_t i = 0; i < a.surface.size(); ++i) {
    EXPECT_EQ(a.surface[i].vertex, b.surface[i].vertex);
    EXPECT_EQ(a.surface[i].normal, b.surface[i].normal);
  }
  EXPECT_EQ(a.torso.semi_axes, b.torso.semi_axes);
}

TEST(Patient, GrowsWithSigmaAndReducesClearance) {
  for (SexProfile s : {SexProfile::Male, SexProfile::Female}) {
    const PatientProxy lean = generate_patient(s, 0.0, 1), big = generate_patient(s, 3.0, 1);
    EXPECT_GT(big.torso.semi_axes.y(), lean.torso.semi_axes.y());
    EXPECT_GT(big.torso.semi_axes.z(), lean.torso.semi_axes.z());
    // Clearance from the patient to a probe sphere at the top of the bore.
    const RobotModel probe = ball_robot(0.01).with_base_pose(Pose::from_translation(Vec3(0.0, 0.0, 0.3)));
    const double d_lean = distance_to_class(default_scene(lean), probe, JointConfig::Zero(),
                                            class_bit(ObstacleClass::Patient));
    const double d_big = distance_to_class(default_scene(big), probe, JointConfig::Zero(),
                                           class_bit(ObstacleClass::Patient));
    EXPECT_LT(d_big, d_lean);
  }
}

TEST(Patient, LeanMaleFitsInsideBore) {
  const PatientProxy p = generate_patient(SexProfile::Male, 0.0, 1);
  for (const auto& s : p.surface) EXPECT_LT(std::hypot(s.vertex.y(), s.vertex.z()), 0.35);
  const Vec3 c = p.torso.pose.translation();
  EXPECT_LT(std::hypot(c.y() + p.torso.semi_axes.y(), c.z()), 0.35);
  EXPECT_LT(c.z() + p.torso.semi_axes.z(), 0.35);
}

TEST(Patient, RejectsOutOfRangeSigma) {
  EXPECT_THROW(generate_patient(SexProfile::Male, -0.1), std::invalid_argument);
  EXPECT_THROW(generate_patient(SexProfile::Male, 3.1), std::invalid_argument);
}

TEST(Patient, SurfaceNormalsAreOutwardUnit) {
  const PatientProxy p = generate_patient(SexProfile::Male, 1.0, 3);
  const Vec3 c = p.torso.pose.translation();
  for (const auto& s : p.surface) {
    EXPECT_NEAR(s.normal.norm(), 1.0, 1e-12);
    EXPECT_GT(s.normal.dot(s.vertex - c), 0.0);
    EXPECT_NEAR(signed_distance(p.torso, s.vertex), 0.0, 1e-6);
  }
}

TEST(Candidates, UpwardNormalGivesIdentity) {
  EXPECT_LT((surface_pose(Vec3(1, 2, 3), Vec3::UnitZ()).rotation().matrix() - Mat3::Identity()).norm(), 1e-15);
}

TEST(Candidates, SidewaysNormalMatchesTwoVectorQuaternion) {
  const Mat3 oracle = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), Vec3::UnitX()).toRotationMatrix();
  EXPECT_LT((surface_pose(Vec3::Zero(), Vec3::UnitX()).rotation().matrix() - oracle).cwiseAbs().maxCoeff(), 1e-12);
  Gen g(67);
  for (int k = 0; k < 100; ++k) {
    Vec3 n = g.unit_vector();
    if (n.z() < -0.99) continue;
    const Mat3 o = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), n).toRotationMatrix();
    EXPECT_LT((surface_pose(Vec3::Zero(), n).rotation().matrix() - o).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Candidates, PoseZAxisIsSurfaceNormal) {
  const PatientProxy p = generate_patient(SexProfile::Male, 0.0, 1);
  const CandidateSet cs = sample_insertion_candidates(p, RegionMask{}, 500);
  ASSERT_FALSE(cs.poses.empty());
  EXPECT_LE(cs.poses.size(), 500u);
  for (std::size_t i = 0; i < cs.poses.size(); ++i) {
    EXPECT_LT((cs.poses[i].rotation().z_axis() - cs.samples[i].normal).norm(), 1e-9);
    EXPECT_EQ(cs.poses[i].translation(), cs.samples[i].vertex);
    const Vec3& v = cs.samples[i].vertex;
    EXPECT_GE(v.x(), RegionMask{}.x_min);
    EXPECT_LE(v.x(), RegionMask{}.x_max);
    EXPECT_GE(cs.samples[i].normal.z(), RegionMask{}.min_normal_z);
  }
}

TEST(Candidates, DegenerateNormalsSkippedAndCounted) {
  std::vector<SurfaceSample> samples = {{Vec3(0, 0, 0), Vec3::UnitZ()}, {Vec3(0.01, 0, 0), Vec3::Zero()}};
  const CandidateSet cs = candidates_from_samples(samples, RegionMask{}, 10);
  EXPECT_EQ(cs.poses.size(), 1u);
  EXPECT_EQ(cs.skipped_degenerate, 1);
}

TEST(Candidates, NeedleTargetSitsAboveSkinPointingIn) {
  const Pose skin = surface_pose(Vec3(0.1, 0.0, 0.0), Vec3(0.0, 0.6, 0.8));
  const Pose t = needle_target(skin, 0.025);
  EXPECT_LT((t.translation() - (skin.translation() + 0.025 * Vec3(0.0, 0.6, 0.8))).norm(), 1e-12);
  EXPECT_LT((t.rotation().z_axis() + Vec3(0.0, 0.6, 0.8)).norm(), 1e-12);
}

TEST(SceneConfig, ShippedSceneMatchesDefault) {
  const RobotModel m = crane8_model();
  const SceneConfig sc = load_scene_config(INBORE_CONFIG_DIR "/scene.json", 1);
  const Environment ref = default_scene(generate_patient(SexProfile::Male, 0.0, 1));
  ASSERT_TRUE(sc.patient.has_value());
  Gen g(68);
  for (int k = 0; k < 50; ++k) {
    const JointConfig q = g.config(m);
    const ClassDistances a = class_distances(sc.env, m, q), b = class_distances(ref, m, q);
    EXPECT_DOUBLE_EQ(a.bore, b.bore);
    EXPECT_DOUBLE_EQ(a.patient, b.patient);
  }
}

TEST(SceneConfig, ObstacleListAndBadShape) {
  const nlohmann::json j = {{"obstacles", {{{"shape", "sphere"}, {"class", "patient"}, {"center", {0, 0, 0}},
                                            {"radius", 0.05}}}}};
  const SceneConfig sc = scene_from_json(j, ".", 1);
  EXPECT_EQ(sc.env.obstacles().size(), 3u);  // bore, couch, sphere
  const nlohmann::json bad = {{"obstacles", {{{"shape", "torus"}}}}};
  EXPECT_ANY_THROW(scene_from_json(bad, ".", 1));
}

TEST(Mesh, LoadsObjAndStl) {
  const auto dir = std::filesystem::temp_directory_path() / "inbore_mesh_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream obj(dir / "tet.obj");
    obj << "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
    std::ofstream stl(dir / "tri.stl");
    stl << "solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\nendloop\nendfacet\n"
           "endsolid t\n";
  }
  const auto tet = load_mesh((dir / "tet.obj").string(), true);
  ASSERT_EQ(tet.size(), 1u);
  EXPECT_LT(signed_distance(tet[0], Vec3(0.1, 0.1, 0.1)), 0.0);
  EXPECT_NEAR(signed_distance(tet[0], Vec3(-0.5, 0.2, 0.2)), 0.5, 1e-12);
  const auto tri = load_mesh((dir / "tri.stl").string(), false);
  ASSERT_EQ(tri.size(), 1u);
  EXPECT_NEAR(signed_distance(tri[0], Vec3(0.2, 0.2, 0.3)), 0.3, 1e-12);
  EXPECT_THROW(load_mesh((dir / "missing.obj").string(), true), std::invalid_argument);
}
