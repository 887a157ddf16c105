#pragma once
// Reachability sweeps over patient-body candidates, joint-subset ablation and
// paired statistics between subsets.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "inbore/ik_planning.hpp"

namespace inbore {

struct BodyDescriptor {
  SexProfile sex = SexProfile::Male;
  double sigma_bmi = 0.0;
  std::uint64_t seed = 1;
};

/// "male:0", "female:1.5" (seed is carried separately).
std::string body_label(const BodyDescriptor& b);
/// Parses "male:σ" or "female:σ"; throws std::invalid_argument otherwise.
BodyDescriptor parse_body(const std::string& text, std::uint64_t seed);

struct JointSubset {
  std::string label;
  JointMask joints;
};

/// 5dof (base stages, trunnion roll, needle pitch), 6dof (+insertion),
/// 7dof-yaw and 7dof-pitch (+ one wrist joint) and 8dof (all).
std::vector<JointSubset> standard_subsets();
JointSubset subset_by_label(const std::string& label);

struct Candidate {
  int id = 0;
  Vec3 vertex = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Pose target;  ///< needle pose above the skin
};

/// Thinned surface samples inside the region mask, at most `max_count`, each
/// turned into a needle target `standoff` above the skin.
std::vector<Candidate> make_candidates(const PatientProxy& body, const RegionMask& mask, int max_count,
                                       double standoff);

struct ReachabilityRecord {
  int id = 0;
  Vec3 vertex = Vec3::Zero();
  bool reachable = false;
  double cost = kCostInfeasible;
  std::optional<JointConfig> q_star;
  double wall_time = 0.0;  ///< s
  bool timed_out = false;
  int cone_reached = 0;
  int cone_total = 0;

  /// Share of the adjustment cone reached from the returned (or best nominal)
  /// configuration.
  double cone_fraction() const { return cone_total > 0 ? static_cast<double>(cone_reached) / cone_total : 0.0; }
};

struct SweepReport {
  BodyDescriptor body;
  std::string subset;
  std::vector<ReachabilityRecord> records;
  double fraction = 0.0;  ///< reachable / total

  int reachable_count() const;
};

struct SweepSettings {
  PlannerSettings planner;
  /// Configuration that frozen joints hold and the cost's home term uses.
  JointConfig nominal = JointConfig::Zero();
  int jobs = 1;  ///< candidates evaluated concurrently
};

/// Δ_adj = 60°, 9 revolute / 3 insertion grid points and no refinement: the
/// coarse grid keeps 2000-candidate sweeps at desk scale while still
/// containing the nominal value of every joint.
SweepSettings default_sweep_settings();
/// Home posture with the needle pointing down: q4 = −π/2, q7 = π/2.
JointConfig home_configuration();

/// Runs optimize_setup for every candidate with joints outside the subset
/// frozen at the nominal configuration. Records come back in candidate order.
SweepReport sweep(const RobotModel& model, const Environment& env, const BodyDescriptor& body,
                  const std::vector<Candidate>& candidates, const JointSubset& subset, const SweepSettings& s);

/// One sweep per subset on the same candidates.
std::vector<SweepReport> ablate(const RobotModel& model, const Environment& env, const BodyDescriptor& body,
                                const std::vector<Candidate>& candidates, const std::vector<JointSubset>& subsets,
                                const SweepSettings& s);

struct PairedTTest {
  int n = 0;
  double mean_difference = 0.0;  ///< mean of a − b
  double t = 0.0;
  double p = 1.0;                ///< two-sided
  bool degenerate = false;       ///< zero variance of the differences; p undefined unless all differences vanish
};

/// Classical paired t statistic on the per-candidate reachability indicators.
/// Throws std::invalid_argument for unaligned ids or n < 2.
PairedTTest paired_t_test(const SweepReport& a, const SweepReport& b);
/// Same statistic on raw paired samples.
PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct MonotonicityViolation {
  std::string smaller;
  std::string larger;
  int candidate_id = 0;
};

/// For every pair of reports whose subsets nest, candidates reachable with
/// the smaller subset but not with the larger one.
std::vector<MonotonicityViolation> monotonicity_violations(const std::vector<SweepReport>& reports,
                                                           const std::vector<JointSubset>& subsets);

/// Header `id,x,y,z,reachable,cost,timed_out,cone_reached,cone_total,q1..q8`.
/// Wall times are left out so reports are byte-identical across runs.
void write_sweep_csv(std::ostream& os, const SweepReport& r);
/// Header `id,wall_time_s`.
void write_timing_csv(std::ostream& os, const SweepReport& r);
/// Header `x,y,z,fraction`, one row per candidate vertex.
void write_vertex_fraction_csv(std::ostream& os, const SweepReport& r);

/// {body:{profile,sigma_bmi,seed}, subset, candidates, reachable, fraction}
nlohmann::json sweep_summary(const SweepReport& r);

/// Parsed back from write_vertex_fraction_csv output; throws
/// std::invalid_argument naming the offending column or row.
struct VertexFraction {
  Vec3 vertex = Vec3::Zero();
  double fraction = 0.0;
};
std::vector<VertexFraction> read_vertex_fraction_csv(std::istream& is);

}  // namespace inbore
