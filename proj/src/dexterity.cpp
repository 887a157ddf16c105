#include "inbore/dexterity.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "inbore/parallel.hpp"

namespace inbore {

std::string body_label(const BodyDescriptor& b) {
  std::ostringstream os;
  os << to_string(b.sex) << ":" << b.sigma_bmi;
  return os.str();
}

BodyDescriptor parse_body(const std::string& text, std::uint64_t seed) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("body must look like male:0 or female:1.5, got '" + text + "'");
  BodyDescriptor b;
  b.sex = sex_profile_from(text.substr(0, colon));
  std::size_t used = 0;
  const std::string num = text.substr(colon + 1);
  try {
    b.sigma_bmi = std::stod(num, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != num.size()) throw std::invalid_argument("body sigma must be a number, got '" + num + "'");
  b.seed = seed;
  return b;
}

std::vector<JointSubset> standard_subsets() {
  return {{"5dof", mask_of({0, 1, 2, 3, 6})},
          {"6dof", mask_of({0, 1, 2, 3, 6, 7})},
          {"7dof-yaw", mask_of({0, 1, 2, 3, 4, 6, 7})},
          {"7dof-pitch", mask_of({0, 1, 2, 3, 5, 6, 7})},
          {"8dof", mask_of({0, 1, 2, 3, 4, 5, 6, 7})}};
}

JointSubset subset_by_label(const std::string& label) {
  for (auto& s : standard_subsets()) {
    if (s.label == label) return s;
  }
  throw std::invalid_argument("unknown joint subset '" + label + "' (expected 5dof, 6dof, 7dof-yaw, 7dof-pitch, 8dof)");
}

std::vector<Candidate> make_candidates(const PatientProxy& body, const RegionMask& mask, int max_count,
                                       double standoff) {
  const CandidateSet set = sample_insertion_candidates(body, mask, max_count);
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < set.poses.size(); ++i) {
    Candidate c;
    c.id = static_cast<int>(i);
    c.vertex = set.samples[i].vertex;
    c.normal = set.samples[i].normal;
    c.target = needle_target(set.poses[i], standoff);
    out.push_back(c);
  }
  return out;
}

int SweepReport::reachable_count() const {
  int n = 0;
  for (const auto& r : records) n += r.reachable ? 1 : 0;
  return n;
}

JointConfig home_configuration() {
  JointConfig q = JointConfig::Zero();
  q[3] = -kPi / 2.0;
  q[6] = kPi / 2.0;
  return q;
}

SweepSettings default_sweep_settings() {
  SweepSettings s;
  s.planner.delta_adj = deg2rad(60.0);
  s.planner.grid_points = 9;
  s.planner.insertion_grid_points = 3;
  s.planner.refine = false;
  s.nominal = home_configuration();
  return s;
}

SweepReport sweep(const RobotModel& model, const Environment& env, const BodyDescriptor& body,
                  const std::vector<Candidate>& candidates, const JointSubset& subset, const SweepSettings& s) {
  if (candidates.empty()) throw std::invalid_argument("sweep needs at least one candidate");
  if (s.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (subset.joints.none()) throw std::invalid_argument("subset " + subset.label + " has no joints");
  PlannerSettings ps = s.planner;
  ps.mobility = subset.joints;
  ps.jobs = 1;
  validate(ps);

  SweepReport report;
  report.body = body;
  report.subset = subset.label;
  report.records.resize(candidates.size());
  parallel_for(candidates.size(), s.jobs, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const SetupResult r = optimize_setup(model, env, candidates[i].target, s.nominal, ps);
    ReachabilityRecord& rec = report.records[i];
    rec.id = candidates[i].id;
    rec.vertex = candidates[i].vertex;
    rec.reachable = r.feasible && r.cost < kCostInfeasible;
    rec.cost = rec.reachable ? r.cost : kCostInfeasible;
    if (rec.reachable) rec.q_star = r.q_star;
    rec.timed_out = r.diagnostics.timed_out;
    rec.cone_reached = r.diagnostics.local_targets_reached;
    rec.cone_total = r.diagnostics.local_targets_total;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  report.fraction = static_cast<double>(report.reachable_count()) / static_cast<double>(report.records.size());
  return report;
}

std::vector<SweepReport> ablate(const RobotModel& model, const Environment& env, const BodyDescriptor& body,
                                const std::vector<Candidate>& candidates, const std::vector<JointSubset>& subsets,
                                const SweepSettings& s) {
  if (subsets.empty()) throw std::invalid_argument("ablate needs at least one subset");
  std::vector<SweepReport> out;
  for (const auto& sub : subsets) out.push_back(sweep(model, env, body, candidates, sub, s));
  return out;
}

PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs n >= 2");
  PairedTTest out;
  out.n = static_cast<int>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= out.n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  out.mean_difference = mean;
  const double sd = std::sqrt(ss / (out.n - 1));
  if (sd == 0.0) {
    out.degenerate = true;
    out.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    out.p = mean == 0.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.t = mean / (sd / std::sqrt(static_cast<double>(out.n)));
  const boost::math::students_t dist(out.n - 1);
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

PairedTTest paired_t_test(const SweepReport& a, const SweepReport& b) {
  if (a.records.size() != b.records.size()) throw std::invalid_argument("reports cover different candidate counts");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (a.records[i].id != b.records[i].id) {
      throw std::invalid_argument("reports are not aligned at row " + std::to_string(i));
    }
    x.push_back(a.records[i].reachable ? 1.0 : 0.0);
    y.push_back(b.records[i].reachable ? 1.0 : 0.0);
  }
  return paired_t_test(x, y);
}

std::vector<MonotonicityViolation> monotonicity_violations(const std::vector<SweepReport>& reports,
                                                           const std::vector<JointSubset>& subsets) {
  auto mask_for = [&](const std::string& label) -> std::optional<JointMask> {
    for (const auto& s : subsets) {
      if (s.label == label) return s.joints;
    }
    return std::nullopt;
  };
  std::vector<MonotonicityViolation> out;
  for (const auto& small : reports) {
    const auto ms = mask_for(small.subset);
    if (!ms) throw std::invalid_argument("report subset " + small.subset + " not in the subset list");
    for (const auto& large : reports) {
      const auto ml = mask_for(large.subset);
      if (!ml) throw std::invalid_argument("report subset " + large.subset + " not in the subset list");
      if (&small == &large || (*ms & ~*ml).any() || *ms == *ml) continue;
      if (small.records.size() != large.records.size()) throw std::invalid_argument("reports differ in size");
      for (std::size_t i = 0; i < small.records.size(); ++i) {
        if (small.records[i].reachable && !large.records[i].reachable) {
          out.push_back({small.subset, large.subset, small.records[i].id});
        }
      }
    }
  }
  return out;
}

void write_sweep_csv(std::ostream& os, const SweepReport& r) {
  const auto old = os.precision(12);
  os << "id,x,y,z,reachable,cost,timed_out,cone_reached,cone_total";
  for (int i = 1; i <= kNumJoints; ++i) os << ",q" << i;
  os << "\n";
  for (const auto& rec : r.records) {
    os << rec.id << "," << rec.vertex.x() << "," << rec.vertex.y() << "," << rec.vertex.z() << ","
       << (rec.reachable ? 1 : 0) << "," << rec.cost << "," << (rec.timed_out ? 1 : 0) << "," << rec.cone_reached
       << "," << rec.cone_total;
    for (int i = 0; i < kNumJoints; ++i) {
      os << ",";
      if (rec.q_star) os << (*rec.q_star)[i];
    }
    os << "\n";
  }
  os.precision(old);
}

void write_timing_csv(std::ostream& os, const SweepReport& r) {
  os << "id,wall_time_s\n";
  for (const auto& rec : r.records) os << rec.id << "," << rec.wall_time << "\n";
}

void write_vertex_fraction_csv(std::ostream& os, const SweepReport& r) {
  const auto old = os.precision(12);
  os << "x,y,z,fraction\n";
  for (const auto& rec : r.records) {
    os << rec.vertex.x() << "," << rec.vertex.y() << "," << rec.vertex.z() << ","
       << (rec.reachable ? 1.0 : rec.cone_fraction()) << "\n";
  }
  os.precision(old);
}

nlohmann::json sweep_summary(const SweepReport& r) {
  return {{"body", {{"profile", to_string(r.body.sex)}, {"sigma_bmi", r.body.sigma_bmi}, {"seed", r.body.seed}}},
          {"subset", r.subset},
          {"candidates", r.records.size()},
          {"reachable", r.reachable_count()},
          {"fraction", r.fraction}};
}

std::vector<VertexFraction> read_vertex_fraction_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("vertex fraction CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  static const char* kColumns[] = {"x", "y", "z", "fraction"};
  {
    std::stringstream ss(line);
    std::string cell;
    int k = 0;
    while (std::getline(ss, cell, ',')) {
      if (k >= 4 || cell != kColumns[k]) throw std::invalid_argument("unexpected column '" + cell + "'");
      ++k;
    }
    if (k != 4) throw std::invalid_argument(std::string("missing column '") + kColumns[k] + "'");
  }
  std::vector<VertexFraction> out;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    double v[4];
    int k = 0;
    while (std::getline(ss, cell, ',')) {
      if (k >= 4) throw std::invalid_argument("row " + std::to_string(row) + " has more than 4 columns");
      std::size_t used = 0;
      try {
        v[k] = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size()) {
        throw std::invalid_argument("row " + std::to_string(row) + ", column '" + kColumns[k] + "': not a number");
      }
      ++k;
    }
    if (k != 4) throw std::invalid_argument("row " + std::to_string(row) + " has " + std::to_string(k) + " columns");
    if (v[3] < 0.0 || v[3] > 1.0) {
      throw std::invalid_argument("row " + std::to_string(row) + ", column 'fraction': outside [0, 1]");
    }
    out.push_back({Vec3(v[0], v[1], v[2]), v[3]});
  }
  if (out.empty()) throw std::invalid_argument("vertex fraction CSV has no rows");
  return out;
}

}  // namespace inbore
