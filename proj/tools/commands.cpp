#include "commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "inbore/calibration.hpp"
#include "inbore/control_sim.hpp"
#include "inbore/dexterity.hpp"
#include "inbore/ik_planning.hpp"
#include "inbore/parallel.hpp"
#include "inbore/transmission.hpp"
#include "manifest.hpp"

namespace inbore::cli {
namespace fs = std::filesystem;

namespace {

struct Robot {
  RobotModel model;
  TransmissionModel transmission;
};

nlohmann::json read_json(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + what + " '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + " '" + path + "': " + e.what());
  }
}

/// Empty path: the built-in chain. Otherwise a model JSON with an optional
/// "transmission" object.
Robot load_robot(const std::string& path) {
  if (path.empty()) {
    RobotModel m = crane8_model();
    TransmissionModel t = crane8_transmission(m);
    return {m, t};
  }
  const nlohmann::json j = read_json(path, "robot config");
  RobotModel m = robot_model_from_json(j);
  TransmissionModel t = crane8_transmission(m);
  if (j.contains("transmission")) t = transmission_from_json(j.at("transmission"), t);
  return {m, t};
}

SceneConfig load_scene(const std::string& path, std::uint64_t seed) {
  if (path.empty()) {
    SceneConfig sc;
    sc.patient = generate_patient(SexProfile::Male, 0.0, seed);
    sc.env = default_scene(sc.patient);
    return sc;
  }
  return load_scene_config(path, seed);
}

PlannerSettings load_planner(const std::string& path, PlannerSettings base) {
  if (path.empty()) return base;
  return planner_settings_from_json(read_json(path, "planner config"), base);
}

std::vector<double> parse_list(const std::string& text, std::size_t n, const std::string& flag) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size()) throw ConfigError(flag + ": '" + cell + "' is not a number");
    v.push_back(x);
  }
  if (v.size() != n) {
    throw ConfigError(flag + " needs " + std::to_string(n) + " comma-separated values, got " + std::to_string(v.size()));
  }
  return v;
}

JointConfig parse_q(const std::string& text, const std::string& flag) {
  const auto v = parse_list(text, kNumJoints, flag);
  return Eigen::Map<const JointConfig>(v.data());
}

/// "x,y,z,nx,ny,nz" (needle position and direction) or a pose JSON file.
Pose parse_target(const std::string& text, const std::string& flag) {
  if (fs::exists(text)) return read_json(text, flag).get<Pose>();
  const auto v = parse_list(text, 6, flag);
  const Vec3 n(v[3], v[4], v[5]);
  if (n.norm() < 1e-9) throw ConfigError(flag + ": direction must be nonzero");
  return Pose(align_z_axis(n.normalized()), Vec3(v[0], v[1], v[2]));
}

std::vector<double> vec_json(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os.precision(12);
  return os;
}

void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << "\n"; }

/// Resolves the worker count and writes the manifest; returns the job count.
int begin(const std::string& command, const Common& c, const std::map<std::string, std::string>& configs) {
  int jobs = 1;
  try {
    jobs = resolve_jobs(c.jobs);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  RunManifest m;
  m.command = command;
  for (const auto& [k, v] : configs) {
    if (!v.empty()) m.config_paths[k] = v;
  }
  m.seed = c.seed;
  m.out_dir = c.out;
  m.jobs = jobs;
  m.argv = c.argv;
  m.git_describe = INBORE_GIT_DESCRIBE;
  m.timestamp = utc_timestamp();
  write_manifest(m);
  return jobs;
}

std::string file_stem(const std::string& label) {
  std::string s = label;
  for (char& ch : s) {
    if (ch == ':' || ch == '/' || ch == ' ') ch = '_';
  }
  return s;
}

std::vector<std::vector<double>> read_numeric_csv(const std::string& path, const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ss, cell, ',')) {
      if (k >= columns.size() || cell != columns[k]) throw ConfigError(path + ": unexpected column '" + cell + "'");
      ++k;
    }
    if (k != columns.size()) throw ConfigError(path + ": missing column '" + columns[k] + "'");
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(parse_list(line, columns.size(), path + " row " + std::to_string(rows.size() + 2)));
  }
  return rows;
}

}  // namespace

int run_fk(const Common& c, const FkOptions& o) {
  begin("fk", c, {{"robot", o.robot}});
  const Robot r = load_robot(o.robot);
  const JointConfig q = parse_q(o.q, "--q");
  if (!r.model.within_limits(q)) std::cerr << "warning: q is outside the joint limits\n";
  nlohmann::json j = fk(r.model, q);
  write_json(fs::path(c.out) / "fk.json", {{"q", vec_json(q)}, {"pose", j}});
  std::cout << j.dump() << "\n";
  return kExitOk;
}

int run_ik(const Common& c, const IkOptions& o) {
  begin("ik", c, {{"robot", o.robot}});
  const Robot r = load_robot(o.robot);
  const Pose target = parse_target(o.target, "--target");
  const JointConfig q0 = o.q0.empty() ? home_configuration() : parse_q(o.q0, "--q0");
  const IKResult res = solve_ik(r.model, target, q0, IKSettings{}, o.partition);
  const nlohmann::json j = {{"success", res.success},
                            {"q", vec_json(res.q)},
                            {"iterations", res.iterations},
                            {"error_p", res.error.position_norm()},
                            {"error_o", res.error.orientation_norm()},
                            {"pose", fk(r.model, res.q)}};
  write_json(fs::path(c.out) / "ik.json", j);
  std::cout << j.dump() << "\n";
  if (!res.success) {
    std::cerr << "ik: no solution within tolerance\n";
    return kExitFailure;
  }
  return kExitOk;
}

int run_setup_plan(const Common& c, const SetupOptions& o) {
  const int jobs = begin("setup-plan", c, {{"robot", o.robot}, {"scene", o.scene}, {"planner", o.planner}});
  const Robot r = load_robot(o.robot);
  const SceneConfig scene = load_scene(o.scene, c.seed);
  PlannerSettings ps = load_planner(o.planner, PlannerSettings{});
  if (o.beta) ps.weights.beta = *o.beta;
  validate(ps);
  const JointConfig q0 = home_configuration();

  std::vector<Candidate> cands;
  if (!o.target.empty()) {
    Candidate k;
    k.target = parse_target(o.target, "--target");
    k.vertex = k.target.translation();
    cands.push_back(k);
  } else {
    if (!scene.patient) throw ConfigError("setup-plan without --target needs a scene with a patient");
    if (o.candidates < 1) throw ConfigError("--candidates must be >= 1");
    cands = make_candidates(*scene.patient, scene.mask, o.candidates, o.standoff);
    if (o.candidate >= 0) {
      if (o.candidate >= static_cast<int>(cands.size())) {
        throw ConfigError("--candidate " + std::to_string(o.candidate) + " outside the " +
                          std::to_string(cands.size()) + " candidates");
      }
      cands = {cands[static_cast<std::size_t>(o.candidate)]};
    }
  }

  std::vector<SetupResult> results(cands.size());
  PlannerSettings inner = ps;
  inner.jobs = 1;
  parallel_for(cands.size(), jobs, [&](std::size_t i) {
    results[i] = optimize_setup(r.model, scene.env, cands[i].target, q0, cands.size() == 1 ? ps : inner);
  });

  auto csv = open_out(fs::path(c.out) / "setup.csv");
  csv << "id,x,y,z,feasible,cost,timed_out";
  for (int i = 1; i <= kNumJoints; ++i) csv << ",q" << i;
  csv << "\n";
  nlohmann::json list = nlohmann::json::array();
  int feasible = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const SetupResult& s = results[i];
    feasible += s.feasible ? 1 : 0;
    csv << cands[i].id << "," << cands[i].vertex.x() << "," << cands[i].vertex.y() << "," << cands[i].vertex.z() << ","
        << (s.feasible ? 1 : 0) << "," << s.cost << "," << (s.diagnostics.timed_out ? 1 : 0);
    for (int k = 0; k < kNumJoints; ++k) csv << "," << s.q_star[k];
    csv << "\n";
    nlohmann::json e = s;
    e["id"] = cands[i].id;
    e["target"] = cands[i].target;
    list.push_back(e);
  }
  const double fraction = static_cast<double>(feasible) / static_cast<double>(cands.size());
  write_json(fs::path(c.out) / "setup.json",
             {{"planner", ps}, {"candidates", cands.size()}, {"feasible", feasible}, {"fraction", fraction},
              {"results", list}});
  std::cout << "setup-plan: " << feasible << "/" << cands.size() << " feasible\n";
  return feasible > 0 ? kExitOk : kExitFailure;
}

int run_birrt(const Common& c, const BirrtOptions& o) {
  begin("birrt", c, {{"robot", o.robot}, {"scene", o.scene}});
  const Robot r = load_robot(o.robot);
  const SceneConfig scene = load_scene(o.scene, c.seed);
  BirrtSettings bs;
  bs.step = o.step;
  bs.verify_step = o.verify_step;
  bs.max_samples = o.max_samples;

  std::vector<std::pair<JointConfig, JointConfig>> pairs;
  if (o.pairs > 0) {
    std::mt19937_64 rng(c.seed);
    const JointConfig lo = r.model.lower_limits(), hi = r.model.upper_limits();
    auto sample_free = [&]() {
      for (int attempt = 0; attempt < 100000; ++attempt) {
        JointConfig q;
        for (int i = 0; i < kNumJoints; ++i) q[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
        if (config_valid(r.model, scene.env, q)) return q;
      }
      throw ConfigError("scene leaves no sampled collision-free configuration");
    };
    for (int p = 0; p < o.pairs; ++p) {
      const JointConfig a = sample_free();
      const JointConfig b = sample_free();
      pairs.emplace_back(a, b);
    }
  } else {
    if (o.start.empty() || o.goal.empty()) throw ConfigError("birrt needs --start and --goal, or --pairs N");
    pairs.emplace_back(parse_q(o.start, "--start"), parse_q(o.goal, "--goal"));
  }

  auto csv = open_out(fs::path(c.out) / "birrt.csv");
  csv << "pair,success,verified,samples,waypoints,length,message\n";
  nlohmann::json paths = nlohmann::json::array();
  int successes = 0, violations = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    bs.seed = c.seed + p;
    const BirrtResult res = plan_birrt(r.model, scene.env, pairs[p].first, pairs[p].second, bs);
    // Independent of the planner's own re-check: a path is only reported as a
    // success when every dense edge sample is collision free.
    const bool verified = res.success && res.path.front() == pairs[p].first && res.path.back() == pairs[p].second &&
                          path_valid(r.model, scene.env, res.path, o.verify_step);
    successes += res.success ? 1 : 0;
    violations += (res.success && !verified) ? 1 : 0;
    std::string msg = res.message;
    for (char& ch : msg) {
      if (ch == ',') ch = ';';
    }
    csv << p << "," << (res.success ? 1 : 0) << "," << (verified ? 1 : 0) << "," << res.samples_used << ","
        << res.path.size() << "," << (res.success ? path_length(res.path) : 0.0) << "," << msg << "\n";
    nlohmann::json pj = nlohmann::json::array();
    for (const auto& q : res.path) pj.push_back(vec_json(q));
    paths.push_back({{"pair", p},
                     {"start", vec_json(pairs[p].first)},
                     {"goal", vec_json(pairs[p].second)},
                     {"success", res.success},
                     {"message", res.message},
                     {"path", pj}});
  }
  write_json(fs::path(c.out) / "birrt_paths.json", paths);
  std::cout << "birrt: " << successes << "/" << pairs.size() << " solved, " << violations << " unverified\n";
  if (violations > 0) return kExitFailure;
  if (o.pairs == 0 && successes == 0) return kExitFailure;
  return kExitOk;
}

int run_calibrate(const Common& c, const CalibrateOptions& o) {
  begin("calibrate", c,
        {{"robot", o.robot}, {"robot_samples", o.robot_samples}, {"tracker_samples", o.tracker_samples},
         {"design", o.design}, {"volume", o.volume}, {"reference", o.reference}});
  const Robot r = load_robot(o.robot);
  ChainCalibrationInput in;
  std::optional<SyntheticCalibrationTruth> truth;
  if (o.synthetic) {
    SyntheticCalibrationOptions so;
    so.fiducial_noise = o.fiducial_noise;
    so.tracker_noise = o.tracker_noise;
    so.seed = c.seed;
    if (so.fiducial_noise < 0.0 || so.tracker_noise < 0.0) throw ConfigError("noise levels must be >= 0");
    truth = default_calibration_truth();
    const SyntheticCalibration syn = make_synthetic_calibration(r.model, *truth, default_fiducial_design(), so);
    in = syn.input;
    const fs::path dir = fs::path(c.out) / "synthetic";
    fs::create_directories(dir);
    write_volume((dir / "volume.json").string(), in.volume);
    write_point_set((dir / "design.csv").string(), in.fiducial_design);
    write_json(dir / "reference.json", in.reference_sensor);
  } else {
    if (o.robot_samples.empty() || o.tracker_samples.empty() || o.design.empty() || o.volume.empty() ||
        o.reference.empty()) {
      throw ConfigError(
          "calibrate needs --synthetic or all of --robot-samples, --tracker-samples, --design, --volume, --reference");
    }
    std::vector<std::string> qcols;
    for (int i = 1; i <= kNumJoints; ++i) qcols.push_back("q" + std::to_string(i));
    for (const auto& row : read_numeric_csv(o.robot_samples, qcols)) {
      in.robot_samples.push_back(Eigen::Map<const JointConfig>(row.data()));
    }
    for (const auto& row : read_numeric_csv(o.tracker_samples, {"x", "y", "z"})) {
      in.tracker_samples.emplace_back(row[0], row[1], row[2]);
    }
    in.fiducial_design = read_point_set(o.design);
    in.volume = read_volume(o.volume);
    in.reference_sensor = read_json(o.reference, "reference pose").get<Pose>();
  }
  in.localization.threshold = o.threshold;
  in.localization.expected_count = static_cast<int>(in.fiducial_design.size());

  const ChainCalibration cal = calibrate_chain(r.model, in);
  nlohmann::json j = {{"T_b_mb", cal.T_b_mb},   {"T_b_sb", cal.T_b_sb},       {"rms_mb", cal.rms_mb},
                      {"rms_sb", cal.rms_sb},   {"assignment", cal.assignment}};
  if (truth) {
    j["truth"] = {{"T_b_mb", truth->T_b_mb}, {"T_b_sb", truth->T_b_sb}};
    j["translation_error_mb"] = (cal.T_b_mb.translation() - truth->T_b_mb.translation()).norm();
    j["translation_error_sb"] = (cal.T_b_sb.translation() - truth->T_b_sb.translation()).norm();
  }
  write_json(fs::path(c.out) / "calibration.json", j);
  write_point_set((fs::path(c.out) / "localized.csv").string(), cal.localized);
  std::cout << j.dump() << "\n";
  return kExitOk;
}

int run_servo_sim(const Common& c, const ServoOptions& o) {
  begin("servo-sim", c, {{"robot", o.robot}, {"sim", o.sim}});
  const Robot r = load_robot(o.robot);
  SimSettings s;
  if (!o.sim.empty()) s = sim_settings_from_json(read_json(o.sim, "sim config"), s);
  if (o.noiseless) {
    s.tracker.position_rms = 0.0;
    s.tracker.orientation_rms = 0.0;
    s.encoder_noise = 0.0;
  }
  validate(s);
  if (o.mode != "open" && o.mode != "closed" && o.mode != "both") {
    throw ConfigError("--mode must be open, closed or both");
  }
  ConeSpec cone;
  cone.apex = fk(r.model, o.apex_q.empty() ? home_configuration() : parse_q(o.apex_q, "--apex-q"));
  cone.zenith = deg2rad(o.zenith_deg);
  cone.n_points = o.points;
  if (!(o.zenith_deg >= 0.0) || o.points < 1) throw ConfigError("--zenith must be >= 0 and --points >= 1");

  nlohmann::json runs = nlohmann::json::object();
  bool ok = true;
  for (const bool closed : {false, true}) {
    if ((closed && o.mode == "open") || (!closed && o.mode == "closed")) continue;
    const RcmRun run = run_rcm_trajectory(r.model, r.transmission, cone, closed, c.seed, s);
    const std::string name = closed ? "closed" : "open";
    auto os = open_out(fs::path(c.out) / ("trace_" + name + ".csv"));
    write_trace_csv(os, run.trace);
    runs[name] = run;
    ok = ok && run.completed;
    std::cout << name << ": mean " << run.mean_position_error * 1e3 << " mm, "
              << rad2deg(run.mean_orientation_error) << " deg\n";
  }
  write_json(fs::path(c.out) / "servo.json", {{"settings", s}, {"runs", runs}});
  return ok ? kExitOk : kExitFailure;
}

int run_dexterity_sweep(const Common& c, const DexterityOptions& o) {
  const int jobs = begin("dexterity-sweep", c, {{"robot", o.robot}, {"scene", o.scene}, {"planner", o.planner}});
  const Robot r = load_robot(o.robot);
  SweepSettings ss = default_sweep_settings();
  ss.planner = load_planner(o.planner, ss.planner);
  if (o.delta_adj_deg) ss.planner.delta_adj = deg2rad(*o.delta_adj_deg);
  ss.planner.time_budget = o.time_budget;
  ss.jobs = jobs;
  validate(ss.planner);
  if (o.candidates < 1) throw ConfigError("--candidates must be >= 1");

  std::vector<JointSubset> subsets;
  for (const auto& label : o.subsets) subsets.push_back(subset_by_label(label));
  nlohmann::json scene_json = o.scene.empty() ? nlohmann::json::object() : read_json(o.scene, "scene config");
  const std::string scene_dir = o.scene.empty() ? "." : fs::path(o.scene).parent_path().string();

  nlohmann::json summary = {{"delta_adj_deg", rad2deg(ss.planner.delta_adj)}, {"bodies", nlohmann::json::array()}};
  bool monotone = true;
  for (const auto& text : o.bodies) {
    const BodyDescriptor body = parse_body(text, c.seed);
    nlohmann::json sj = scene_json;
    sj["patient"]["sex"] = to_string(body.sex);
    sj["patient"]["sigma_bmi"] = body.sigma_bmi;
    const SceneConfig scene = scene_from_json(sj, scene_dir, body.seed);
    const std::vector<Candidate> cands = make_candidates(*scene.patient, scene.mask, o.candidates, o.standoff);
    const std::vector<SweepReport> reports = ablate(r.model, scene.env, body, cands, subsets, ss);

    nlohmann::json bj = {{"body", body_label(body)}, {"subsets", nlohmann::json::array()}};
    for (const auto& rep : reports) {
      const std::string stem = file_stem(body_label(body)) + "_" + rep.subset;
      {
        auto os = open_out(fs::path(c.out) / (stem + ".csv"));
        write_sweep_csv(os, rep);
      }
      {
        auto os = open_out(fs::path(c.out) / (stem + "_vertices.csv"));
        write_vertex_fraction_csv(os, rep);
      }
      {
        auto os = open_out(fs::path(c.out) / (stem + "_timing.csv"));
        write_timing_csv(os, rep);
      }
      bj["subsets"].push_back(sweep_summary(rep));
      std::cout << body_label(body) << " " << rep.subset << ": " << rep.reachable_count() << "/" << rep.records.size()
                << "\n";
    }
    nlohmann::json tests = nlohmann::json::array();
    for (std::size_t a = 0; a < reports.size(); ++a) {
      for (std::size_t b = a + 1; b < reports.size(); ++b) {
        if (reports[a].records.size() < 2) continue;
        const PairedTTest t = paired_t_test(reports[b], reports[a]);
        tests.push_back({{"a", reports[b].subset},
                         {"b", reports[a].subset},
                         {"n", t.n},
                         {"mean_difference", t.mean_difference},
                         {"t", std::isfinite(t.t) ? nlohmann::json(t.t) : nlohmann::json(nullptr)},
                         {"p", std::isfinite(t.p) ? nlohmann::json(t.p) : nlohmann::json(nullptr)},
                         {"degenerate", t.degenerate}});
      }
    }
    bj["paired_t_tests"] = tests;
    const auto violations = monotonicity_violations(reports, subsets);
    nlohmann::json vj = nlohmann::json::array();
    for (const auto& v : violations) {
      vj.push_back({{"smaller", v.smaller}, {"larger", v.larger}, {"id", v.candidate_id}});
    }
    bj["monotonicity_violations"] = vj;
    monotone = monotone && violations.empty();
    summary["bodies"].push_back(bj);
  }
  summary["monotone"] = monotone;
  write_json(fs::path(c.out) / "summary.json", summary);
  return kExitOk;
}

int run_statics(const Common& c, const StaticsOptions& o) {
  begin("statics", c, {{"robot", o.robot}});
  double k = 0.0;
  try {
    k = series_stiffness(o.k_link, o.k_cable);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j = {{"k_link_n_per_mm", o.k_link}, {"k_cable_n_per_mm", o.k_cable}, {"k_series_n_per_mm", k}};
  std::ostringstream line;
  line.setf(std::ios::fixed);
  line.precision(3);
  line << k << " N/mm";
  std::cout << line.str() << "\n";
  if (!o.q.empty()) {
    const Robot r = load_robot(o.robot);
    const JointConfig q = parse_q(o.q, "--q");
    Vec6 w = (Vec6() << 0.0, 0.0, 1.0, 0.0, 0.0, 0.0).finished();
    if (!o.wrench.empty()) {
      const auto v = parse_list(o.wrench, 6, "--wrench");
      w = Eigen::Map<const Vec6>(v.data());
    }
    const StaticDeflection d = static_deflection(r.transmission, r.model, q, w);
    const PoseError e = pose_error(fk(r.model, q), deflected_fk(r.model, q, d));
    j["wrench"] = vec_json(w);
    j["dq"] = vec_json(d.dq);
    j["link_offset"] = vec_json(d.link_offset);
    j["tip_deflection_m"] = e.position_norm();
    j["tip_rotation_rad"] = e.orientation_norm();
    std::cout << "tip deflection " << e.position_norm() * 1e3 << " mm, " << rad2deg(e.orientation_norm()) << " deg\n";
  }
  write_json(fs::path(c.out) / "statics.json", j);
  return kExitOk;
}

}  // namespace inbore::cli
