// inbore_kin: kinematics, planning, calibration and simulation from the shell.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "inbore/calibration.hpp"

namespace {

using namespace inbore::cli;

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "output directory (created if missing)")->capture_default_str();
  sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
  sub->add_option_function<int>(
         "--jobs", [&c](const int& j) { c.jobs = j; }, "worker threads (default: INBORE_KIN_JOBS, else all cores)")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-bore needle robot kinematics, planning, calibration and servo simulation"};
  app.require_subcommand(1);

  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);

  FkOptions fk;
  auto* fk_cmd = app.add_subcommand("fk", "forward kinematics of one configuration");
  fk_cmd->add_option("--robot", fk.robot, "robot config JSON (default: built-in chain)");
  fk_cmd->add_option("--q", fk.q, "joint values q1..q8, comma separated")->required();
  add_common(fk_cmd, common);

  IkOptions ik;
  auto* ik_cmd = app.add_subcommand("ik", "inverse kinematics for a needle pose");
  ik_cmd->add_option("--robot", ik.robot, "robot config JSON");
  ik_cmd->add_option("--target", ik.target, "x,y,z,nx,ny,nz or a pose JSON file")->required();
  ik_cmd->add_option("--q0", ik.q0, "initial configuration (default: home)");
  ik_cmd->add_flag("--partition", ik.partition, "move only the non-redundant joints");
  add_common(ik_cmd, common);

  SetupOptions setup;
  auto* setup_cmd = app.add_subcommand("setup-plan", "global setup optimization over the redundant joints");
  setup_cmd->add_option("--robot", setup.robot, "robot config JSON");
  setup_cmd->add_option("--scene", setup.scene, "scene config JSON (default: bore, couch and male proxy)");
  setup_cmd->add_option("--planner", setup.planner, "planner settings JSON");
  setup_cmd->add_option("--target", setup.target, "x,y,z,nx,ny,nz or a pose JSON file");
  setup_cmd->add_option("--candidates", setup.candidates, "candidates drawn from the patient surface")
      ->capture_default_str();
  setup_cmd->add_option("--candidate", setup.candidate, "plan only this candidate index");
  setup_cmd->add_option("--standoff", setup.standoff, "needle standoff above the skin (m)")->capture_default_str();
  setup_cmd->add_option_function<double>(
      "--beta", [&setup](const double& b) { setup.beta = b; }, "patient clearance weight");
  add_common(setup_cmd, common);

  BirrtOptions birrt;
  auto* birrt_cmd = app.add_subcommand("birrt", "joint-space BiRRT between configurations");
  birrt_cmd->add_option("--robot", birrt.robot, "robot config JSON");
  birrt_cmd->add_option("--scene", birrt.scene, "scene config JSON");
  birrt_cmd->add_option("--start", birrt.start, "start configuration q1..q8");
  birrt_cmd->add_option("--goal", birrt.goal, "goal configuration q1..q8");
  birrt_cmd->add_option("--pairs", birrt.pairs, "random collision-free start/goal pairs");
  birrt_cmd->add_option("--step", birrt.step, "edge check step while planning")->capture_default_str();
  birrt_cmd->add_option("--verify-step", birrt.verify_step, "edge check step of the final verification")
      ->capture_default_str();
  birrt_cmd->add_option("--max-samples", birrt.max_samples, "sample budget per query")->capture_default_str();
  add_common(birrt_cmd, common);

  CalibrateOptions cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "robot/tracker/scanner calibration");
  cal_cmd->add_option("--robot", cal.robot, "robot config JSON");
  cal_cmd->add_flag("--synthetic", cal.synthetic, "generate the inputs from the built-in ground truth");
  cal_cmd->add_option("--fiducial-noise", cal.fiducial_noise, "synthetic fiducial noise σ (m)");
  cal_cmd->add_option("--tracker-noise", cal.tracker_noise, "synthetic tracker noise σ (m)");
  cal_cmd->add_option("--robot-samples", cal.robot_samples, "CSV q1..q8");
  cal_cmd->add_option("--tracker-samples", cal.tracker_samples, "CSV x,y,z");
  cal_cmd->add_option("--design", cal.design, "fiducial design CSV id,x,y,z");
  cal_cmd->add_option("--volume", cal.volume, "volume header JSON");
  cal_cmd->add_option("--reference", cal.reference, "reference sensor pose JSON");
  cal_cmd->add_option("--threshold", cal.threshold, "fiducial threshold (HU)")->capture_default_str();
  add_common(cal_cmd, common);

  ServoOptions servo;
  auto* servo_cmd = app.add_subcommand("servo-sim", "RCM cone tracking in simulation");
  servo_cmd->add_option("--robot", servo.robot, "robot config JSON");
  servo_cmd->add_option("--sim", servo.sim, "simulation settings JSON");
  servo_cmd->add_option("--mode", servo.mode, "open, closed or both")->capture_default_str();
  servo_cmd->add_option("--apex-q", servo.apex_q, "configuration defining the cone apex (default: home)");
  servo_cmd->add_option("--zenith", servo.zenith_deg, "cone half angle (deg)")->capture_default_str();
  servo_cmd->add_option("--points", servo.points, "waypoints around the cone")->capture_default_str();
  servo_cmd->add_flag("--noiseless", servo.noiseless, "disable tracker and encoder noise");
  add_common(servo_cmd, common);

  DexterityOptions dex;
  auto* dex_cmd = app.add_subcommand("dexterity-sweep", "reachability sweep and joint-subset ablation");
  dex_cmd->add_option("--robot", dex.robot, "robot config JSON");
  dex_cmd->add_option("--scene", dex.scene, "scene config JSON; its patient is replaced per body");
  dex_cmd->add_option("--planner", dex.planner, "planner settings JSON");
  dex_cmd->add_option("--body", dex.bodies, "male:σ or female:σ, repeatable")->capture_default_str();
  dex_cmd->add_option("--subset", dex.subsets, "5dof, 6dof, 7dof-yaw, 7dof-pitch or 8dof, repeatable")
      ->capture_default_str();
  dex_cmd->add_option("--candidates", dex.candidates, "candidates per body")->capture_default_str();
  dex_cmd->add_option("--standoff", dex.standoff, "needle standoff above the skin (m)")->capture_default_str();
  dex_cmd->add_option_function<double>(
      "--delta-adj", [&dex](const double& d) { dex.delta_adj_deg = d; }, "cone half angle (deg), default 60");
  dex_cmd->add_option("--time-budget", dex.time_budget, "per-candidate wall-clock budget (s), 0 = none")
      ->capture_default_str();
  add_common(dex_cmd, common);

  StaticsOptions st;
  auto* st_cmd = app.add_subcommand("statics", "series stiffness and tip deflection");
  st_cmd->add_option("--k-link", st.k_link, "link stiffness (N/mm)")->capture_default_str();
  st_cmd->add_option("--k-cable", st.k_cable, "cable stiffness (N/mm)")->capture_default_str();
  st_cmd->add_option("--robot", st.robot, "robot config JSON");
  st_cmd->add_option("--q", st.q, "configuration for the tip deflection");
  st_cmd->add_option("--wrench", st.wrench, "fx,fy,fz,mx,my,mz in the end-effector frame (default 1 N along z)");
  add_common(st_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  try {
    if (*fk_cmd) return run_fk(common, fk);
    if (*ik_cmd) return run_ik(common, ik);
    if (*setup_cmd) return run_setup_plan(common, setup);
    if (*birrt_cmd) return run_birrt(common, birrt);
    if (*cal_cmd) return run_calibrate(common, cal);
    if (*servo_cmd) return run_servo_sim(common, servo);
    if (*dex_cmd) return run_dexterity_sweep(common, dex);
    if (*st_cmd) return run_statics(common, st);
  } catch (const inbore::CalibrationError& e) {
    std::cerr << "calibration failed: " << e.what() << "\n";
    return kExitFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
