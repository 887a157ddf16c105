#pragma once
// Subcommand implementations behind the inbore_kin entry point.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace inbore::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFailure = 3;

/// Bad flags, unreadable or malformed configuration (exit 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string out = "out";
  std::uint64_t seed = 1;
  std::optional<int> jobs;
  std::vector<std::string> argv;
};

struct FkOptions {
  std::string robot;
  std::string q;
};

struct IkOptions {
  std::string robot;
  std::string target;  ///< x,y,z,nx,ny,nz or a pose JSON file
  std::string q0;
  bool partition = false;
};

struct SetupOptions {
  std::string robot;
  std::string scene;
  std::string planner;
  std::string target;  ///< skin point and outward normal x,y,z,nx,ny,nz
  int candidates = 100;  ///< candidates drawn from the scene's patient when no target is given
  int candidate = -1;    ///< restrict to one index of that list
  double standoff = 0.025;
  std::optional<double> beta;
};

struct BirrtOptions {
  std::string robot;
  std::string scene;
  std::string start;
  std::string goal;
  int pairs = 0;  ///< random start/goal pairs instead of --start/--goal
  double step = 0.02;
  double verify_step = 0.005;
  int max_samples = 4000;
};

struct CalibrateOptions {
  std::string robot;
  bool synthetic = false;
  double fiducial_noise = 0.0;
  double tracker_noise = 0.0;
  std::string robot_samples;    ///< CSV q1..q8
  std::string tracker_samples;  ///< CSV x,y,z
  std::string design;           ///< CSV id,x,y,z
  std::string volume;           ///< volume header JSON
  std::string reference;        ///< pose JSON of the reference sensor
  double threshold = 1500.0;
};

struct ServoOptions {
  std::string robot;
  std::string sim;
  std::string mode = "both";  ///< open | closed | both
  std::string apex_q;         ///< configuration whose end-effector pose is the cone apex (default home)
  double zenith_deg = 15.0;
  int points = 64;
  bool noiseless = false;
};

struct DexterityOptions {
  std::string robot;
  std::string scene;
  std::string planner;
  std::vector<std::string> bodies = {"male:0"};
  std::vector<std::string> subsets = {"8dof"};
  int candidates = 2000;
  double standoff = 0.025;
  std::optional<double> delta_adj_deg;
  double time_budget = 0.0;
};

struct StaticsOptions {
  double k_link = 1.79;   ///< N/mm
  double k_cable = 0.80;  ///< N/mm
  std::string robot;
  std::string q;
  std::string wrench;  ///< fx,fy,fz,mx,my,mz in the EE frame
};

int run_fk(const Common& c, const FkOptions& o);
int run_ik(const Common& c, const IkOptions& o);
int run_setup_plan(const Common& c, const SetupOptions& o);
int run_birrt(const Common& c, const BirrtOptions& o);
int run_calibrate(const Common& c, const CalibrateOptions& o);
int run_servo_sim(const Common& c, const ServoOptions& o);
int run_dexterity_sweep(const Common& c, const DexterityOptions& o);
int run_statics(const Common& c, const StaticsOptions& o);

}  // namespace inbore::cli
