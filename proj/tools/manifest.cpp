#include "manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>

namespace inbore::cli {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json to_json(const RunManifest& m) {
  return {{"command", m.command},  {"config_paths", m.config_paths}, {"seed", m.seed},
          {"out_dir", m.out_dir.string()}, {"jobs", m.jobs},        {"argv", m.argv},
          {"git_describe", m.git_describe}, {"timestamp", m.timestamp}};
}

void write_manifest(const RunManifest& m) {
  std::filesystem::create_directories(m.out_dir);
  const auto path = m.out_dir / "manifest.json";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_json(m).dump(2) << "\n";
}

}  // namespace inbore::cli
