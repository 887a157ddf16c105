#pragma once
// Run manifest written to the output directory before any long computation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace inbore::cli {

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config_paths;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;
  int jobs = 1;
  std::vector<std::string> argv;
  std::string git_describe;
  std::string timestamp;  ///< UTC, ISO 8601
};

std::string utc_timestamp();
nlohmann::json to_json(const RunManifest& m);
/// Creates the output directory and writes manifest.json into it.
void write_manifest(const RunManifest& m);

}  // namespace inbore::cli
