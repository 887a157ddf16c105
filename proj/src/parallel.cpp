#include "inbore/parallel.hpp"

#include <cstdlib>
#include <stdexcept>

namespace inbore {

int resolve_jobs(std::optional<int> requested) {
  if (requested) {
    if (*requested < 1) throw std::invalid_argument("--jobs must be >= 1");
    return *requested;
  }
  if (const char* env = std::getenv("INBORE_KIN_JOBS"); env != nullptr && *env != '\0') {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(env, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != std::string(env).size() || v < 1) {
      throw std::invalid_argument(std::string("INBORE_KIN_JOBS must be a positive integer, got '") + env + "'");
    }
    return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace inbore
