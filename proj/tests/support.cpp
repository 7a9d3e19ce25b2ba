#include "support.hpp"

#include <unistd.h>

#include <filesystem>

namespace lmmtc::testing {

std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lmmtc-tests-" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace lmmtc::testing
