#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lmmtc::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Runs one command line. Returns 0 on success, 1 on a domain error (bad data, bad config
/// values, I/O failure) and 2 on a usage error, after printing the usage text.
int dispatch(int argc, const char* const* argv);

/// Convenience overload; args excludes the program name.
int dispatch(const std::vector<std::string>& args);

}  // namespace lmmtc::cli
