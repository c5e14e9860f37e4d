#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace txnlink::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one command line (args exclude the program name). Returns the
/// process exit code: 0 ok, 1 usage/config, 2 data, 3 numerical.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Built-in defaults for every config section.
nlohmann::json default_config();

/// Defaults, then the file (if any), then `section.key=value` overrides.
/// Override values are parsed as JSON, falling back to a plain string.
nlohmann::json resolve_config(const std::string& path, const std::vector<std::string>& overrides);

std::string sha256_file(const std::string& path);

}  // namespace txnlink::cli
