#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tgtn::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Runs one command: gen, train, eval, ablate, stream or report. args excludes
/// the program name. Returns 0 on success, 2 on usage errors and 1 when a
/// library call fails; diagnostics go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when it
/// parses, else taken as a string. Throws Error when a path does not exist
/// in `config`.
nlohmann::json apply_overrides(nlohmann::json config, const std::vector<std::string>& assignments);

}  // namespace tgtn::cli
