#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace emotrack::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Parses "3", "0,2,5" or the inclusive range "0..4". Throws ConfigError.
std::vector<std::uint64_t> parse_seeds(const std::string& text);

/// Entry point shared by the executable and the tests. Diagnostics go to `err`,
/// short progress lines to `out`; every result is a file under --out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emotrack::cli
