#pragma once

#include <iosfwd>
#include <string>
#include <vector>

// The `apn` command-line tool, callable in-process.
namespace apn::cli {

inline constexpr const char* kVersion = "1.0.0";

// Process exit codes.
enum Exit : int {
  kOk = 0,
  kFailure = 1,      // anything not listed below
  kBadInput = 2,     // config, spec, data file or checkpoint problems
  kNonFinite = 3,    // training produced a non-finite loss
  kSingleClass = 4,  // AUC undefined: only one label present
  kGradcheck = 5,    // a gradient check exceeded its tolerance
};

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace apn::cli
