#pragma once

// Command-line front end. run_cli parses arguments and dispatches to the
// commands below; every failure is mapped to a stable exit code:
//   0 success, 1 check failure, 2 configuration/format error,
//   3 runtime numeric/data error.

#include <ostream>
#include <string>
#include <vector>

#include "vesselkit/phantom.hpp"
#include "vesselkit/pipeline.hpp"

namespace vk {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfig = 2,
  kExitRuntime = 3,
};

/// Exit code for an exception thrown by a command.
int exit_code_for(const std::exception& e);

/// Writes a suite as per-sample directories (image.pfm, label.png, fov.png,
/// diameter.pfm) plus manifest.csv (split,index,seed,dir).
void save_suite(const std::string& dir, const PhantomSuite& suite);
/// Reads a suite written by save_suite.
PhantomSuite load_suite(const std::string& dir);

/// Manifest text for a suite.
std::string suite_manifest(const PhantomSuite& suite);

/// Entry point shared by the executable and the tests.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vk
