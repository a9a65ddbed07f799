#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace avsd {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Runs one command line (without the program name). Commands: prepare-vocab,
/// train, evaluate, generate, grad-check, count-params, synth-data.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace avsd
