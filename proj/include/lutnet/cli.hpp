#pragma once

#include <iosfwd>

namespace lutnet::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInvalidInput = 2,
  kMismatch = 3,
};

/// Runs one subcommand (cost, train, tables, emit, verify). Never throws;
/// every failure becomes an exit code with a message on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace lutnet::cli
