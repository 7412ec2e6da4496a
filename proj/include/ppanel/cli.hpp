#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ppanel {

/// Exit codes of the command-line front end.
enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_numerical = 3 };

/// Flags shared by the estimate and filter commands, validated before any work.
struct RunConfig {
  std::string input;
  std::string schema;  // role schema JSON; pseudo-panel CSVs need none
  std::string dependent;
  std::vector<std::string> regressors;
  std::vector<std::string> dummies;
  bool no_intercept = false;
  std::string estimator = "ols";
  std::string correction = "none";
  std::string within_mode = "demean";
  std::string fd_covariance = "sur";
  std::string covariance = "homo";
  std::string delta_column = "delta";
  bool iv = false;
  std::vector<std::string> instruments;
  std::string target;
  std::string square;
  std::string square_rule = "fitted";
  bool all = false;
  std::uint64_t seed = 42;

  void check() const;
};

/// Runs one command line (without the program name). Output files follow
/// --out; with no --out the main result goes to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ppanel
