#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppanel {

enum class ErrorCode {
  // validation
  MissingColumn,
  DuplicateUnitWave,
  NonNumericCell,
  ShareOutOfRange,
  NoAdult,
  EmptyResult,
  UncoveredAge,
  EmptyCell,
  NonPositiveWeight,
  NonPositivePrice,
  NotBalanced,
  ConfigInvalid,
  InsufficientData,
  // numerical
  RankDeficient,
  NotPositiveDefinite,
  SingularSigma,
  NotIdentified,
  NoConvergence,
  ZeroShare,
  ZeroPriceElasticity,
};

std::string_view to_string(ErrorCode code);

/// Numerical failures map to CLI exit code 3, everything else to 2.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ppanel
