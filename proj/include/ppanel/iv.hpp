#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppanel/estimators.hpp"
#include "ppanel/regress.hpp"

namespace ppanel {

struct InstrumentSet {
  std::string target;                // endogenous column (log outlay or log income)
  std::vector<std::string> columns;  // instruments
};

/// How the squared endogenous term enters the second stage.
enum class SquareRule {
  fitted_square,  ///< (y_hat)^2, the default rule
  separate,       ///< first stage for the square on instruments and their squares
};

struct IvOptions {
  /// Regressor holding the square of the target; empty when the model is linear in it.
  std::optional<std::string> square;
  SquareRule square_rule = SquareRule::fitted_square;
};

struct FirstStage {
  FitResult fit;
  std::vector<double> fitted;  // aligned with table rows, NaN where not used
  double f_stat = 0.0;         // F on the excluded instruments
  int df1 = 0;
  Eigen::Index df2 = 0;
  bool weak = false;        // F < 10, a reporting convention
  bool degenerate = false;  // perfect fit, F infinite
};

constexpr double kWeakInstrumentF = 10.0;

/// OLS of set.target on the instruments plus the exogenous part of `exogenous`
/// (its regressors, dummy groups and intercept; the dependent is ignored).
FirstStage first_stage(const InstrumentSet& set, const ModelSpec& exogenous, const PanelTable& table);

/// 2SLS in levels. Covariance sigma^2 (X_hat'X_hat)^-1 with sigma^2 from residuals
/// of the original regressors. extras carry first-stage F statistics.
FitResult two_stage(const ModelSpec& spec, const PanelTable& table, const InstrumentSet& set,
                    const IvOptions& options = {});

/// Per-wave level first stages, then `kind` applied with the target replaced by
/// its fitted level (differences of fitted levels under first differences).
FitResult panel_iv_fit(TransformKind kind, const ModelSpec& spec, const PanelTable& table,
                       const InstrumentSet& set, const IvOptions& iv = {}, const PanelOptions& options = {});

FitResult fd_instrument(const ModelSpec& spec, const PanelTable& table, const InstrumentSet& set,
                        const IvOptions& iv = {}, const PanelOptions& options = {});

}  // namespace ppanel

namespace ppanel {

/// Estimator names accepted by the CLI and the simulation study.
/// "ols" is pooled least squares in levels; the rest map to TransformKind.
bool is_estimator_name(const std::string& name);

/// One fit by name, instrumented when `instruments` is given.
FitResult estimate_by_name(const std::string& estimator, const ModelSpec& spec, const PanelTable& table,
                           const PanelOptions& options = {},
                           const std::optional<InstrumentSet>& instruments = std::nullopt,
                           const IvOptions& iv = {});

}  // namespace ppanel
