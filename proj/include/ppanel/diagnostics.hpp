#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppanel/regress.hpp"

namespace ppanel {

/// Upper tail of chi-square(dof).
double chi2_sf(double x, int dof);
double chi2_quantile(double p, int dof);

struct HausmanResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  bool V_psd_repaired = false;
  bool naive = false;  // statistic used only the subset block of V (biased)
  std::vector<std::string> subset;
  std::vector<std::string> common;  // coefficients entering V
  Eigen::VectorXd difference;       // a - b over the subset
};

/// (b_a - b_b)' [V^-1]_SS (b_a - b_b) with V = V_a + V_b over all coefficients the
/// fits share. An empty subset tests every common coefficient. With naive = true
/// the form uses (V_SS)^-1 instead.
HausmanResult hausman(const FitResult& a, const FitResult& b, const std::vector<std::string>& subset = {},
                      bool naive = false);

std::string hausman_to_json(const HausmanResult& h);

struct DfbetasResult {
  FitResult fit;
  Eigen::MatrixXd values;  // rows of the fit x coefficients
  double threshold = 0.0;
  std::vector<std::string> tested;   // coefficients looked at
  std::vector<double> max_abs;       // per fit row
  std::vector<std::size_t> flagged;  // table rows
  std::vector<std::size_t> retained; // table rows
};

/// Externally studentized DFBETAS of an OLS fit; rows whose largest |DFBETAS| over
/// `subset` (all coefficients when empty) exceeds the threshold (default 2/sqrt(n)) are flagged.
DfbetasResult dfbetas_filter(const ModelSpec& spec, const PanelTable& table,
                             const std::vector<std::string>& subset = {},
                             std::optional<double> threshold = std::nullopt);

/// Copy of the table without the flagged rows.
PanelTable drop_flagged(const PanelTable& table, const DfbetasResult& result);

struct HetTestResult {
  double statistic = 0.0;  // n R^2 of the auxiliary regression
  int dof = 0;
  double p_value = 1.0;
  bool rejected = false;
  std::vector<std::string> auxiliary;  // auxiliary regressors kept
  std::vector<double> weights;         // per table row (1 for unused rows)
  FitResult reweighted;                // equals the input fit when not rejected
};

/// Weights 1/|e| with |e| floored at its 1st percentile; uniform when every residual is 0.
Eigen::VectorXd reweight_inverse_abs_residual(const Eigen::VectorXd& residuals);

HetTestResult het_test_and_reweight(const FitResult& fit, const ModelSpec& spec, const PanelTable& table,
                                    double alpha = 0.05, bool force_reweight = false);

}  // namespace ppanel
