#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ppanel/data.hpp"
#include "ppanel/regress.hpp"

namespace ppanel {

enum class TransformKind { between, within, first_difference, cross_section };

/// Pseudo-panel heteroscedasticity handling.
///   approx_a  weights by 1/delta_H (time-averaged factor)
///   exact_b   exact between weights and the Delta-matrix within estimator
///   none_c    unweighted
///   false_d   rows scaled by delta_Ht^-1/2 before the panel transform
enum class CorrectionKind { approx_a, exact_b, none_c, false_d };

enum class WithinMode { demean, period_system };
enum class WithinPath { delta_matrix, lsdv };
enum class FdCovariance { sur, cluster };

std::string_view to_string(TransformKind kind);
std::string_view to_string(CorrectionKind kind);
TransformKind parse_transform(std::string_view text);    // between|within|fd|cs
CorrectionKind parse_correction(std::string_view text);  // approx|exact|none|false
WithinMode parse_within_mode(std::string_view text);     // demean|system

struct VarianceComponents {
  double sigma_mu2 = 0.0;
  double sigma_eps2 = 0.0;
  bool truncated = false;  // sigma_mu2 estimate was negative and set to 0
};

struct PanelOptions {
  CorrectionKind correction = CorrectionKind::none_c;
  std::string delta_column = "delta";
  /// Used by exact_b between weights; estimated from the data when absent.
  std::optional<VarianceComponents> components;
  WithinMode within_mode = WithinMode::demean;
  WithinPath within_path = WithinPath::delta_matrix;
  FdCovariance fd_covariance = FdCovariance::sur;
  CovarianceKind covariance = CovarianceKind::homoscedastic;
};

/// A panel design after the between / within / difference transform, ready to fit.
struct TransformedDesign {
  enum class FitKind { least_squares, period_system, per_period };

  TransformKind kind = TransformKind::between;
  Design design;
  Eigen::Index absorbed = 0;
  std::vector<int> unit;    // per transformed row
  std::vector<int> period;  // per transformed row
  int n_units = 0;
  int n_periods = 0;
  FitKind fit = FitKind::least_squares;
  bool drop_last_period = false;  // within period system: demeaned residuals sum to zero
  std::vector<std::string> report;  // coefficients kept in the result (LSDV drops unit dummies)
  std::vector<int> waves;
  std::string method;
};

TransformedDesign transform_panel(TransformKind kind, const ModelSpec& spec, const PanelTable& table,
                                  const PanelOptions& options = {});

struct CrossSectionResult {
  std::vector<int> waves;
  std::vector<FitResult> per_wave;
  FitResult pooled;  // unweighted mean of per-wave coefficients; variance = mean variance / waves
};

FitResult fit_transformed(const TransformedDesign& td, const PanelOptions& options = {});
CrossSectionResult fit_cross_sections(const TransformedDesign& td);

FitResult between_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options = {});
FitResult within_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options = {});
FitResult first_difference_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options = {});
CrossSectionResult cross_section_fit(const ModelSpec& spec, const PanelTable& table,
                                     const PanelOptions& options = {});
/// Dispatch on kind; cross-section returns the pooled summary.
FitResult panel_fit(TransformKind kind, const ModelSpec& spec, const PanelTable& table,
                    const PanelOptions& options = {});

/// Swamy-Arora moments. With a delta column the within step uses the exact
/// correction and the between moment subtracts sigma_eps2 * mean(w_c) / T.
VarianceComponents variance_components(const ModelSpec& spec, const PanelTable& table,
                                       std::optional<std::string> delta_column = std::nullopt);

/// Delta = D^-1 - D^-1 Z (Z' D^-1 Z)^-1 Z' D^-1 for D = diag(d).
Eigen::MatrixXd delta_matrix(const Eigen::VectorXd& d, const Eigen::MatrixXd& Z);

/// Omega = sigma_mu2 * T * B + sigma_eps2 * D on a unit-major (cell x wave) index;
/// delta is cells x waves.
Eigen::MatrixXd error_components_omega(const Eigen::MatrixXd& delta, const VarianceComponents& sigma);

struct SpectralCheck {
  bool decomposable = false;
  double asymmetry = 0.0;  // max |B Omega - (B Omega)'|
};

/// B Omega is symmetric exactly when delta is time-invariant within each cell.
SpectralCheck spectral_check(const Eigen::MatrixXd& delta, const VarianceComponents& sigma);

struct SpectralGls {
  FitResult gls;      // direct GLS on Omega
  FitResult between;  // exact between
  FitResult within;   // within weighted by 1/delta_H
  Eigen::MatrixXd between_precision;
  Eigen::MatrixXd within_precision;
  Eigen::VectorXd combined;  // matrix-weighted between/within combination
};

/// GLS and its between/within decomposition; needs delta time-invariant within cells.
SpectralGls spectral_gls(const ModelSpec& spec, const PanelTable& table, const VarianceComponents& sigma,
                         const std::string& delta_column = "delta");

}  // namespace ppanel
