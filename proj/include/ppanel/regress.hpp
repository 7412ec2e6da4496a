#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppanel/data.hpp"

namespace ppanel {

enum class CovarianceKind {
  homoscedastic,
  white,    ///< HC1 heteroscedasticity-consistent
  cluster,  ///< cluster-robust by Design::groups
};

/// Name used for the intercept column.
inline const std::string kIntercept = "const";
/// Dummy group that expands the wave index.
inline const std::string kWaveDummies = "wave";

struct ModelSpec {
  std::string dependent;
  std::vector<std::string> regressors;
  bool intercept = true;
  /// Each entry ("wave" or a column name) expands into level dummies, first level dropped.
  std::vector<std::string> dummy_groups;
  std::optional<std::string> weight;
};

/// Numeric form of a ModelSpec over the complete-case rows of a table.
struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd weights;  // empty when unweighted
  std::vector<std::string> names;
  std::vector<std::size_t> rows;  // source row of each design row
  std::vector<int> groups;        // cluster id per row, for CovarianceKind::cluster
  std::size_t n_excluded = 0;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index k() const { return X.cols(); }
};

Design build_design(const ModelSpec& spec, const PanelTable& table);

struct FitResult {
  std::string method;
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;
  Eigen::VectorXd residuals;
  Eigen::VectorXd weights;  // empty when unweighted
  double sigma2 = 0.0;
  double r2 = 0.0;
  Eigen::Index df = 0;
  Eigen::Index n_used = 0;
  std::size_t n_excluded = 0;
  std::vector<std::size_t> rows;
  std::map<std::string, double> means;   // sample means of model variables, used rows
  std::map<std::string, double> extras;  // e.g. first-stage F statistics
  std::vector<std::string> notes;

  Eigen::Index index_of(const std::string& name) const;
  bool has(const std::string& name) const;
  double coefficient(const std::string& name) const;
  double std_error(const std::string& name) const;
  Eigen::VectorXd std_errors() const;
};

struct LsOptions {
  CovarianceKind covariance = CovarianceKind::homoscedastic;
  /// Parameters swept out before the fit (fixed effects); reduces the degrees of freedom.
  Eigen::Index absorbed = 0;
  /// Covariance is (X'WX)^-1 without a residual-variance scale (GLS on a known Omega).
  bool known_scale = false;
  std::string method = "ols";
};

/// Weighted least squares through a column-pivoted QR; rank is judged from the
/// singular values of R (ratio below 1e-10 is RankDeficient).
FitResult least_squares(const Design& design, const LsOptions& options = {});

FitResult ols(const ModelSpec& spec, const PanelTable& table,
              CovarianceKind covariance = CovarianceKind::homoscedastic);
/// Minimizes sum w_r e_r^2; weights are aligned with table rows.
FitResult wls(const ModelSpec& spec, const PanelTable& table, std::span<const double> weights,
              CovarianceKind covariance = CovarianceKind::homoscedastic);
/// beta = (X'O^-1 X)^-1 X'O^-1 y, cov = (X'O^-1 X)^-1; omega is over the used rows.
FitResult gls(const ModelSpec& spec, const PanelTable& table, const Eigen::MatrixXd& omega);
FitResult gls(const Design& design, const Eigen::MatrixXd& omega);

struct SurOptions {
  bool iterate = false;
  int max_iterations = 100;
  double tolerance = 1e-8;
};

struct SurResult {
  std::vector<FitResult> equations;
  Eigen::MatrixXd sigma;  // cross-equation residual covariance
  Eigen::MatrixXd cov;    // full stacked coefficient covariance
  int iterations = 0;
};

SurResult sur(std::span<const ModelSpec> specs, const PanelTable& table, const SurOptions& options = {});
SurResult sur(std::span<const Design> designs, const SurOptions& options = {});
/// Single stacked GLS step with a given cross-equation covariance.
SurResult sur_with_sigma(std::span<const Design> designs, const Eigen::MatrixXd& sigma);

std::map<std::string, double> variable_means(const ModelSpec& spec, const PanelTable& table,
                                             std::span<const std::size_t> rows);

/// Value rounded to 12 significant digits, the precision used for all exports.
double round12(double value);

std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(const std::string& text);

}  // namespace ppanel
