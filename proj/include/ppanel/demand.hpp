#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppanel/estimators.hpp"
#include "ppanel/regress.hpp"

namespace ppanel {

/// Log Stone index per wave: sum_i wbar_i ln p_it, shifted so the first wave is 0.
/// prices is waves x goods.
Eigen::VectorXd stone_index(const Eigen::MatrixXd& prices, const Eigen::VectorXd& shares);

/// Regressor names used by the share equations.
inline const std::string kLnY = "lny";     // ln(Y / P)
inline const std::string kLnY2 = "lny2";   // ln(Y / P)^2 / e(p)

struct DemandSpec {
  std::vector<std::string> goods;   // labels
  std::vector<std::string> shares;  // share column per good
  std::string log_outlay;
  std::vector<std::string> prices;  // price level column per good; empty = wave-dummy fallback
  bool quadratic = false;
  bool log_price_regressors = true;  // ln p_j enter every equation when prices are given
  std::vector<std::string> controls;
  /// Stone weights; the outlay-weighted sample-mean shares when absent.
  std::optional<std::vector<double>> stone_weights;
};

struct QaidsOptions {
  std::optional<TransformKind> estimator;  // pooled OLS/SUR in levels when absent
  PanelOptions panel;
  int max_iterations = 100;
  double tolerance = 1e-6;
};

struct QaidsResult {
  std::vector<FitResult> fits;  // per good
  Eigen::MatrixXd sigma;        // cross-equation residual covariance
  std::vector<double> trace;    // max coefficient change per outer iteration (first entry NaN)
  int iterations = 0;
  bool converged = false;
  std::vector<double> stone_weights;
  std::vector<double> log_e;  // ln e(p) per table row at the final iteration
};

/// Outer iteration on e(p) = prod_i p_i^{b_i}; one linear AIDS pass when not quadratic.
QaidsResult qaids_fit(const DemandSpec& spec, const PanelTable& table, const QaidsOptions& options = {});

/// Adds the share-equation regressors (lny, lny2 for a given ln e per row) to a table.
PanelTable demand_table(const DemandSpec& spec, const PanelTable& table, const std::vector<double>& stone_weights,
                        const std::vector<double>& log_e);
ModelSpec share_equation(const DemandSpec& spec, std::size_t good, std::optional<TransformKind> estimator);

/// e = 1 + (b + 2 (c / e_p) ln_y) / wbar.
double expenditure_elasticity(double b, double c, double wbar, double ln_y, bool quadratic, double e_p = 1.0);
double expenditure_elasticity(const FitResult& fit, double wbar, double ln_y, bool quadratic, double e_p = 1.0);

struct ElasticityEntry {
  std::string good;
  std::string estimator;
  double elasticity = 0.0;
  double wbar = 0.0;
  double ln_y = 0.0;
  std::optional<double> own_price;
};

/// Elasticities at the sample means of each fit (overridable).
std::vector<ElasticityEntry> elasticity_report(const DemandSpec& spec, const QaidsResult& result,
                                               const std::string& estimator_label,
                                               std::optional<double> ln_y = std::nullopt);
std::string elasticity_report_json(const std::vector<ElasticityEntry>& entries);

struct ShadowPriceResult {
  std::string good;
  double e_cs = 0.0;
  double e_ts = 0.0;
  double gamma_ii = 0.0;
  bool gamma_from_frisch = false;
  double shadow_income_elasticity = 0.0;
};

/// (e_cs - e_ts) / gamma_ii; gamma_ii defaults to -0.5 e_ts.
ShadowPriceResult shadow_price_elasticity(double e_cs, double e_ts, std::optional<double> gamma_ii = std::nullopt,
                                          std::string good = {});
std::string shadow_price_json(const std::vector<ShadowPriceResult>& rows);

}  // namespace ppanel
