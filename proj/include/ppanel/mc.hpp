#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppanel/data.hpp"
#include "ppanel/estimators.hpp"
#include "ppanel/pseudo.hpp"

namespace ppanel {

/// Household panel with cell effects, unit effects, Mundlak endogeneity and
/// classical measurement error in the regressor.
struct DgpConfig {
  int n_units = 500;
  int T = 4;
  int n_cells = 50;  // cell of unit h is h mod n_cells; must divide n_units

  double intercept = 0.1;
  double beta = 0.4;
  double c = 0.0;             // coefficient on x^2
  double delta_endog = 0.0;   // effect of the unit time-mean of x on the specific effect
  double sigma_mu2 = 0.05;    // cell effect
  double sigma_upsilon2 = 0.05;  // individual effect
  double sigma_eps2 = 0.05;
  double reliability = 1.0;   // var(x) / (var(x) + var(m))

  // regressor x = x0 + cell mean + unit mean + wave shock
  double x0 = 0.0;
  double sigma_x_cell2 = 0.1;
  double sigma_x_unit2 = 0.2;
  double sigma_x_wave2 = 0.1;

  // instrument z = strength * (wave shock of x) + noise
  double instrument_strength = 1.0;
  double sigma_instrument_noise2 = 0.1;

  // contaminated noise: share of draws whose eps is scaled by outlier_scale
  double outlier_share = 0.0;
  double outlier_scale = 1.0;

  // fraction of a cell's households missing per wave, drawn uniformly in [0, v]
  // (repeated cross-sections with time-varying cell sizes)
  double cell_size_variation = 0.0;

  std::uint64_t seed = 42;

  double var_x() const { return sigma_x_cell2 + sigma_x_unit2 + sigma_x_wave2; }
  void check() const;
  static DgpConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

/// Column names of the generated table.
namespace dgp_columns {
inline const std::string y = "y";
inline const std::string x = "x";          // observed (mismeasured) regressor, log outlay role
inline const std::string x2 = "x2";        // square of the observed regressor
inline const std::string z = "z";          // instrument
inline const std::string outlay = "outlay";
inline const std::string cell = "cell";
inline const std::string x_true = "x_true";
inline const std::string alpha = "alpha";
inline const std::string m = "m";
}  // namespace dgp_columns

/// Draws one panel from `config.seed`.
PanelTable generate(const DgpConfig& config);
/// Draws the panel of replication `rep`: stream seeded from (seed, rep).
PanelTable generate(const DgpConfig& config, std::uint64_t rep);

/// Cell means (equal weights) of a generated table, ready for the panel estimators.
PanelTable group_generated(const PanelTable& table, Weighting weighting = Weighting::equal);

struct StudyConfig {
  DgpConfig dgp;
  int reps = 100;
  std::vector<std::string> levels{"individual"};  // individual | pseudo
  std::vector<std::string> estimators{"between", "within"};
  std::vector<CorrectionKind> corrections{CorrectionKind::none_c};
  std::vector<bool> iv{false};
  bool wave_dummies = true;
  bool quadratic = false;  // adds x2, instrumented by the fitted square under IV
  double alpha = 0.05;     // nominal size for rejection rates
  bool hausman = true;     // between vs within test when both run uninstrumented

  void check() const;
  static StudyConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct McRow {
  std::string level;
  std::string estimator;
  std::string correction;
  bool iv = false;
  int n_ok = 0;
  int n_failed = 0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double mc_se = 0.0;           // standard error of the mean estimate
  double mean_se = 0.0;         // average reported standard error
  double rejection_rate = 0.0;  // t test of the true slope (Hausman rows: chi-square test)
  std::vector<double> estimates;  // per successful replication, in replication order
  std::vector<int> failed_reps;
};

struct McReport {
  StudyConfig config;
  std::vector<McRow> rows;

  const McRow& row(const std::string& level, const std::string& estimator, const std::string& correction,
                   bool iv) const;
  std::string to_csv() const;
  std::string to_json() const;
};

/// Model used by the study: y on x (and x2), intercept, wave dummies.
ModelSpec study_spec(const StudyConfig& config);

McReport run_study(const StudyConfig& config);

}  // namespace ppanel
