#include "ppanel/demand.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ppanel/error.hpp"

namespace ppanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string log_price_name(const std::string& price) { return "lnp_" + price; }

void check_spec(const DemandSpec& spec) {
  if (spec.goods.empty()) throw Error(ErrorCode::ConfigInvalid, "demand system has no goods");
  if (spec.shares.size() != spec.goods.size())
    throw Error(ErrorCode::ConfigInvalid, "one share column per good is required");
  if (!spec.prices.empty() && spec.prices.size() != spec.goods.size())
    throw Error(ErrorCode::ConfigInvalid, "give a price column for every good or none");
  if (spec.log_outlay.empty()) throw Error(ErrorCode::ConfigInvalid, "demand system needs a log outlay column");
  if (spec.stone_weights && spec.stone_weights->size() != spec.goods.size())
    throw Error(ErrorCode::ConfigInvalid, "one Stone weight per good is required");
}

double log_price(const PanelTable& table, const std::string& column, std::size_t row) {
  const double p = table.column(column)[row];
  if (std::isnan(p)) return kNaN;
  if (!(p > 0.0))
    throw Error(ErrorCode::NonPositivePrice, "price '" + column + "' at row " + std::to_string(row + 1) + " is " +
                                                 format_number(p));
  return std::log(p);
}

std::vector<double> plutocratic_shares(const DemandSpec& spec, const PanelTable& table) {
  const auto& lnx = table.column(spec.log_outlay);
  std::vector<double> out;
  for (const auto& s : spec.shares) {
    const auto& w = table.column(s);
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < table.rows(); ++r) {
      if (std::isnan(w[r]) || std::isnan(lnx[r])) continue;
      const double x = std::exp(lnx[r]);
      num += x * w[r];
      den += x;
    }
    if (!(den > 0.0)) throw Error(ErrorCode::InsufficientData, "no observed shares for '" + s + "'");
    out.push_back(num / den);
  }
  return out;
}

}  // namespace

Eigen::VectorXd stone_index(const Eigen::MatrixXd& prices, const Eigen::VectorXd& shares) {
  if (prices.cols() != shares.size())
    throw Error(ErrorCode::ConfigInvalid, "price matrix and share vector differ in goods");
  if ((prices.array() <= 0.0).any() || prices.hasNaN())
    throw Error(ErrorCode::NonPositivePrice, "Stone index needs positive prices");
  Eigen::VectorXd out = prices.array().log().matrix() * shares;
  if (out.size()) out.array() -= out(0);
  return out;
}

PanelTable demand_table(const DemandSpec& spec, const PanelTable& table, const std::vector<double>& stone_weights,
                        const std::vector<double>& log_e) {
  check_spec(spec);
  const std::size_t n = table.rows();
  std::vector<double> ln_index(n, 0.0);
  PanelTable out = table;
  if (!spec.prices.empty()) {
    std::vector<std::vector<double>> lnp(spec.prices.size(), std::vector<double>(n));
    for (std::size_t g = 0; g < spec.prices.size(); ++g)
      for (std::size_t r = 0; r < n; ++r) lnp[g][r] = log_price(table, spec.prices[g], r);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t g = 0; g < lnp.size(); ++g) s += stone_weights[g] * lnp[g][r];
      ln_index[r] = s;
    }
    // base: mean index over the first wave
    const auto waves = table.distinct_waves();
    double base = 0.0;
    int count = 0;
    for (std::size_t r = 0; r < n; ++r)
      if (!waves.empty() && table.waves()[r] == waves.front() && !std::isnan(ln_index[r])) {
        base += ln_index[r];
        ++count;
      }
    if (count) base /= count;
    for (auto& v : ln_index) v -= base;
    for (std::size_t g = 0; g < lnp.size(); ++g) out = out.with_column(log_price_name(spec.prices[g]), lnp[g]);
  }
  const auto& lnx = table.column(spec.log_outlay);
  std::vector<double> lny(n), lny2(n);
  for (std::size_t r = 0; r < n; ++r) {
    lny[r] = lnx[r] - ln_index[r];
    lny2[r] = lny[r] * lny[r] / std::exp(log_e.empty() ? 0.0 : log_e[r]);
  }
  out = out.with_column(kLnY, std::move(lny));
  if (spec.quadratic) out = out.with_column(kLnY2, std::move(lny2));
  return out;
}

ModelSpec share_equation(const DemandSpec& spec, std::size_t good, std::optional<TransformKind> estimator) {
  (void)estimator;
  ModelSpec m;
  m.dependent = spec.shares.at(good);
  m.regressors.push_back(kLnY);
  if (spec.quadratic) m.regressors.push_back(kLnY2);
  if (!spec.prices.empty() && spec.log_price_regressors)
    for (const auto& p : spec.prices) m.regressors.push_back(log_price_name(p));
  for (const auto& c : spec.controls) m.regressors.push_back(c);
  if (spec.prices.empty()) m.dummy_groups.push_back(kWaveDummies);
  return m;
}

QaidsResult qaids_fit(const DemandSpec& spec, const PanelTable& table, const QaidsOptions& options) {
  check_spec(spec);
  QaidsResult out;
  out.stone_weights = spec.stone_weights ? *spec.stone_weights : plutocratic_shares(spec, table);

  // rows complete for every equation
  const PanelTable probe = demand_table(spec, table, out.stone_weights, {});
  ModelSpec all = share_equation(spec, 0, options.estimator);
  for (std::size_t g = 1; g < spec.shares.size(); ++g) all.regressors.push_back(spec.shares[g]);
  const std::vector<std::size_t> rows = build_design(all, probe).rows;
  if (rows.empty()) throw Error(ErrorCode::InsufficientData, "no complete rows for the demand system");
  const PanelTable sub = table.select_rows(rows);

  std::vector<std::vector<double>> lnp;
  for (const auto& p : spec.prices) {
    std::vector<double> v(sub.rows());
    for (std::size_t r = 0; r < sub.rows(); ++r) v[r] = log_price(sub, p, r);
    lnp.push_back(std::move(v));
  }

  std::vector<double> log_e(sub.rows(), 0.0);
  Eigen::VectorXd previous;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const PanelTable tab = demand_table(spec, sub, out.stone_weights, log_e);
    out.fits.clear();
    for (std::size_t g = 0; g < spec.goods.size(); ++g) {
      const ModelSpec eq = share_equation(spec, g, options.estimator);
      out.fits.push_back(options.estimator ? panel_fit(*options.estimator, eq, tab, options.panel)
                                           : ols(eq, tab, options.panel.covariance));
    }
    out.iterations = it;
    Eigen::Index total = 0;
    for (const auto& f : out.fits) total += f.coef.size();
    Eigen::VectorXd current(total);
    Eigen::Index pos = 0;
    for (const auto& f : out.fits) {
      current.segment(pos, f.coef.size()) = f.coef;
      pos += f.coef.size();
    }
    const double change = previous.size() ? (current - previous).cwiseAbs().maxCoeff() : kNaN;
    out.trace.push_back(change);
    previous = current;
    if (!spec.quadratic) {
      out.converged = true;
      break;
    }
    if (it > 1 && change < options.tolerance) {
      out.converged = true;
      break;
    }
    std::vector<double> next(sub.rows(), 0.0);
    for (std::size_t g = 0; g < lnp.size(); ++g) {
      const double b = out.fits[g].coefficient(kLnY);
      for (std::size_t r = 0; r < next.size(); ++r) next[r] += b * lnp[g][r];
    }
    double moved = 0.0;
    for (std::size_t r = 0; r < next.size(); ++r) moved = std::max(moved, std::abs(next[r] - log_e[r]));
    if (moved <= 1e-15) {
      out.converged = true;
      break;
    }
    log_e = std::move(next);
  }
  if (!out.converged) {
    std::string trace;
    for (double v : out.trace) trace += (trace.empty() ? "" : ", ") + format_number(v, 4);
    throw Error(ErrorCode::NoConvergence,
                "e(p) iteration did not converge in " + std::to_string(options.max_iterations) +
                    " iterations; coefficient changes: " + trace);
  }

  const Eigen::Index n = out.fits.front().residuals.size();
  bool aligned = true;
  for (const auto& f : out.fits) aligned = aligned && f.residuals.size() == n;
  if (aligned && n > 0) {
    Eigen::MatrixXd E(n, static_cast<Eigen::Index>(out.fits.size()));
    for (std::size_t g = 0; g < out.fits.size(); ++g) E.col(static_cast<Eigen::Index>(g)) = out.fits[g].residuals;
    out.sigma = E.transpose() * E / static_cast<double>(n);
  }
  for (auto& f : out.fits) {
    for (auto& r : f.rows) r = rows[r];
    f.n_excluded = table.rows() - static_cast<std::size_t>(f.n_used);
    f.extras["outer_iterations"] = out.iterations;
    double mean_log_e = 0.0;
    for (double v : log_e) mean_log_e += v;
    f.extras["mean_log_e"] = log_e.empty() ? 0.0 : mean_log_e / static_cast<double>(log_e.size());
  }
  out.log_e.assign(table.rows(), kNaN);
  for (std::size_t i = 0; i < rows.size(); ++i) out.log_e[rows[i]] = log_e[i];
  return out;
}

double expenditure_elasticity(double b, double c, double wbar, double ln_y, bool quadratic, double e_p) {
  if (!(std::abs(wbar) > 0.0) || std::isnan(wbar))
    throw Error(ErrorCode::ZeroShare, "elasticity needs a nonzero evaluation share");
  const double slope = b + (quadratic ? 2.0 * (c / e_p) * ln_y : 0.0);
  return 1.0 + slope / wbar;
}

double expenditure_elasticity(const FitResult& fit, double wbar, double ln_y, bool quadratic, double e_p) {
  const double c = quadratic ? fit.coefficient(kLnY2) : 0.0;
  return expenditure_elasticity(fit.coefficient(kLnY), c, wbar, ln_y, quadratic, e_p);
}

std::vector<ElasticityEntry> elasticity_report(const DemandSpec& spec, const QaidsResult& result,
                                               const std::string& estimator_label, std::optional<double> ln_y) {
  std::vector<ElasticityEntry> out;
  for (std::size_t g = 0; g < spec.goods.size(); ++g) {
    const FitResult& f = result.fits.at(g);
    ElasticityEntry e;
    e.good = spec.goods[g];
    e.estimator = estimator_label;
    e.wbar = f.means.at(spec.shares[g]);
    e.ln_y = ln_y.value_or(f.means.at(kLnY));
    const double e_p = std::exp(f.extras.count("mean_log_e") ? f.extras.at("mean_log_e") : 0.0);
    e.elasticity = expenditure_elasticity(f, e.wbar, e.ln_y, spec.quadratic, e_p);
    if (!spec.prices.empty() && spec.log_price_regressors) {
      const double gamma = f.coefficient(log_price_name(spec.prices[g]));
      e.own_price = -1.0 + gamma / e.wbar - f.coefficient(kLnY);
    }
    out.push_back(e);
  }
  return out;
}

std::string elasticity_report_json(const std::vector<ElasticityEntry>& entries) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json row;
    row["good"] = e.good;
    row["estimator"] = e.estimator;
    row["elasticity"] = round12(e.elasticity);
    row["wbar"] = round12(e.wbar);
    row["ln_y"] = round12(e.ln_y);
    if (e.own_price) row["own_price_elasticity"] = round12(*e.own_price);
    j.push_back(row);
  }
  return j.dump(2);
}

ShadowPriceResult shadow_price_elasticity(double e_cs, double e_ts, std::optional<double> gamma_ii, std::string good) {
  ShadowPriceResult r;
  r.good = std::move(good);
  r.e_cs = e_cs;
  r.e_ts = e_ts;
  r.gamma_from_frisch = !gamma_ii.has_value();
  r.gamma_ii = gamma_ii.value_or(-0.5 * e_ts);
  if (r.gamma_ii == 0.0 || std::isnan(r.gamma_ii))
    throw Error(ErrorCode::ZeroPriceElasticity, "direct price elasticity is zero");
  r.shadow_income_elasticity = (e_cs - e_ts) / r.gamma_ii;
  return r;
}

std::string shadow_price_json(const std::vector<ShadowPriceResult>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    if (!r.good.empty()) row["good"] = r.good;
    row["cs_income_elasticity"] = round12(r.e_cs);
    row["ts_income_elasticity"] = round12(r.e_ts);
    row["direct_price_elasticity"] = round12(r.gamma_ii);
    row["price_rule"] = r.gamma_from_frisch ? "frisch" : "given";
    row["shadow_price_income_elasticity"] = round12(r.shadow_income_elasticity);
    j.push_back(row);
  }
  return j.dump(2);
}

}  // namespace ppanel
