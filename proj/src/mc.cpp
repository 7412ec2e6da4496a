#include "ppanel/mc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "ppanel/diagnostics.hpp"
#include "ppanel/error.hpp"
#include "ppanel/iv.hpp"
#include "ppanel/regress.hpp"

namespace ppanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string padded(char prefix, int value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

int digits_of(int n) { return static_cast<int>(std::to_string(std::max(0, n - 1)).size()); }

using json = nlohmann::ordered_json;

/// Reads known keys into a struct; unknown keys are configuration errors.
template <typename Fields>
void read_fields(const std::string& text, const char* what, Fields&& fields) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string(what) + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      if (!fields(it.key(), it.value()))
        throw Error(ErrorCode::ConfigInvalid, std::string(what) + ": unknown key '" + it.key() + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ConfigInvalid, std::string(what) + ": bad value for '" + it.key() + "': " + e.what());
    }
  }
}

bool read_dgp_field(DgpConfig& c, const std::string& k, const nlohmann::json& v) {
#define PP_FIELD(name)        \
  if (k == #name) {           \
    v.get_to(c.name);         \
    return true;              \
  }
  PP_FIELD(n_units) PP_FIELD(T) PP_FIELD(n_cells) PP_FIELD(intercept) PP_FIELD(beta) PP_FIELD(c)
  PP_FIELD(delta_endog) PP_FIELD(sigma_mu2) PP_FIELD(sigma_upsilon2) PP_FIELD(sigma_eps2) PP_FIELD(reliability)
  PP_FIELD(x0) PP_FIELD(sigma_x_cell2) PP_FIELD(sigma_x_unit2) PP_FIELD(sigma_x_wave2)
  PP_FIELD(instrument_strength) PP_FIELD(sigma_instrument_noise2) PP_FIELD(outlier_share)
  PP_FIELD(outlier_scale) PP_FIELD(cell_size_variation) PP_FIELD(seed)
#undef PP_FIELD
  return false;
}

json dgp_json(const DgpConfig& c) {
  json j;
  j["n_units"] = c.n_units;
  j["T"] = c.T;
  j["n_cells"] = c.n_cells;
  j["intercept"] = c.intercept;
  j["beta"] = c.beta;
  j["c"] = c.c;
  j["delta_endog"] = c.delta_endog;
  j["sigma_mu2"] = c.sigma_mu2;
  j["sigma_upsilon2"] = c.sigma_upsilon2;
  j["sigma_eps2"] = c.sigma_eps2;
  j["reliability"] = c.reliability;
  j["x0"] = c.x0;
  j["sigma_x_cell2"] = c.sigma_x_cell2;
  j["sigma_x_unit2"] = c.sigma_x_unit2;
  j["sigma_x_wave2"] = c.sigma_x_wave2;
  j["instrument_strength"] = c.instrument_strength;
  j["sigma_instrument_noise2"] = c.sigma_instrument_noise2;
  j["outlier_share"] = c.outlier_share;
  j["outlier_scale"] = c.outlier_scale;
  j["cell_size_variation"] = c.cell_size_variation;
  j["seed"] = c.seed;
  return j;
}

}  // namespace

void DgpConfig::check() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (n_units < 1 || T < 1 || n_cells < 1) bad("n_units, T and n_cells must be positive");
  if (n_units % n_cells != 0) bad("n_units must be divisible by n_cells (balanced cells)");
  if (!(reliability > 0.0 && reliability <= 1.0)) bad("reliability must lie in (0, 1]");
  for (double v : {sigma_mu2, sigma_upsilon2, sigma_eps2, sigma_x_cell2, sigma_x_unit2, sigma_x_wave2,
                   sigma_instrument_noise2})
    if (!(v >= 0.0)) bad("variances must be non-negative");
  if (!(outlier_share >= 0.0 && outlier_share <= 1.0)) bad("outlier_share must lie in [0, 1]");
  if (!(cell_size_variation >= 0.0 && cell_size_variation < 1.0)) bad("cell_size_variation must lie in [0, 1)");
}

DgpConfig DgpConfig::from_json_text(const std::string& text) {
  DgpConfig c;
  read_fields(text, "DGP config", [&](const std::string& k, const nlohmann::json& v) { return read_dgp_field(c, k, v); });
  c.check();
  return c;
}

std::string DgpConfig::to_json_text() const { return dgp_json(*this).dump(2); }

PanelTable generate(const DgpConfig& config) { return generate(config, 0); }

PanelTable generate(const DgpConfig& config, std::uint64_t rep) {
  config.check();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
  std::mt19937_64 gen(seq);
  std::normal_distribution<double> std_normal;
  std::uniform_real_distribution<double> uniform;
  auto normal = [&](double var) { return std::sqrt(var) * std_normal(gen); };

  const int H = config.n_cells;
  const int T = config.T;
  const double var_m = (1.0 - config.reliability) / config.reliability * config.var_x();

  std::vector<double> x_cell(static_cast<std::size_t>(H)), mu(static_cast<std::size_t>(H));
  std::vector<std::vector<double>> missing(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(T)));
  for (int c = 0; c < H; ++c) {
    x_cell[static_cast<std::size_t>(c)] = normal(config.sigma_x_cell2);
    mu[static_cast<std::size_t>(c)] = normal(config.sigma_mu2);
    for (int t = 0; t < T; ++t) missing[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] =
        config.cell_size_variation * uniform(gen);
  }

  std::vector<std::string> units, keys;
  std::vector<int> waves;
  std::vector<double> y, x, x2, z, outlay, cell, x_true, alpha, m;
  const int uw = digits_of(config.n_units);
  const int cw = digits_of(H);
  std::vector<double> xt(static_cast<std::size_t>(T)), g(static_cast<std::size_t>(T)), nu(static_cast<std::size_t>(T)),
      me(static_cast<std::size_t>(T)), eps(static_cast<std::size_t>(T));
  std::vector<bool> present(static_cast<std::size_t>(T));
  for (int h = 0; h < config.n_units; ++h) {
    const auto c = static_cast<std::size_t>(h % H);
    const double u = normal(config.sigma_x_unit2);
    const double eta = normal(config.sigma_upsilon2);
    double xbar = 0.0;
    for (int t = 0; t < T; ++t) {
      const auto s = static_cast<std::size_t>(t);
      g[s] = normal(config.sigma_x_wave2);
      nu[s] = normal(config.sigma_instrument_noise2);
      me[s] = normal(var_m);
      eps[s] = normal(config.sigma_eps2);
      if (uniform(gen) < config.outlier_share) eps[s] *= config.outlier_scale;
      present[s] = uniform(gen) >= missing[c][s];
      xt[s] = config.x0 + x_cell[c] + u + g[s];
      xbar += xt[s];
    }
    xbar /= T;
    const double a = config.delta_endog * (xbar - config.x0) + mu[c] + eta;
    for (int t = 0; t < T; ++t) {
      const auto s = static_cast<std::size_t>(t);
      if (!present[s]) continue;
      const double xs = xt[s] + me[s];
      units.push_back(padded('h', h, uw));
      waves.push_back(t + 1);
      keys.push_back(padded('c', static_cast<int>(c), cw));
      y.push_back(config.intercept + config.beta * xt[s] + config.c * xt[s] * xt[s] + a + eps[s]);
      x.push_back(xs);
      x2.push_back(xs * xs);
      z.push_back(config.instrument_strength * g[s] + nu[s]);
      outlay.push_back(std::exp(xs));
      cell.push_back(static_cast<double>(c));
      x_true.push_back(xt[s]);
      alpha.push_back(a);
      m.push_back(me[s]);
    }
  }
  namespace col = dgp_columns;
  PanelTable out(std::move(units), std::move(waves));
  out.add_column(col::y, std::move(y));
  out.add_column(col::x, std::move(x), VariableRole::log_outlay);
  out.add_column(col::x2, std::move(x2), VariableRole::regressor);
  out.add_column(col::z, std::move(z), VariableRole::instrument);
  out.add_column(col::outlay, std::move(outlay));
  out.add_column(col::cell, std::move(cell));
  out.add_column(col::x_true, std::move(x_true));
  out.add_column(col::alpha, std::move(alpha));
  out.add_column(col::m, std::move(m));
  out.add_text_column(kCohortColumn, std::move(keys), VariableRole::cohort_key);
  return out;
}

PanelTable group_generated(const PanelTable& table, Weighting weighting) {
  AggregateOptions o;
  o.weighting = weighting;
  o.outlay_column = dgp_columns::outlay;
  o.min_cell_size = 1;
  return aggregate(table, o).to_table();
}

void StudyConfig::check() const {
  dgp.check();
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (reps < 1) bad("reps must be at least 1");
  if (levels.empty() || estimators.empty() || corrections.empty() || iv.empty())
    bad("levels, estimators, corrections and iv must be non-empty");
  for (const auto& l : levels)
    if (l != "individual" && l != "pseudo") bad("unknown level '" + l + "' (individual|pseudo)");
  for (const auto& e : estimators)
    if (!is_estimator_name(e)) bad("unknown estimator '" + e + "'");
  if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha must lie in (0, 1)");
}

StudyConfig StudyConfig::from_json_text(const std::string& text) {
  StudyConfig c;
  read_fields(text, "study config", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "dgp") {
      c.dgp = DgpConfig::from_json_text(v.dump());
    } else if (k == "reps") {
      v.get_to(c.reps);
    } else if (k == "levels") {
      v.get_to(c.levels);
    } else if (k == "estimators") {
      v.get_to(c.estimators);
    } else if (k == "corrections") {
      c.corrections.clear();
      for (const auto& s : v) c.corrections.push_back(parse_correction(s.get<std::string>()));
    } else if (k == "iv") {
      c.iv.clear();
      for (const auto& b : v) c.iv.push_back(b.get<bool>());
    } else if (k == "wave_dummies") {
      v.get_to(c.wave_dummies);
    } else if (k == "quadratic") {
      v.get_to(c.quadratic);
    } else if (k == "alpha") {
      v.get_to(c.alpha);
    } else if (k == "hausman") {
      v.get_to(c.hausman);
    } else {
      return read_dgp_field(c.dgp, k, v);  // DGP keys may sit at the top level
    }
    return true;
  });
  c.check();
  return c;
}

std::string StudyConfig::to_json_text() const {
  json j;
  j["dgp"] = dgp_json(dgp);
  j["reps"] = reps;
  j["levels"] = levels;
  j["estimators"] = estimators;
  std::vector<std::string> corr;
  for (auto c : corrections) corr.emplace_back(to_string(c));
  j["corrections"] = corr;
  j["iv"] = iv;
  j["wave_dummies"] = wave_dummies;
  j["quadratic"] = quadratic;
  j["alpha"] = alpha;
  j["hausman"] = hausman;
  return j.dump(2);
}

ModelSpec study_spec(const StudyConfig& config) {
  ModelSpec s;
  s.dependent = dgp_columns::y;
  s.regressors = {dgp_columns::x};
  if (config.quadratic) s.regressors.push_back(dgp_columns::x2);
  if (config.wave_dummies) s.dummy_groups = {kWaveDummies};
  return s;
}

const McRow& McReport::row(const std::string& level, const std::string& estimator, const std::string& correction,
                           bool iv) const {
  for (const auto& r : rows)
    if (r.level == level && r.estimator == estimator && r.correction == correction && r.iv == iv) return r;
  throw Error(ErrorCode::ConfigInvalid, "no report row " + level + "/" + estimator + "/" + correction +
                                            (iv ? "/iv" : ""));
}

namespace {

std::string csv_number(double v) { return std::isnan(v) ? "" : format_number(v, 12); }

}  // namespace

std::string McReport::to_csv() const {
  std::ostringstream out;
  out << "level,estimator,correction,iv,reps,n_ok,n_failed,mean,bias,rmse,mc_se,mean_se,rejection_rate\n";
  for (const auto& r : rows) {
    out << r.level << ',' << r.estimator << ',' << r.correction << ',' << (r.iv ? 1 : 0) << ',' << config.reps
        << ',' << r.n_ok << ',' << r.n_failed << ',' << csv_number(r.mean) << ',' << csv_number(r.bias) << ','
        << csv_number(r.rmse) << ',' << csv_number(r.mc_se) << ',' << csv_number(r.mean_se) << ','
        << csv_number(r.rejection_rate) << '\n';
  }
  return out.str();
}

std::string McReport::to_json() const {
  json j;
  j["config"] = json::parse(config.to_json_text());
  j["seed"] = config.dgp.seed;
  j["reps"] = config.reps;
  json rows_j = json::array();
  auto num = [](double v) -> json { return std::isnan(v) ? json(nullptr) : json(round12(v)); };
  for (const auto& r : rows) {
    json o;
    o["level"] = r.level;
    o["estimator"] = r.estimator;
    o["correction"] = r.correction;
    o["iv"] = r.iv;
    o["n_ok"] = r.n_ok;
    o["n_failed"] = r.n_failed;
    o["mean"] = num(r.mean);
    o["bias"] = num(r.bias);
    o["rmse"] = num(r.rmse);
    o["mc_se"] = num(r.mc_se);
    o["mean_se"] = num(r.mean_se);
    o["rejection_rate"] = num(r.rejection_rate);
    o["failed_reps"] = r.failed_reps;
    rows_j.push_back(o);
  }
  j["rows"] = rows_j;
  return j.dump(2);
}

McReport run_study(const StudyConfig& config) {
  config.check();
  const ModelSpec spec = study_spec(config);
  InstrumentSet instruments{dgp_columns::x, {dgp_columns::z}};
  IvOptions iv_options;
  if (config.quadratic) iv_options.square = dgp_columns::x2;
  const double critical = boost::math::quantile(boost::math::normal(), 1.0 - config.alpha / 2.0);

  struct Cell {
    std::size_t level;
    std::string estimator;
    CorrectionKind correction;
    bool iv;
    std::vector<double> se;
    int rejections = 0;
  };
  McReport report;
  report.config = config;
  std::vector<Cell> cells;
  for (std::size_t l = 0; l < config.levels.size(); ++l)
    for (const auto& e : config.estimators)
      for (auto c : config.corrections) {
        if (c != CorrectionKind::none_c && (config.levels[l] == "individual" || e == "ols")) continue;
        if (c == CorrectionKind::exact_b && e == "cs") continue;
        for (bool iv : config.iv) {
          cells.push_back({l, e, c, iv, {}, 0});
          McRow row;
          row.level = config.levels[l];
          row.estimator = e;
          row.correction = std::string(to_string(c));
          row.iv = iv;
          report.rows.push_back(row);
        }
      }
  const bool want_hausman = config.hausman &&
                            std::count(config.estimators.begin(), config.estimators.end(), "between") &&
                            std::count(config.estimators.begin(), config.estimators.end(), "within") &&
                            std::count(config.corrections.begin(), config.corrections.end(), CorrectionKind::none_c) &&
                            std::count(config.iv.begin(), config.iv.end(), false);
  std::vector<McRow> hausman_rows;
  std::vector<int> hausman_reject(config.levels.size(), 0);
  if (want_hausman)
    for (const auto& l : config.levels) {
      McRow h;
      h.level = l;
      h.estimator = "hausman_bw";
      h.correction = "none";
      hausman_rows.push_back(h);
    }

  for (int rep = 0; rep < config.reps; ++rep) {
    const PanelTable individual = generate(config.dgp, static_cast<std::uint64_t>(rep));
    for (std::size_t l = 0; l < config.levels.size(); ++l) {
      std::optional<PanelTable> grouped;
      std::optional<FitResult> between, within;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        auto& cell = cells[i];
        if (cell.level != l) continue;
        auto& row = report.rows[i];
        try {
          if (config.levels[l] == "pseudo" && !grouped) grouped = group_generated(individual);
          const PanelTable& data = config.levels[l] == "pseudo" ? *grouped : individual;
          PanelOptions o;
          o.correction = cell.correction;
          const FitResult fit =
              estimate_by_name(cell.estimator, spec, data, o,
                               cell.iv ? std::optional<InstrumentSet>(instruments) : std::nullopt, iv_options);
          const double b = fit.coefficient(dgp_columns::x);
          const double se = fit.std_error(dgp_columns::x);
          if (!std::isfinite(b)) throw Error(ErrorCode::NotIdentified, "non-finite estimate");
          row.estimates.push_back(b);
          cell.se.push_back(se);
          if (std::abs(b - config.dgp.beta) / se > critical) ++cell.rejections;
          if (!cell.iv && cell.correction == CorrectionKind::none_c) {
            if (cell.estimator == "between") between = fit;
            if (cell.estimator == "within") within = fit;
          }
        } catch (const Error&) {
          row.failed_reps.push_back(rep);
        }
      }
      if (want_hausman) {
        auto& h = hausman_rows[l];
        if (between && within) {
          try {
            const HausmanResult t = hausman(*between, *within, {dgp_columns::x});
            h.estimates.push_back(t.statistic);
            if (t.p_value < config.alpha) ++hausman_reject[l];
          } catch (const Error&) {
            h.failed_reps.push_back(rep);
          }
        } else {
          h.failed_reps.push_back(rep);
        }
      }
    }
  }

  auto summarize = [&](McRow& row, const std::vector<double>* se, int rejections, bool estimate_row) {
    row.n_ok = static_cast<int>(row.estimates.size());
    row.n_failed = static_cast<int>(row.failed_reps.size());
    if (row.n_ok == 0) {
      row.mean = row.bias = row.rmse = row.mc_se = row.mean_se = row.rejection_rate = kNaN;
      return;
    }
    const double n = row.n_ok;
    double sum = 0.0;
    for (double v : row.estimates) sum += v;
    row.mean = sum / n;
    double ss = 0.0, sq = 0.0;
    for (double v : row.estimates) {
      ss += (v - row.mean) * (v - row.mean);
      sq += (v - config.dgp.beta) * (v - config.dgp.beta);
    }
    row.mc_se = row.n_ok > 1 ? std::sqrt(ss / (n - 1.0) / n) : kNaN;
    if (estimate_row) {
      row.bias = row.mean - config.dgp.beta;
      row.rmse = std::sqrt(sq / n);
      double s = 0.0;
      for (double v : *se) s += v;
      row.mean_se = s / n;
    } else {
      row.bias = row.rmse = row.mean_se = kNaN;
    }
    row.rejection_rate = rejections / n;
  };
  for (std::size_t i = 0; i < cells.size(); ++i)
    summarize(report.rows[i], &cells[i].se, cells[i].rejections, true);
  for (std::size_t l = 0; l < hausman_rows.size(); ++l) {
    summarize(hausman_rows[l], nullptr, hausman_reject[l], false);
    report.rows.push_back(hausman_rows[l]);
  }
  return report;
}

}  // namespace ppanel
