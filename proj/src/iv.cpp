#include "ppanel/iv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "ppanel/error.hpp"

namespace ppanel {

namespace {

const std::string kHatPrefix = "__iv_hat_";
const std::string kSquarePrefix = "__iv_sq_";

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void validate(const ModelSpec& spec, const InstrumentSet& set, const IvOptions& iv) {
  if (set.columns.empty()) throw Error(ErrorCode::ConfigInvalid, "instrumental variables need --instruments");
  if (set.target.empty()) throw Error(ErrorCode::ConfigInvalid, "no endogenous target named");
  if (!contains(spec.regressors, set.target))
    throw Error(ErrorCode::ConfigInvalid, "endogenous target '" + set.target + "' is not a regressor");
  if (contains(set.columns, spec.dependent))
    throw Error(ErrorCode::ConfigInvalid, "the dependent variable cannot be an instrument");
  if (iv.square) {
    if (!contains(spec.regressors, *iv.square))
      throw Error(ErrorCode::ConfigInvalid, "squared term '" + *iv.square + "' is not a regressor");
    if (contains(set.columns, *iv.square))
      throw Error(ErrorCode::ConfigInvalid, "the squared term cannot be an instrument");
  }
}

/// Included exogenous part of the model: every regressor except the endogenous terms.
ModelSpec exogenous_part(const ModelSpec& spec, const InstrumentSet& set, const IvOptions& iv) {
  ModelSpec exo = spec;
  exo.weight.reset();
  exo.regressors.clear();
  for (const auto& r : spec.regressors)
    if (r != set.target && (!iv.square || r != *iv.square)) exo.regressors.push_back(r);
  return exo;
}

/// Rows where the model and every instrument are observed.
std::vector<std::size_t> common_rows(const ModelSpec& spec, const InstrumentSet& set, const PanelTable& table) {
  ModelSpec all = spec;
  for (const auto& c : set.columns) all.regressors.push_back(c);
  return build_design(all, table).rows;
}

ModelSpec replace_regressor(ModelSpec spec, const std::string& from, const std::string& to) {
  std::replace(spec.regressors.begin(), spec.regressors.end(), from, to);
  return spec;
}

void rename(std::vector<std::string>& names, const std::string& from, const std::string& to) {
  std::replace(names.begin(), names.end(), from, to);
}

/// Instruments plus their squares for a separately instrumented square.
InstrumentSet square_instruments(const InstrumentSet& set, const IvOptions& iv, PanelTable& table) {
  InstrumentSet out{*iv.square, set.columns};
  for (const auto& c : set.columns) {
    std::vector<double> sq = table.column(c);
    for (auto& v : sq) v *= v;
    const std::string name = kSquarePrefix + c;
    table = table.with_column(name, std::move(sq));
    out.columns.push_back(name);
  }
  return out;
}

void record_first_stage(FitResult& fit, const std::string& prefix, double f, bool weak, bool degenerate) {
  fit.extras[prefix + "_f"] = f;
  if (degenerate) fit.notes.push_back(prefix + ": perfect fit, F infinite (degenerate instruments)");
  if (weak) {
    fit.extras["weak_instruments"] = 1.0;
    fit.notes.push_back(prefix + ": weak instruments, F = " + format_number(f, 6) +
                        " below the conventional 10");
  }
}

}  // namespace

FirstStage first_stage(const InstrumentSet& set, const ModelSpec& exogenous, const PanelTable& table) {
  std::vector<std::string> excluded;
  for (const auto& c : set.columns)
    if (!contains(exogenous.regressors, c) && !contains(excluded, c)) excluded.push_back(c);
  if (excluded.empty())
    throw Error(ErrorCode::NotIdentified, "no excluded instruments for '" + set.target + "'");

  ModelSpec full = exogenous;
  full.dependent = set.target;
  full.weight.reset();
  full.regressors.insert(full.regressors.end(), excluded.begin(), excluded.end());
  const Design d = build_design(full, table);

  FirstStage out;
  out.fit = least_squares(d, {CovarianceKind::homoscedastic, 0, false, "first-stage"});
  out.fitted.assign(table.rows(), std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    out.fitted[d.rows[static_cast<std::size_t>(i)]] = d.y(i) - out.fit.residuals(i);

  ModelSpec restricted = full;
  restricted.regressors = exogenous.regressors;
  const PanelTable used = table.select_rows(d.rows);
  const Design dr = build_design(restricted, used);
  const double rss_r = dr.k() == 0 ? dr.y.squaredNorm()
                                   : least_squares(dr, {CovarianceKind::homoscedastic, 0, false, "restricted"})
                                         .residuals.squaredNorm();
  const double rss_u = out.fit.residuals.squaredNorm();
  out.df1 = static_cast<int>(excluded.size());
  out.df2 = out.fit.df;
  if (rss_u <= 1e-20 * std::max(rss_r, std::numeric_limits<double>::min())) {
    out.f_stat = std::numeric_limits<double>::infinity();
    out.degenerate = true;
  } else {
    out.f_stat = ((rss_r - rss_u) / out.df1) / (rss_u / static_cast<double>(out.df2));
  }
  out.weak = out.f_stat < kWeakInstrumentF;
  out.fit.extras["f_stat"] = out.f_stat;
  return out;
}

FitResult two_stage(const ModelSpec& spec, const PanelTable& table, const InstrumentSet& set,
                    const IvOptions& iv) {
  validate(spec, set, iv);
  const auto rows = common_rows(spec, set, table);
  PanelTable sub = table.select_rows(rows);
  const ModelSpec exo = exogenous_part(spec, set, iv);

  const FirstStage fs = first_stage(set, exo, sub);
  const std::string hat = kHatPrefix + set.target;
  ModelSpec second = replace_regressor(spec, set.target, hat);
  sub = sub.with_column(hat, fs.fitted);

  FirstStage fs_sq;
  std::string hat_sq;
  if (iv.square) {
    hat_sq = kHatPrefix + *iv.square;
    std::vector<double> values(sub.rows());
    if (iv.square_rule == SquareRule::fitted_square) {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = fs.fitted[i] * fs.fitted[i];
    } else {
      PanelTable aug = sub;
      const InstrumentSet sq = square_instruments(set, iv, aug);
      fs_sq = first_stage(sq, exo, aug);
      values = fs_sq.fitted;
    }
    sub = sub.with_column(hat_sq, std::move(values));
    second = replace_regressor(second, *iv.square, hat_sq);
  }

  const Design dhat = build_design(second, sub);
  const Design dorig = build_design(spec, sub);
  FitResult fit = least_squares(dhat, {CovarianceKind::homoscedastic, 0, true, "2sls"});
  // residuals with the original regressors; known_scale left cov = (X_hat'W X_hat)^-1
  const Eigen::VectorXd e = dorig.y - dorig.X * fit.coef;
  const Eigen::VectorXd w = dorig.weights.size() ? dorig.weights : Eigen::VectorXd::Ones(e.size());
  const double ssr = (w.array() * e.array().square()).sum();
  const double ybar = (w.array() * dorig.y.array()).sum() / w.sum();
  const double tss = (w.array() * (dorig.y.array() - ybar).square()).sum();
  fit.residuals = e;
  fit.sigma2 = ssr / static_cast<double>(fit.df);
  fit.cov *= fit.sigma2;
  fit.r2 = tss > 0.0 ? 1.0 - ssr / tss : 0.0;
  rename(fit.names, hat, set.target);
  if (iv.square) rename(fit.names, hat_sq, *iv.square);
  for (auto& r : fit.rows) r = rows[r];
  fit.n_excluded = table.rows() - static_cast<std::size_t>(fit.n_used);
  fit.means = variable_means(spec, table, fit.rows);
  record_first_stage(fit, "first_stage", fs.f_stat, fs.weak, fs.degenerate);
  if (iv.square && iv.square_rule == SquareRule::separate)
    record_first_stage(fit, "first_stage_square", fs_sq.f_stat, fs_sq.weak, fs_sq.degenerate);
  if (iv.square && iv.square_rule == SquareRule::fitted_square)
    fit.notes.push_back("squared term uses the square of the fitted target");
  return fit;
}

namespace {

/// HC1 covariance of a 2SLS fit: bread on the fitted design, residuals from the original one.
Eigen::MatrixXd white_iv_cov(const Eigen::MatrixXd& Xhat, const Eigen::VectorXd& e, const Eigen::VectorXd& w,
                             Eigen::Index df) {
  const Eigen::MatrixXd XtWX = Xhat.transpose() * w.asDiagonal() * Xhat;
  const Eigen::MatrixXd bread = XtWX.ldlt().solve(Eigen::MatrixXd::Identity(Xhat.cols(), Xhat.cols()));
  const Eigen::VectorXd s = (w.array() * e.array()).square().matrix();
  const Eigen::MatrixXd meat = Xhat.transpose() * s.asDiagonal() * Xhat;
  return bread * meat * bread * (static_cast<double>(Xhat.rows()) / static_cast<double>(df));
}

double difference_strength(const PanelTable& sub, const std::string& target, const std::string& hat) {
  ModelSpec s;
  s.dependent = target;
  s.regressors = {hat};
  PanelOptions o;
  o.fd_covariance = FdCovariance::cluster;
  try {
    TransformedDesign td = transform_panel(TransformKind::first_difference, s, sub, o);
    Design d = td.design;
    Eigen::MatrixXd X(d.n(), 2);
    X.col(0).setOnes();
    X.col(1) = d.X.col(0);
    d.X = X;
    d.names = {kIntercept, hat};
    const FitResult f = least_squares(d, {CovarianceKind::homoscedastic, 0, false, "difference-strength"});
    const double t = f.coef(1) / std::sqrt(f.cov(1, 1));
    return t * t;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NotIdentified || e.code() == ErrorCode::RankDeficient) return 0.0;
    throw;
  }
}

}  // namespace

FitResult panel_iv_fit(TransformKind kind, const ModelSpec& spec, const PanelTable& table,
                       const InstrumentSet& set, const IvOptions& iv, const PanelOptions& options) {
  validate(spec, set, iv);
  if (options.correction == CorrectionKind::exact_b && options.within_path == WithinPath::lsdv &&
      kind == TransformKind::within)
    throw Error(ErrorCode::ConfigInvalid, "instrumented within estimates use the delta-matrix path");
  const auto rows = common_rows(spec, set, table);
  PanelTable sub = table.select_rows(rows);
  ModelSpec exo = exogenous_part(spec, set, iv);
  exo.dummy_groups.erase(std::remove(exo.dummy_groups.begin(), exo.dummy_groups.end(), kWaveDummies),
                         exo.dummy_groups.end());

  // level first stages, one per wave
  const std::string hat = kHatPrefix + set.target;
  const std::string hat_sq = iv.square ? kHatPrefix + *iv.square : std::string();
  std::vector<double> fitted(sub.rows(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> fitted_sq = fitted;
  double min_f = std::numeric_limits<double>::infinity();
  double min_f_sq = min_f;
  bool degenerate = true;
  for (int w : sub.distinct_waves()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < sub.rows(); ++i)
      if (sub.waves()[i] == w) idx.push_back(i);
    PanelTable wave = sub.select_rows(idx);
    const FirstStage fs = first_stage(set, exo, wave);
    min_f = std::min(min_f, fs.f_stat);
    degenerate = degenerate && fs.degenerate;
    for (std::size_t i = 0; i < idx.size(); ++i) fitted[idx[i]] = fs.fitted[i];
    if (iv.square && iv.square_rule == SquareRule::separate) {
      const InstrumentSet sq = square_instruments(set, iv, wave);
      const FirstStage f2 = first_stage(sq, exo, wave);
      min_f_sq = std::min(min_f_sq, f2.f_stat);
      for (std::size_t i = 0; i < idx.size(); ++i) fitted_sq[idx[i]] = f2.fitted[i];
    }
  }
  ModelSpec second = replace_regressor(spec, set.target, hat);
  PanelTable hatted = sub.with_column(hat, fitted);
  if (iv.square) {
    if (iv.square_rule == SquareRule::fitted_square)
      for (std::size_t i = 0; i < fitted.size(); ++i) fitted_sq[i] = fitted[i] * fitted[i];
    hatted = hatted.with_column(hat_sq, fitted_sq);
    second = replace_regressor(second, *iv.square, hat_sq);
  }

  const TransformedDesign td_hat = transform_panel(kind, second, hatted, options);
  const TransformedDesign td_orig = transform_panel(kind, spec, sub, options);
  FitResult fit;
  if (kind == TransformKind::cross_section) {
    CrossSectionResult cs = fit_cross_sections(td_hat);
    std::vector<Eigen::Index> start(1, 0);
    for (std::size_t p = 0; p < cs.per_wave.size(); ++p) {
      auto& f = cs.per_wave[p];
      std::vector<Eigen::Index> idx;
      for (std::size_t i = 0; i < td_orig.period.size(); ++i)
        if (td_orig.period[i] == static_cast<int>(p)) idx.push_back(static_cast<Eigen::Index>(i));
      Eigen::MatrixXd Xo(static_cast<Eigen::Index>(idx.size()), td_orig.design.k());
      Eigen::MatrixXd Xh(Xo.rows(), Xo.cols());
      Eigen::VectorXd yo(Xo.rows());
      Eigen::VectorXd w = Eigen::VectorXd::Ones(Xo.rows());
      for (Eigen::Index i = 0; i < Xo.rows(); ++i) {
        const auto src = idx[static_cast<std::size_t>(i)];
        Xo.row(i) = td_orig.design.X.row(src);
        Xh.row(i) = td_hat.design.X.row(src);
        yo(i) = td_orig.design.y(src);
        if (td_orig.design.weights.size()) w(i) = td_orig.design.weights(src);
      }
      const Eigen::VectorXd e = yo - Xo * f.coef;
      f.cov = white_iv_cov(Xh, e, w, f.df);
      f.residuals = e;
      f.sigma2 = (w.array() * e.array().square()).sum() / static_cast<double>(f.df);
    }
    const double W = static_cast<double>(cs.per_wave.size());
    fit = cs.pooled;
    fit.cov.setZero();
    for (const auto& f : cs.per_wave) fit.cov += f.cov;
    fit.cov /= W * W;
  } else {
    fit = fit_transformed(td_hat, options);
    const Eigen::VectorXd& w = td_hat.design.weights;
    auto ssr = [&](const Design& d) {
      const Eigen::VectorXd e = d.y - d.X * fit.coef;
      return w.size() ? (w.array() * e.array().square()).sum() : e.squaredNorm();
    };
    const double s_hat = ssr(td_hat.design);
    const double s_orig = ssr(td_orig.design);
    const double scale = s_hat > 0.0 ? s_orig / s_hat : 1.0;
    fit.cov *= scale;
    fit.sigma2 *= scale;
    fit.extras["iv_variance_scale"] = scale;
  }
  rename(fit.names, hat, set.target);
  if (iv.square) rename(fit.names, hat_sq, *iv.square);
  fit.method = td_hat.method + "-iv";
  for (auto& r : fit.rows) r = rows[r];
  fit.n_excluded = table.rows() - rows.size() + td_hat.design.n_excluded;
  std::vector<std::size_t> all(sub.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  fit.means = variable_means(spec, sub, all);
  record_first_stage(fit, "first_stage_min", min_f, min_f < kWeakInstrumentF, degenerate);
  if (iv.square && iv.square_rule == SquareRule::separate)
    record_first_stage(fit, "first_stage_square_min", min_f_sq, min_f_sq < kWeakInstrumentF, false);
  if (kind == TransformKind::first_difference) {
    const double fd = difference_strength(hatted, set.target, hat);
    record_first_stage(fit, "first_stage_diff", fd, fd < kWeakInstrumentF, false);
  }
  return fit;
}

FitResult fd_instrument(const ModelSpec& spec, const PanelTable& table, const InstrumentSet& set,
                        const IvOptions& iv, const PanelOptions& options) {
  if (table.distinct_waves().size() < 2)
    throw Error(ErrorCode::NotIdentified, "first differences need at least two waves");
  return panel_iv_fit(TransformKind::first_difference, spec, table, set, iv, options);
}

}  // namespace ppanel

namespace ppanel {

bool is_estimator_name(const std::string& name) {
  return name == "ols" || name == "between" || name == "within" || name == "fd" || name == "cs";
}

FitResult estimate_by_name(const std::string& estimator, const ModelSpec& spec, const PanelTable& table,
                           const PanelOptions& options, const std::optional<InstrumentSet>& instruments,
                           const IvOptions& iv) {
  if (estimator == "ols") {
    if (options.correction != CorrectionKind::none_c)
      throw Error(ErrorCode::ConfigInvalid, "pooled least squares takes no aggregation correction");
    if (instruments) return two_stage(spec, table, *instruments, iv);
    return ols(spec, table, options.covariance);
  }
  const TransformKind kind = parse_transform(estimator);
  if (instruments) return panel_iv_fit(kind, spec, table, *instruments, iv, options);
  return panel_fit(kind, spec, table, options);
}

}  // namespace ppanel
