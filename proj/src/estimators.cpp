#include "ppanel/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ppanel/error.hpp"

namespace ppanel {

namespace {

struct PanelIndex {
  Design d;
  std::vector<int> unit;    // per design row
  std::vector<int> period;  // per design row
  int n_units = 0;
  int n_periods = 0;
  std::vector<std::vector<Eigen::Index>> rows_of_unit;  // ordered by period
  std::vector<int> waves;
  Eigen::VectorXd delta;  // per design row, empty unless requested
};

bool needs_delta(CorrectionKind c) { return c != CorrectionKind::none_c; }

ModelSpec without_wave_dummies(const ModelSpec& spec) {
  ModelSpec s = spec;
  s.weight.reset();
  s.dummy_groups.erase(std::remove(s.dummy_groups.begin(), s.dummy_groups.end(), kWaveDummies),
                       s.dummy_groups.end());
  return s;
}

Eigen::VectorXd delta_for_rows(const PanelTable& table, const std::string& column,
                               const std::vector<std::size_t>& rows) {
  if (!table.has_column(column))
    throw Error(ErrorCode::ConfigInvalid,
                "correction needs the heteroscedasticity factor column '" + column + "' (pseudo-panel input)");
  const auto& v = table.column(column);
  Eigen::VectorXd d(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d(static_cast<Eigen::Index>(i)) = v[rows[i]];
    if (!(v[rows[i]] > 0.0) || !std::isfinite(v[rows[i]]))
      throw Error(ErrorCode::ConfigInvalid, "heteroscedasticity factor must be positive (row " +
                                                std::to_string(rows[i] + 1) + ")");
  }
  return d;
}

PanelIndex index_panel(const ModelSpec& spec, const PanelTable& table, bool need_delta,
                       const std::string& delta_column) {
  ModelSpec s = spec;
  s.weight.reset();
  PanelIndex p;
  p.d = build_design(s, table);
  std::set<int> waves;
  std::set<std::string> units;
  for (auto r : p.d.rows) {
    waves.insert(table.waves()[r]);
    units.insert(table.unit_ids()[r]);
  }
  p.waves.assign(waves.begin(), waves.end());
  p.n_periods = static_cast<int>(waves.size());
  p.n_units = static_cast<int>(units.size());
  std::map<int, int> period_of;
  for (std::size_t i = 0; i < p.waves.size(); ++i) period_of[p.waves[i]] = static_cast<int>(i);
  std::map<std::string, int> unit_of;
  for (const auto& u : units) unit_of.emplace(u, static_cast<int>(unit_of.size()));
  p.rows_of_unit.assign(static_cast<std::size_t>(p.n_units),
                        std::vector<Eigen::Index>(static_cast<std::size_t>(p.n_periods), -1));
  for (Eigen::Index i = 0; i < p.d.n(); ++i) {
    const auto r = p.d.rows[static_cast<std::size_t>(i)];
    const int u = unit_of.at(table.unit_ids()[r]);
    const int t = period_of.at(table.waves()[r]);
    auto& slot = p.rows_of_unit[static_cast<std::size_t>(u)][static_cast<std::size_t>(t)];
    if (slot >= 0)
      throw Error(ErrorCode::DuplicateUnitWave,
                  "unit " + table.unit_ids()[r] + " wave " + std::to_string(table.waves()[r]));
    slot = i;
    p.unit.push_back(u);
    p.period.push_back(t);
  }
  for (std::size_t u = 0; u < p.rows_of_unit.size(); ++u)
    for (std::size_t t = 0; t < p.rows_of_unit[u].size(); ++t)
      if (p.rows_of_unit[u][t] < 0) {
        auto it = std::next(units.begin(), static_cast<long>(u));
        throw Error(ErrorCode::NotBalanced, "unit " + *it + " has no usable row in wave " +
                                                std::to_string(p.waves[t]) + "; balance the panel first");
      }
  p.d.groups = p.unit;
  if (need_delta) p.delta = delta_for_rows(table, delta_column, p.d.rows);
  return p;
}

void drop_column(Design& d, const std::string& name) {
  auto it = std::find(d.names.begin(), d.names.end(), name);
  if (it == d.names.end()) return;
  const auto j = static_cast<Eigen::Index>(it - d.names.begin());
  Eigen::MatrixXd X(d.X.rows(), d.X.cols() - 1);
  X << d.X.leftCols(j), d.X.rightCols(d.X.cols() - j - 1);
  d.X = std::move(X);
  d.names.erase(it);
}

void scale_rows(Design& d, const Eigen::VectorXd& s) {
  d.X = d.X.array().colwise() * s.array();
  d.y = d.y.cwiseProduct(s);
}

Eigen::VectorXd unit_mean_delta(const PanelIndex& p) {
  Eigen::VectorXd out(p.d.n());
  for (const auto& rows : p.rows_of_unit) {
    double s = 0.0;
    for (auto i : rows) s += p.delta(i);
    s /= static_cast<double>(rows.size());
    for (auto i : rows) out(i) = s;
  }
  return out;
}

/// Subtracts per-unit (weighted) means from X and y.
void demean(Design& d, const PanelIndex& p, const Eigen::VectorXd* weights) {
  for (const auto& rows : p.rows_of_unit) {
    double wsum = 0.0;
    Eigen::RowVectorXd xbar = Eigen::RowVectorXd::Zero(d.X.cols());
    double ybar = 0.0;
    for (auto i : rows) {
      const double w = weights ? (*weights)(i) : 1.0;
      wsum += w;
      xbar += w * d.X.row(i);
      ybar += w * d.y(i);
    }
    xbar /= wsum;
    ybar /= wsum;
    for (auto i : rows) {
      d.X.row(i) -= xbar;
      d.y(i) -= ybar;
    }
  }
}

void require_identified(const Eigen::MatrixXd& X, const Eigen::MatrixXd& reference, const char* what) {
  if (X.cols() == 0) throw Error(ErrorCode::NotIdentified, std::string("no regressors left after ") + what);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double scale = std::max(1.0, reference.col(j).cwiseAbs().maxCoeff());
    if (X.col(j).cwiseAbs().maxCoeff() > 1e-12 * scale) return;
  }
  throw Error(ErrorCode::NotIdentified, std::string("every regressor is eliminated by the ") + what);
}

std::string method_name(TransformKind kind, CorrectionKind c) {
  return std::string(to_string(kind)) + (c == CorrectionKind::none_c ? "" : "-" + std::string(to_string(c)));
}

VarianceComponents resolve_components(const ModelSpec& spec, const PanelTable& table, const PanelOptions& o) {
  if (o.components) return *o.components;
  return variance_components(spec, table, o.delta_column);
}

TransformedDesign between_transform(const ModelSpec& spec, const PanelTable& table, const PanelOptions& o) {
  const ModelSpec s = without_wave_dummies(spec);
  PanelIndex p = index_panel(s, table, needs_delta(o.correction), o.delta_column);
  if (o.correction == CorrectionKind::false_d) scale_rows(p.d, p.delta.cwiseSqrt().cwiseInverse());

  TransformedDesign td;
  td.kind = TransformKind::between;
  td.n_units = p.n_units;
  td.n_periods = 1;
  td.waves = p.waves;
  auto& out = td.design;
  out.names = p.d.names;
  out.n_excluded = p.d.n_excluded;
  out.X.resize(p.n_units, p.d.k());
  out.y.resize(p.n_units);
  const double T = p.n_periods;
  Eigen::VectorXd wc(p.n_units);
  for (int u = 0; u < p.n_units; ++u) {
    const auto& rows = p.rows_of_unit[static_cast<std::size_t>(u)];
    Eigen::RowVectorXd xbar = Eigen::RowVectorXd::Zero(p.d.k());
    double ybar = 0.0, dbar = 0.0;
    for (auto i : rows) {
      xbar += p.d.X.row(i);
      ybar += p.d.y(i);
      if (p.delta.size()) dbar += p.delta(i);
    }
    out.X.row(u) = xbar / T;
    out.y(u) = ybar / T;
    wc(u) = dbar / T;
    out.rows.push_back(p.d.rows[static_cast<std::size_t>(rows.front())]);
    out.groups.push_back(u);
    td.unit.push_back(u);
    td.period.push_back(0);
  }
  switch (o.correction) {
    case CorrectionKind::approx_a:
      out.weights = wc.cwiseInverse();
      break;
    case CorrectionKind::exact_b: {
      const auto vc = resolve_components(spec, table, o);
      if (!(vc.sigma_mu2 >= 0.0) || !(vc.sigma_eps2 >= 0.0) || vc.sigma_mu2 + vc.sigma_eps2 <= 0.0)
        throw Error(ErrorCode::ConfigInvalid, "exact between weights need positive variance components");
      out.weights = ((vc.sigma_mu2 + vc.sigma_eps2 * wc.array() / T).inverse()).matrix();
      break;
    }
    default:
      break;
  }
  td.method = method_name(TransformKind::between, o.correction);
  return td;
}

TransformedDesign within_transform(const ModelSpec& spec, const PanelTable& table, const PanelOptions& o) {
  PanelIndex p = index_panel(spec, table, needs_delta(o.correction), o.delta_column);
  drop_column(p.d, kIntercept);
  {
    Design check = p.d;
    demean(check, p, nullptr);
    require_identified(check.X, p.d.X, "within transform");
  }
  TransformedDesign td;
  td.kind = TransformKind::within;
  td.n_units = p.n_units;
  td.n_periods = p.n_periods;
  td.waves = p.waves;
  td.unit = p.unit;
  td.period = p.period;
  td.absorbed = p.n_units;

  switch (o.correction) {
    case CorrectionKind::none_c:
      demean(p.d, p, nullptr);
      break;
    case CorrectionKind::false_d:
      scale_rows(p.d, p.delta.cwiseSqrt().cwiseInverse());
      demean(p.d, p, nullptr);
      break;
    case CorrectionKind::approx_a:
      demean(p.d, p, nullptr);
      p.d.weights = unit_mean_delta(p).cwiseInverse();
      break;
    case CorrectionKind::exact_b:
      if (o.within_path == WithinPath::delta_matrix) {
        // Delta = D^-1/2 (I - P_w) D^-1/2 blockwise: weighted demeaning, then D^-1/2 scaling
        const Eigen::VectorXd inv = p.delta.cwiseInverse();
        demean(p.d, p, &inv);
        scale_rows(p.d, inv.cwiseSqrt());
      } else {
        if (o.within_mode == WithinMode::period_system)
          throw Error(ErrorCode::ConfigInvalid, "the dummy-variable within path has no period-system mode");
        const auto report = p.d.names;
        Eigen::MatrixXd X(p.d.n(), p.d.k() + p.n_units);
        X.leftCols(p.d.k()) = p.d.X;
        X.rightCols(p.n_units).setZero();
        for (Eigen::Index i = 0; i < p.d.n(); ++i) X(i, p.d.k() + p.unit[static_cast<std::size_t>(i)]) = 1.0;
        p.d.X = std::move(X);
        for (int u = 0; u < p.n_units; ++u) p.d.names.push_back("unit_" + std::to_string(u));
        p.d.weights = p.delta.cwiseInverse();
        td.report = report;
        td.absorbed = 0;
      }
      break;
  }
  td.design = std::move(p.d);
  if (o.within_mode == WithinMode::period_system) {
    td.fit = TransformedDesign::FitKind::period_system;
    td.drop_last_period = true;
  }
  td.method = method_name(TransformKind::within, o.correction) +
              (o.within_mode == WithinMode::period_system ? "-system" : "") +
              (o.correction == CorrectionKind::exact_b && o.within_path == WithinPath::lsdv ? "-lsdv" : "");
  return td;
}

TransformedDesign fd_transform(const ModelSpec& spec, const PanelTable& table, const PanelOptions& o) {
  PanelIndex p = index_panel(spec, table, needs_delta(o.correction), o.delta_column);
  if (p.n_periods < 2) throw Error(ErrorCode::NotIdentified, "first differences need at least two waves");
  drop_column(p.d, kIntercept);
  if (o.correction == CorrectionKind::false_d) scale_rows(p.d, p.delta.cwiseSqrt().cwiseInverse());

  const int P = p.n_periods - 1;
  TransformedDesign td;
  td.kind = TransformKind::first_difference;
  td.n_units = p.n_units;
  td.n_periods = P;
  td.waves = p.waves;
  auto& out = td.design;
  out.names = p.d.names;
  out.n_excluded = p.d.n_excluded;
  const Eigen::Index n = static_cast<Eigen::Index>(p.n_units) * P;
  out.X.resize(n, p.d.k());
  out.y.resize(n);
  Eigen::VectorXd dbar;
  if (o.correction == CorrectionKind::approx_a) dbar = unit_mean_delta(p);
  if (o.correction == CorrectionKind::approx_a) out.weights.resize(n);
  Eigen::Index row = 0;
  for (int u = 0; u < p.n_units; ++u) {
    const auto& rows = p.rows_of_unit[static_cast<std::size_t>(u)];
    for (int t = 1; t <= P; ++t, ++row) {
      const auto cur = rows[static_cast<std::size_t>(t)];
      const auto prev = rows[static_cast<std::size_t>(t - 1)];
      out.X.row(row) = p.d.X.row(cur) - p.d.X.row(prev);
      out.y(row) = p.d.y(cur) - p.d.y(prev);
      if (dbar.size()) out.weights(row) = 1.0 / dbar(cur);
      out.rows.push_back(p.d.rows[static_cast<std::size_t>(cur)]);
      out.groups.push_back(u);
      td.unit.push_back(u);
      td.period.push_back(t - 1);
    }
  }
  require_identified(out.X, p.d.X, "first-difference transform");

  if (o.correction == CorrectionKind::exact_b) {
    // MA(1) covariance of differenced cell errors: diag d_t + d_{t-1}, off-diagonal -d_t
    for (int u = 0; u < p.n_units; ++u) {
      const auto& rows = p.rows_of_unit[static_cast<std::size_t>(u)];
      Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(P, P);
      for (int j = 0; j < P; ++j) {
        omega(j, j) = p.delta(rows[static_cast<std::size_t>(j + 1)]) + p.delta(rows[static_cast<std::size_t>(j)]);
        if (j + 1 < P) omega(j, j + 1) = omega(j + 1, j) = -p.delta(rows[static_cast<std::size_t>(j + 1)]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(omega);
      const Eigen::Index start = static_cast<Eigen::Index>(u) * P;
      out.X.middleRows(start, P) = llt.matrixL().solve(out.X.middleRows(start, P));
      out.y.segment(start, P) = llt.matrixL().solve(out.y.segment(start, P));
    }
  } else if (o.fd_covariance == FdCovariance::sur) {
    td.fit = TransformedDesign::FitKind::period_system;
  }
  td.method = method_name(TransformKind::first_difference, o.correction) +
              (o.correction != CorrectionKind::exact_b && o.fd_covariance == FdCovariance::cluster ? "-cluster" : "");
  return td;
}

TransformedDesign cs_transform(const ModelSpec& spec, const PanelTable& table, const PanelOptions& o) {
  if (o.correction == CorrectionKind::exact_b)
    throw Error(ErrorCode::ConfigInvalid, "the exact correction is defined for between, within and first differences");
  const ModelSpec s = without_wave_dummies(spec);
  TransformedDesign td;
  td.kind = TransformKind::cross_section;
  td.fit = TransformedDesign::FitKind::per_period;
  td.design = build_design(s, table);
  std::set<int> waves;
  for (auto r : td.design.rows) waves.insert(table.waves()[r]);
  td.waves.assign(waves.begin(), waves.end());
  td.n_periods = static_cast<int>(td.waves.size());
  std::map<int, int> period_of;
  for (std::size_t i = 0; i < td.waves.size(); ++i) period_of[td.waves[i]] = static_cast<int>(i);
  for (auto r : td.design.rows) td.period.push_back(period_of.at(table.waves()[r]));
  td.unit = td.design.groups;
  if (needs_delta(o.correction)) {
    const Eigen::VectorXd delta = delta_for_rows(table, o.delta_column, td.design.rows);
    if (o.correction == CorrectionKind::false_d) {
      td.design.weights = delta.cwiseInverse();
    } else {
      std::map<int, std::pair<double, int>> acc;
      for (Eigen::Index i = 0; i < delta.size(); ++i) {
        auto& a = acc[td.unit[static_cast<std::size_t>(i)]];
        a.first += delta(i);
        a.second += 1;
      }
      td.design.weights.resize(delta.size());
      for (Eigen::Index i = 0; i < delta.size(); ++i) {
        const auto& a = acc[td.unit[static_cast<std::size_t>(i)]];
        td.design.weights(i) = a.second / a.first;
      }
    }
  }
  td.method = method_name(TransformKind::cross_section, o.correction);
  return td;
}

Design select_design_rows(const Design& d, const std::vector<Eigen::Index>& idx) {
  Design out;
  out.names = d.names;
  out.n_excluded = d.n_excluded;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.X.resize(n, d.k());
  out.y.resize(n);
  if (d.weights.size()) out.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = idx[static_cast<std::size_t>(i)];
    out.X.row(i) = d.X.row(src);
    out.y(i) = d.y(src);
    if (d.weights.size()) out.weights(i) = d.weights(src);
    out.rows.push_back(d.rows[static_cast<std::size_t>(src)]);
    if (!d.groups.empty()) out.groups.push_back(d.groups[static_cast<std::size_t>(src)]);
  }
  return out;
}

FitResult keep_coefficients(FitResult fit, const std::vector<std::string>& names) {
  if (names.empty() || names == fit.names) return fit;
  std::vector<Eigen::Index> idx;
  for (const auto& n : names) idx.push_back(fit.index_of(n));
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd coef(k);
  Eigen::MatrixXd cov(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    coef(a) = fit.coef(idx[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < k; ++b)
      cov(a, b) = fit.cov(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
  }
  fit.names = names;
  fit.coef = std::move(coef);
  fit.cov = std::move(cov);
  return fit;
}

FitResult fit_period_system(const TransformedDesign& td) {
  Design base = td.design;
  if (base.weights.size()) {
    scale_rows(base, base.weights.cwiseSqrt());
    base.weights.resize(0);
  }
  const int P = td.n_periods - (td.drop_last_period ? 1 : 0);
  if (P < 1) throw Error(ErrorCode::NotIdentified, "period system needs at least two waves");

  // per-unit rows ordered by period, restricted to the first P periods
  std::vector<std::vector<Eigen::Index>> blocks(static_cast<std::size_t>(td.n_units),
                                                std::vector<Eigen::Index>(static_cast<std::size_t>(P), -1));
  for (std::size_t i = 0; i < td.unit.size(); ++i)
    if (td.period[i] < P)
      blocks[static_cast<std::size_t>(td.unit[i])][static_cast<std::size_t>(td.period[i])] =
          static_cast<Eigen::Index>(i);
  std::vector<Eigen::Index> order;
  for (const auto& b : blocks) order.insert(order.end(), b.begin(), b.end());
  Design kept = select_design_rows(base, order);

  const FitResult first = least_squares(kept, {CovarianceKind::homoscedastic, td.absorbed, false, td.method});
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(P, P);
  for (int u = 0; u < td.n_units; ++u) {
    const Eigen::VectorXd e = first.residuals.segment(static_cast<Eigen::Index>(u) * P, P);
    sigma += e * e.transpose();
  }
  sigma /= static_cast<double>(td.n_units);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularSigma, "period residual covariance is singular");
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().maxCoeff() > 0.0) || es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff() < 1e-12)
      throw Error(ErrorCode::SingularSigma, "period residual covariance is singular");
  }
  Design whitened = kept;
  for (int u = 0; u < td.n_units; ++u) {
    const Eigen::Index start = static_cast<Eigen::Index>(u) * P;
    whitened.X.middleRows(start, P) = llt.matrixL().solve(kept.X.middleRows(start, P));
    whitened.y.segment(start, P) = llt.matrixL().solve(kept.y.segment(start, P));
  }
  FitResult fit = least_squares(whitened, {CovarianceKind::homoscedastic, td.absorbed, true, td.method});
  fit.residuals = kept.y - kept.X * fit.coef;
  fit.sigma2 = fit.residuals.squaredNorm() / static_cast<double>(fit.df);
  return fit;
}

}  // namespace

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::between: return "between";
    case TransformKind::within: return "within";
    case TransformKind::first_difference: return "fd";
    case TransformKind::cross_section: return "cs";
  }
  return "between";
}

std::string_view to_string(CorrectionKind kind) {
  switch (kind) {
    case CorrectionKind::approx_a: return "approx";
    case CorrectionKind::exact_b: return "exact";
    case CorrectionKind::none_c: return "none";
    case CorrectionKind::false_d: return "false";
  }
  return "none";
}

TransformKind parse_transform(std::string_view text) {
  if (text == "between") return TransformKind::between;
  if (text == "within") return TransformKind::within;
  if (text == "fd" || text == "first_difference") return TransformKind::first_difference;
  if (text == "cs" || text == "cross_section") return TransformKind::cross_section;
  throw Error(ErrorCode::ConfigInvalid, "unknown estimator '" + std::string(text) + "'");
}

CorrectionKind parse_correction(std::string_view text) {
  if (text == "approx" || text == "a") return CorrectionKind::approx_a;
  if (text == "exact" || text == "b") return CorrectionKind::exact_b;
  if (text == "none" || text == "c") return CorrectionKind::none_c;
  if (text == "false" || text == "d") return CorrectionKind::false_d;
  throw Error(ErrorCode::ConfigInvalid, "unknown correction '" + std::string(text) + "'");
}

WithinMode parse_within_mode(std::string_view text) {
  if (text == "demean") return WithinMode::demean;
  if (text == "system") return WithinMode::period_system;
  throw Error(ErrorCode::ConfigInvalid, "unknown within mode '" + std::string(text) + "'");
}

TransformedDesign transform_panel(TransformKind kind, const ModelSpec& spec, const PanelTable& table,
                                  const PanelOptions& options) {
  switch (kind) {
    case TransformKind::between: return between_transform(spec, table, options);
    case TransformKind::within: return within_transform(spec, table, options);
    case TransformKind::first_difference: return fd_transform(spec, table, options);
    case TransformKind::cross_section: return cs_transform(spec, table, options);
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown transform");
}

CrossSectionResult fit_cross_sections(const TransformedDesign& td) {
  CrossSectionResult out;
  out.waves = td.waves;
  for (int p = 0; p < td.n_periods; ++p) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < td.period.size(); ++i)
      if (td.period[i] == p) idx.push_back(static_cast<Eigen::Index>(i));
    Design d = select_design_rows(td.design, idx);
    out.per_wave.push_back(least_squares(d, {CovarianceKind::white, 0, false, td.method}));
  }
  const auto W = static_cast<double>(out.per_wave.size());
  if (out.per_wave.empty()) throw Error(ErrorCode::InsufficientData, "no waves to fit");
  FitResult pooled = out.per_wave.front();
  pooled.method = td.method + "-pooled";
  pooled.coef.setZero();
  pooled.cov.setZero();
  pooled.n_used = 0;
  pooled.df = 0;
  pooled.rows.clear();
  std::vector<double> resid;
  for (const auto& f : out.per_wave) {
    if (f.names != pooled.names)
      throw Error(ErrorCode::ConfigInvalid, "per-wave fits have different coefficient sets");
    pooled.coef += f.coef;
    pooled.cov += f.cov;
    pooled.n_used += f.n_used;
    pooled.df += f.df;
    pooled.rows.insert(pooled.rows.end(), f.rows.begin(), f.rows.end());
    resid.insert(resid.end(), f.residuals.data(), f.residuals.data() + f.residuals.size());
  }
  pooled.coef /= W;
  pooled.cov /= W * W;
  pooled.residuals = Eigen::Map<Eigen::VectorXd>(resid.data(), static_cast<Eigen::Index>(resid.size()));
  pooled.weights.resize(0);
  pooled.sigma2 = pooled.residuals.squaredNorm() / static_cast<double>(pooled.df);
  out.pooled = std::move(pooled);
  return out;
}

FitResult fit_transformed(const TransformedDesign& td, const PanelOptions& options) {
  FitResult fit;
  switch (td.fit) {
    case TransformedDesign::FitKind::least_squares: {
      CovarianceKind cov = options.covariance;
      if (td.kind == TransformKind::first_difference && options.fd_covariance == FdCovariance::cluster &&
          options.correction != CorrectionKind::exact_b)
        cov = CovarianceKind::cluster;
      fit = least_squares(td.design, {cov, td.absorbed, false, td.method});
      fit = keep_coefficients(std::move(fit), td.report);
      break;
    }
    case TransformedDesign::FitKind::period_system:
      fit = fit_period_system(td);
      break;
    case TransformedDesign::FitKind::per_period:
      fit = fit_cross_sections(td).pooled;
      break;
  }
  fit.n_excluded = td.design.n_excluded;
  return fit;
}

namespace {

FitResult with_means(FitResult fit, const ModelSpec& spec, const PanelTable& table) {
  ModelSpec s = spec;
  s.weight.reset();
  const Design d = build_design(without_wave_dummies(s), table);
  fit.means = variable_means(spec, table, d.rows);
  return fit;
}

}  // namespace

FitResult between_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options) {
  return with_means(fit_transformed(between_transform(spec, table, options), options), spec, table);
}

FitResult within_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options) {
  return with_means(fit_transformed(within_transform(spec, table, options), options), spec, table);
}

FitResult first_difference_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options) {
  return with_means(fit_transformed(fd_transform(spec, table, options), options), spec, table);
}

CrossSectionResult cross_section_fit(const ModelSpec& spec, const PanelTable& table, const PanelOptions& options) {
  CrossSectionResult r = fit_cross_sections(cs_transform(spec, table, options));
  r.pooled = with_means(std::move(r.pooled), spec, table);
  return r;
}

FitResult panel_fit(TransformKind kind, const ModelSpec& spec, const PanelTable& table,
                    const PanelOptions& options) {
  switch (kind) {
    case TransformKind::between: return between_fit(spec, table, options);
    case TransformKind::within: return within_fit(spec, table, options);
    case TransformKind::first_difference: return first_difference_fit(spec, table, options);
    case TransformKind::cross_section: return cross_section_fit(spec, table, options).pooled;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown estimator");
}

VarianceComponents variance_components(const ModelSpec& spec, const PanelTable& table,
                                       std::optional<std::string> delta_column) {
  PanelOptions wo;
  if (delta_column) {
    wo.correction = CorrectionKind::exact_b;
    wo.delta_column = *delta_column;
  }
  const FitResult w = within_fit(spec, table, wo);
  const FitResult b = between_fit(spec, table, PanelOptions{});
  PanelIndex p = index_panel(without_wave_dummies(spec), table, delta_column.has_value(),
                             delta_column.value_or("delta"));
  if (p.n_periods < 2) throw Error(ErrorCode::InsufficientData, "variance components need at least two waves");
  const double mean_wc = p.delta.size() ? p.delta.mean() : 1.0;
  VarianceComponents vc;
  vc.sigma_eps2 = w.sigma2;
  vc.sigma_mu2 = b.sigma2 - vc.sigma_eps2 * mean_wc / p.n_periods;
  if (vc.sigma_mu2 < 0.0) {
    vc.sigma_mu2 = 0.0;
    vc.truncated = true;
  }
  return vc;
}

Eigen::MatrixXd delta_matrix(const Eigen::VectorXd& d, const Eigen::MatrixXd& Z) {
  if (Z.rows() != d.size()) throw Error(ErrorCode::ConfigInvalid, "Z and D differ in order");
  const Eigen::VectorXd dinv = d.cwiseInverse();
  const Eigen::MatrixXd DinvZ = dinv.asDiagonal() * Z;
  const Eigen::MatrixXd ZtDinvZ = Z.transpose() * DinvZ;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(ZtDinvZ);
  Eigen::MatrixXd Delta = -DinvZ * ldlt.solve(DinvZ.transpose());
  Delta.diagonal() += dinv;
  return Delta;
}

Eigen::MatrixXd error_components_omega(const Eigen::MatrixXd& delta, const VarianceComponents& sigma) {
  const Eigen::Index N = delta.rows();
  const Eigen::Index T = delta.cols();
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(N * T, N * T);
  for (Eigen::Index c = 0; c < N; ++c) {
    omega.block(c * T, c * T, T, T).setConstant(sigma.sigma_mu2);
    for (Eigen::Index t = 0; t < T; ++t) omega(c * T + t, c * T + t) += sigma.sigma_eps2 * delta(c, t);
  }
  return omega;
}

SpectralCheck spectral_check(const Eigen::MatrixXd& delta, const VarianceComponents& sigma) {
  const Eigen::Index N = delta.rows();
  const Eigen::Index T = delta.cols();
  const Eigen::MatrixXd omega = error_components_omega(delta, sigma);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N * T, N * T);
  for (Eigen::Index c = 0; c < N; ++c) B.block(c * T, c * T, T, T).setConstant(1.0 / static_cast<double>(T));
  const Eigen::MatrixXd BO = B * omega;
  SpectralCheck out;
  out.asymmetry = (N > 0 && T > 0) ? (BO - BO.transpose()).cwiseAbs().maxCoeff() : 0.0;
  out.decomposable = out.asymmetry < 1e-10;
  return out;
}

SpectralGls spectral_gls(const ModelSpec& spec, const PanelTable& table, const VarianceComponents& sigma,
                         const std::string& delta_column) {
  if (!spec.dummy_groups.empty())
    throw Error(ErrorCode::ConfigInvalid, "spectral decomposition is implemented for models without dummy groups");
  if (!spec.intercept) throw Error(ErrorCode::ConfigInvalid, "spectral decomposition needs an intercept");
  PanelIndex p = index_panel(spec, table, true, delta_column);
  const double T = p.n_periods;
  Eigen::VectorXd dc(p.n_units);
  for (int u = 0; u < p.n_units; ++u) {
    const auto& rows = p.rows_of_unit[static_cast<std::size_t>(u)];
    dc(u) = p.delta(rows.front());
    for (auto i : rows)
      if (std::abs(p.delta(i) - dc(u)) > 1e-12)
        throw Error(ErrorCode::ConfigInvalid, "heteroscedasticity factor varies over time; no spectral decomposition");
  }

  const Eigen::Index n = p.d.n();
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(n, n);
  for (const auto& rows : p.rows_of_unit)
    for (auto i : rows)
      for (auto j : rows) omega(i, j) = sigma.sigma_mu2;
  for (Eigen::Index i = 0; i < n; ++i) omega(i, i) += sigma.sigma_eps2 * p.delta(i);

  SpectralGls out;
  out.gls = gls(p.d, omega);
  PanelOptions ob;
  ob.correction = CorrectionKind::exact_b;
  ob.components = sigma;
  ob.delta_column = delta_column;
  out.between = between_fit(spec, table, ob);
  PanelOptions ow;
  ow.correction = CorrectionKind::approx_a;
  ow.delta_column = delta_column;
  out.within = within_fit(spec, table, ow);

  const Eigen::Index k = p.d.k();
  out.between_precision = Eigen::MatrixXd::Zero(k, k);
  out.within_precision = Eigen::MatrixXd::Zero(k, k);
  for (int u = 0; u < p.n_units; ++u) {
    const auto& rows = p.rows_of_unit[static_cast<std::size_t>(u)];
    Eigen::RowVectorXd xbar = Eigen::RowVectorXd::Zero(k);
    for (auto i : rows) xbar += p.d.X.row(i);
    xbar /= T;
    out.between_precision += T * xbar.transpose() * xbar / (T * sigma.sigma_mu2 + sigma.sigma_eps2 * dc(u));
    for (auto i : rows) {
      const Eigen::RowVectorXd dev = p.d.X.row(i) - xbar;
      out.within_precision += dev.transpose() * dev / (sigma.sigma_eps2 * dc(u));
    }
  }
  Eigen::VectorXd beta_w = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd beta_b(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& name = p.d.names[static_cast<std::size_t>(j)];
    beta_b(j) = out.between.coefficient(name);
    if (out.within.has(name)) beta_w(j) = out.within.coefficient(name);
  }
  const Eigen::MatrixXd total = out.between_precision + out.within_precision;
  out.combined = total.ldlt().solve(out.within_precision * beta_w + out.between_precision * beta_b);
  return out;
}

}  // namespace ppanel
