#include "ppanel/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "ppanel/error.hpp"

namespace ppanel {

double chi2_sf(double x, int dof) {
  if (dof < 1) throw Error(ErrorCode::ConfigInvalid, "chi-square needs dof >= 1");
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), x));
}

double chi2_quantile(double p, int dof) {
  if (dof < 1) throw Error(ErrorCode::ConfigInvalid, "chi-square needs dof >= 1");
  return boost::math::quantile(boost::math::chi_squared(dof), p);
}

namespace {

/// Moore-Penrose inverse of a symmetric matrix, eigenvalues at or below 1e-12 of the largest clipped.
Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& V, bool& repaired) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (V + V.transpose()));
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  const double cut = 1e-12 * top;
  Eigen::VectorXd inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) <= cut) {
      inv(i) = 0.0;
      repaired = true;
    } else {
      inv(i) = 1.0 / ev(i);
    }
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

HausmanResult hausman(const FitResult& a, const FitResult& b, const std::vector<std::string>& subset, bool naive) {
  HausmanResult out;
  out.naive = naive;
  for (const auto& n : a.names)
    if (b.has(n)) out.common.push_back(n);
  if (out.common.empty()) throw Error(ErrorCode::ConfigInvalid, "the fits share no coefficients");
  out.subset = subset.empty() ? out.common : subset;
  for (const auto& s : out.subset)
    if (std::find(out.common.begin(), out.common.end(), s) == out.common.end())
      throw Error(ErrorCode::ConfigInvalid, "coefficient '" + s + "' is not in both fits");

  const auto m = static_cast<Eigen::Index>(out.common.size());
  Eigen::MatrixXd V(m, m);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto& nr = out.common[static_cast<std::size_t>(r)];
      const auto& nc = out.common[static_cast<std::size_t>(c)];
      V(r, c) = a.cov(a.index_of(nr), a.index_of(nc)) + b.cov(b.index_of(nr), b.index_of(nc));
    }
  std::vector<Eigen::Index> pos;
  for (const auto& s : out.subset)
    pos.push_back(std::find(out.common.begin(), out.common.end(), s) - out.common.begin());
  const auto q = static_cast<Eigen::Index>(pos.size());
  out.difference.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const auto& n = out.subset[static_cast<std::size_t>(i)];
    out.difference(i) = a.coefficient(n) - b.coefficient(n);
  }

  Eigen::MatrixXd block(q, q);
  if (naive) {
    Eigen::MatrixXd Vss(q, q);
    for (Eigen::Index r = 0; r < q; ++r)
      for (Eigen::Index c = 0; c < q; ++c) Vss(r, c) = V(pos[static_cast<std::size_t>(r)], pos[static_cast<std::size_t>(c)]);
    block = symmetric_pinv(Vss, out.V_psd_repaired);
  } else {
    const Eigen::MatrixXd Vinv = symmetric_pinv(V, out.V_psd_repaired);
    for (Eigen::Index r = 0; r < q; ++r)
      for (Eigen::Index c = 0; c < q; ++c)
        block(r, c) = Vinv(pos[static_cast<std::size_t>(r)], pos[static_cast<std::size_t>(c)]);
  }
  out.statistic = std::max(0.0, out.difference.dot(block * out.difference));
  out.dof = static_cast<int>(q);
  out.p_value = chi2_sf(out.statistic, out.dof);
  return out;
}

std::string hausman_to_json(const HausmanResult& h) {
  nlohmann::ordered_json j;
  j["statistic"] = round12(h.statistic);
  j["dof"] = h.dof;
  j["p_value"] = round12(h.p_value);
  j["V_psd_repaired"] = h.V_psd_repaired;
  j["naive"] = h.naive;
  if (h.naive) j["warning"] = "variance restricted to the tested block; biased";
  j["subset"] = h.subset;
  j["common"] = h.common;
  std::vector<double> d;
  for (Eigen::Index i = 0; i < h.difference.size(); ++i) d.push_back(round12(h.difference(i)));
  j["difference"] = d;
  return j.dump(2);
}

DfbetasResult dfbetas_filter(const ModelSpec& spec, const PanelTable& table, const std::vector<std::string>& subset,
                             std::optional<double> threshold) {
  Design d = build_design(spec, table);
  DfbetasResult out;
  out.fit = least_squares(d, {CovarianceKind::homoscedastic, 0, false, spec.weight ? "wls" : "ols"});
  if (d.weights.size()) {
    const Eigen::VectorXd s = d.weights.cwiseSqrt();
    d.X = d.X.array().colwise() * s.array();
    d.y = d.y.cwiseProduct(s);
  }
  const Eigen::Index n = d.n();
  const Eigen::Index k = d.k();
  if (n - k - 1 <= 0) throw Error(ErrorCode::InsufficientData, "DFBETAS needs more rows than coefficients + 1");
  const Eigen::VectorXd e = d.y - d.X * out.fit.coef;
  const Eigen::MatrixXd XtXinv =
      (d.X.transpose() * d.X).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd A = d.X * XtXinv;  // row i: ((X'X)^-1 x_i)'
  const double ssr = e.squaredNorm();

  out.threshold = threshold.value_or(2.0 / std::sqrt(static_cast<double>(n)));
  out.tested = subset.empty() ? out.fit.names : subset;
  std::vector<Eigen::Index> cols;
  for (const auto& s : out.tested) cols.push_back(out.fit.index_of(s));
  out.values.resize(n, k);
  out.max_abs.assign(static_cast<std::size_t>(n), 0.0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = d.X.row(i).dot(A.row(i));
    const double one_minus_h = 1.0 - h;
    const double s2_i = one_minus_h > 1e-12 ? (ssr - e(i) * e(i) / one_minus_h) / static_cast<double>(n - k - 1) : 0.0;
    const double s_i = std::sqrt(std::max(0.0, s2_i));
    for (Eigen::Index j = 0; j < k; ++j) {
      const double num = one_minus_h > 1e-12 ? A(i, j) * e(i) / one_minus_h : (e(i) == 0.0 ? 0.0 : inf);
      const double den = s_i * std::sqrt(XtXinv(j, j));
      double v;
      if (den > 0.0) v = num / den;
      else v = std::abs(num) <= 1e-300 ? 0.0 : std::copysign(inf, num);
      out.values(i, j) = v;
    }
    double mx = 0.0;
    for (auto j : cols) mx = std::max(mx, std::abs(out.values(i, j)));
    out.max_abs[static_cast<std::size_t>(i)] = mx;
    const auto row = d.rows[static_cast<std::size_t>(i)];
    if (mx > out.threshold) out.flagged.push_back(row);
    else out.retained.push_back(row);
  }
  return out;
}

PanelTable drop_flagged(const PanelTable& table, const DfbetasResult& result) {
  std::vector<std::size_t> keep;
  std::size_t f = 0;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    while (f < result.flagged.size() && result.flagged[f] < r) ++f;
    if (f < result.flagged.size() && result.flagged[f] == r) continue;
    keep.push_back(r);
  }
  return table.select_rows(keep);
}

Eigen::VectorXd reweight_inverse_abs_residual(const Eigen::VectorXd& residuals) {
  const Eigen::Index n = residuals.size();
  if (n == 0) return {};
  std::vector<double> a(residuals.data(), residuals.data() + n);
  for (auto& v : a) v = std::abs(v);
  std::vector<double> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  // nearest-rank 1st percentile
  const auto rank = static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n)));
  double floor = sorted[rank == 0 ? 0 : rank - 1];
  if (!(floor > 0.0)) {
    auto it = std::upper_bound(sorted.begin(), sorted.end(), 0.0);
    if (it == sorted.end()) return Eigen::VectorXd::Ones(n);
    floor = *it;
  }
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 1.0 / std::max(a[static_cast<std::size_t>(i)], floor);
  return w;
}

HetTestResult het_test_and_reweight(const FitResult& fit, const ModelSpec& spec, const PanelTable& table,
                                    double alpha, bool force_reweight) {
  const Design d = build_design(spec, table);
  if (d.rows != fit.rows || fit.residuals.size() != d.n())
    throw Error(ErrorCode::ConfigInvalid, "fit does not belong to this model and table");
  const Eigen::Index n = d.n();

  // candidate auxiliary columns: regressors, squares, cross-products
  std::vector<Eigen::VectorXd> cand;
  std::vector<std::string> names;
  std::vector<Eigen::Index> base;
  for (Eigen::Index j = 0; j < d.k(); ++j)
    if (d.names[static_cast<std::size_t>(j)] != kIntercept) base.push_back(j);
  for (auto j : base) {
    cand.push_back(d.X.col(j));
    names.push_back(d.names[static_cast<std::size_t>(j)]);
  }
  for (std::size_t a = 0; a < base.size(); ++a)
    for (std::size_t b = a; b < base.size(); ++b) {
      cand.push_back(d.X.col(base[a]).cwiseProduct(d.X.col(base[b])));
      names.push_back(d.names[static_cast<std::size_t>(base[a])] + "*" + d.names[static_cast<std::size_t>(base[b])]);
    }
  // greedy Gram-Schmidt selection, starting from the constant
  std::vector<Eigen::VectorXd> basis{Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)))};
  std::vector<Eigen::Index> kept;
  HetTestResult out;
  for (std::size_t c = 0; c < cand.size(); ++c) {
    Eigen::VectorXd v = cand[c];
    const double norm0 = v.norm();
    if (!(norm0 > 0.0)) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) v -= q.dot(v) * q;
    if (v.norm() > 1e-8 * norm0) {
      basis.push_back(v / v.norm());
      kept.push_back(static_cast<Eigen::Index>(c));
      out.auxiliary.push_back(names[c]);
    }
  }
  out.dof = static_cast<int>(kept.size());
  const Eigen::VectorXd e2 = fit.residuals.array().square().matrix();
  const double mean = e2.mean();
  const double tss = (e2.array() - mean).square().sum();
  Eigen::VectorXd fitted = Eigen::VectorXd::Zero(n);
  for (const auto& q : basis) fitted += q.dot(e2) * q;
  const double ssr = (e2 - fitted).squaredNorm();
  const double r2 = tss > 0.0 ? std::max(0.0, 1.0 - ssr / tss) : 0.0;
  out.statistic = static_cast<double>(n) * r2;
  out.p_value = out.dof > 0 ? chi2_sf(out.statistic, out.dof) : 1.0;
  out.rejected = out.dof > 0 && out.p_value < alpha;

  out.weights.assign(table.rows(), 1.0);
  if (out.rejected || force_reweight) {
    const Eigen::VectorXd w = reweight_inverse_abs_residual(fit.residuals);
    for (Eigen::Index i = 0; i < n; ++i) out.weights[d.rows[static_cast<std::size_t>(i)]] = w(i);
    ModelSpec s = spec;
    s.weight.reset();
    out.reweighted = wls(s, table, out.weights, CovarianceKind::homoscedastic);
    out.reweighted.method = "wls-inverse-abs-residual";
  } else {
    out.reweighted = fit;
  }
  return out;
}

}  // namespace ppanel
