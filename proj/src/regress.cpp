#include "ppanel/regress.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "ppanel/error.hpp"

namespace ppanel {

namespace {

constexpr double kRankTolerance = 1e-10;

bool is_ones(const Eigen::VectorXd& v) { return v.size() > 0 && (v.array() == 1.0).all(); }

}  // namespace

Design build_design(const ModelSpec& spec, const PanelTable& table) {
  if (spec.dependent.empty()) throw Error(ErrorCode::ConfigInvalid, "model has no dependent variable");
  std::vector<const std::vector<double>*> numeric;
  const auto& y = table.column(spec.dependent);
  for (const auto& r : spec.regressors) numeric.push_back(&table.column(r));
  const std::vector<double>* weight = spec.weight ? &table.column(*spec.weight) : nullptr;
  for (const auto& g : spec.dummy_groups)
    if (g != kWaveDummies && !table.has_column(g)) throw Error(ErrorCode::MissingColumn, "dummy group '" + g + "'");

  Design d;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    bool ok = !std::isnan(y[i]);
    for (const auto* c : numeric) ok = ok && !std::isnan((*c)[i]);
    if (weight) ok = ok && !std::isnan((*weight)[i]);
    for (const auto& g : spec.dummy_groups)
      if (g != kWaveDummies && !table.is_text(g)) ok = ok && !std::isnan(table.column(g)[i]);
    if (ok) d.rows.push_back(i);
    else ++d.n_excluded;
  }
  const auto n = static_cast<Eigen::Index>(d.rows.size());

  // dummy levels over used rows
  struct Level {
    std::string group;
    std::string label;
  };
  std::vector<Level> dummy_levels;
  std::vector<std::vector<std::string>> row_labels(spec.dummy_groups.size());
  for (std::size_t g = 0; g < spec.dummy_groups.size(); ++g) {
    const auto& group = spec.dummy_groups[g];
    auto& labels = row_labels[g];
    labels.reserve(d.rows.size());
    if (group == kWaveDummies) {
      std::set<int> levels;
      for (auto r : d.rows) {
        levels.insert(table.waves()[r]);
        labels.push_back(std::to_string(table.waves()[r]));
      }
      for (auto it = std::next(levels.begin(), levels.empty() ? 0 : 1); it != levels.end(); ++it)
        dummy_levels.push_back({group, std::to_string(*it)});
    } else if (table.is_text(group)) {
      std::set<std::string> levels;
      for (auto r : d.rows) {
        labels.push_back(table.text_column(group)[r]);
        levels.insert(labels.back());
      }
      for (auto it = std::next(levels.begin(), levels.empty() ? 0 : 1); it != levels.end(); ++it)
        dummy_levels.push_back({group, *it});
    } else {
      std::set<double> levels;
      for (auto r : d.rows) {
        levels.insert(table.column(group)[r]);
        labels.push_back(format_number(table.column(group)[r]));
      }
      for (auto it = std::next(levels.begin(), levels.empty() ? 0 : 1); it != levels.end(); ++it)
        dummy_levels.push_back({group, format_number(*it)});
    }
  }

  const auto k = static_cast<Eigen::Index>((spec.intercept ? 1 : 0) + spec.regressors.size() + dummy_levels.size());
  d.X.resize(n, k);
  d.y.resize(n);
  if (weight) d.weights.resize(n);
  Eigen::Index col = 0;
  if (spec.intercept) {
    d.X.col(col++).setOnes();
    d.names.push_back(kIntercept);
  }
  for (std::size_t j = 0; j < spec.regressors.size(); ++j, ++col) {
    for (Eigen::Index i = 0; i < n; ++i) d.X(i, col) = (*numeric[j])[d.rows[i]];
    d.names.push_back(spec.regressors[j]);
  }
  for (const auto& level : dummy_levels) {
    const auto g = static_cast<std::size_t>(
        std::find(spec.dummy_groups.begin(), spec.dummy_groups.end(), level.group) - spec.dummy_groups.begin());
    for (Eigen::Index i = 0; i < n; ++i) d.X(i, col) = row_labels[g][i] == level.label ? 1.0 : 0.0;
    d.names.push_back(level.group + "_" + level.label);
    ++col;
  }
  std::map<std::string, int> unit_index;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = d.rows[i];
    d.y(i) = y[r];
    if (weight) d.weights(i) = (*weight)[r];
    auto [it, inserted] = unit_index.emplace(table.unit_ids()[r], static_cast<int>(unit_index.size()));
    d.groups.push_back(it->second);
  }
  return d;
}

Eigen::Index FitResult::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::ConfigInvalid, "coefficient '" + name + "' not in fit");
  return static_cast<Eigen::Index>(it - names.begin());
}

bool FitResult::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

double FitResult::coefficient(const std::string& name) const { return coef(index_of(name)); }

double FitResult::std_error(const std::string& name) const {
  const auto i = index_of(name);
  return std::sqrt(std::max(0.0, cov(i, i)));
}

Eigen::VectorXd FitResult::std_errors() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

FitResult least_squares(const Design& design, const LsOptions& options) {
  const Eigen::Index n = design.n();
  const Eigen::Index k = design.k();
  const Eigen::Index df = n - k - options.absorbed;
  if (k == 0) throw Error(ErrorCode::ConfigInvalid, "model has no regressors");
  if (df <= 0)
    throw Error(ErrorCode::InsufficientData, std::to_string(n) + " observations for " +
                                                 std::to_string(k + options.absorbed) + " parameters");

  Eigen::VectorXd sw = Eigen::VectorXd::Ones(n);
  const bool weighted = design.weights.size() > 0;
  if (weighted) {
    if (design.weights.size() != n) throw Error(ErrorCode::ConfigInvalid, "weight vector has wrong length");
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(design.weights(i) > 0.0) || !std::isfinite(design.weights(i)))
        throw Error(ErrorCode::NonPositiveWeight, "weight in design row " + std::to_string(i + 1) + " is " +
                                                      format_number(design.weights(i)));
    sw = design.weights.cwiseSqrt();
  }
  const Eigen::MatrixXd Xw = design.X.array().colwise() * sw.array();
  const Eigen::VectorXd yw = design.y.cwiseProduct(sw);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(R).singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  if (!(smax > 0.0) || sv(k - 1) / smax < kRankTolerance) {
    Eigen::Index rank = 0;
    while (rank < k && smax > 0.0 && sv(rank) / smax >= kRankTolerance) ++rank;
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = rank; j < k; ++j) cols += (j > rank ? ", " : "") + design.names[perm(j)];
    throw Error(ErrorCode::RankDeficient, "collinear column(s): " + cols);
  }

  FitResult fit;
  fit.method = options.method;
  fit.names = design.names;
  fit.coef = qr.solve(yw);
  fit.residuals = design.y - design.X * fit.coef;
  if (weighted) fit.weights = design.weights;
  fit.df = df;
  fit.n_used = n;
  fit.n_excluded = design.n_excluded;
  fit.rows = design.rows;

  const Eigen::VectorXd ew = fit.residuals.cwiseProduct(sw);
  const double ssr = ew.squaredNorm();
  fit.sigma2 = ssr / static_cast<double>(df);

  const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const auto P = qr.colsPermutation();
  const Eigen::MatrixXd bread = P * (Rinv * Rinv.transpose()) * P.transpose();

  switch (options.covariance) {
    case CovarianceKind::homoscedastic:
      fit.cov = options.known_scale ? bread : Eigen::MatrixXd(fit.sigma2 * bread);
      break;
    case CovarianceKind::white: {
      const Eigen::MatrixXd Xe = Xw.array().colwise() * ew.array();
      const Eigen::MatrixXd meat = Xe.transpose() * Xe;
      fit.cov = bread * meat * bread * (static_cast<double>(n) / static_cast<double>(df));
      break;
    }
    case CovarianceKind::cluster: {
      if (design.groups.size() != static_cast<std::size_t>(n))
        throw Error(ErrorCode::ConfigInvalid, "cluster covariance needs a group id per row");
      std::map<int, Eigen::VectorXd> scores;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto [it, inserted] = scores.try_emplace(design.groups[i], Eigen::VectorXd::Zero(k));
        it->second += Xw.row(i).transpose() * ew(i);
      }
      Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
      for (const auto& [g, s] : scores) meat += s * s.transpose();
      const double G = static_cast<double>(scores.size());
      const double scale = G > 1 ? G / (G - 1.0) * (static_cast<double>(n) - 1.0) / static_cast<double>(df) : 1.0;
      fit.cov = bread * meat * bread * scale;
      break;
    }
  }
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());

  bool has_intercept = false;
  for (Eigen::Index j = 0; j < k; ++j) has_intercept = has_intercept || is_ones(design.X.col(j));
  double tss = 0.0;
  if (has_intercept) {
    const double wsum = sw.squaredNorm();
    const double ybar = (sw.array().square() * design.y.array()).sum() / wsum;
    tss = ((design.y.array() - ybar) * sw.array()).square().sum();
  } else {
    tss = yw.squaredNorm();
  }
  fit.r2 = tss > 0.0 ? 1.0 - ssr / tss : 0.0;
  return fit;
}

std::map<std::string, double> variable_means(const ModelSpec& spec, const PanelTable& table,
                                             std::span<const std::size_t> rows) {
  std::map<std::string, double> means;
  if (rows.empty()) return means;
  auto mean_of = [&](const std::string& name) {
    const auto& c = table.column(name);
    double s = 0.0;
    for (auto r : rows) s += c[r];
    return s / static_cast<double>(rows.size());
  };
  means[spec.dependent] = mean_of(spec.dependent);
  for (const auto& r : spec.regressors) means[r] = mean_of(r);
  return means;
}

FitResult ols(const ModelSpec& spec, const PanelTable& table, CovarianceKind covariance) {
  const Design d = build_design(spec, table);
  FitResult fit = least_squares(d, {covariance, 0, false, spec.weight ? "wls" : "ols"});
  fit.means = variable_means(spec, table, fit.rows);
  return fit;
}

FitResult wls(const ModelSpec& spec, const PanelTable& table, std::span<const double> weights,
              CovarianceKind covariance) {
  if (weights.size() != table.rows())
    throw Error(ErrorCode::ConfigInvalid, "weight vector length differs from table rows");
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
      throw Error(ErrorCode::NonPositiveWeight,
                  "weight for row " + std::to_string(i + 1) + " is " + format_number(weights[i]));
  ModelSpec unweighted = spec;
  unweighted.weight.reset();
  Design d = build_design(unweighted, table);
  d.weights.resize(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) d.weights(i) = weights[d.rows[i]];
  FitResult fit = least_squares(d, {covariance, 0, false, "wls"});
  fit.means = variable_means(spec, table, fit.rows);
  return fit;
}

FitResult gls(const Design& design, const Eigen::MatrixXd& omega) {
  const Eigen::Index n = design.n();
  if (omega.rows() != n || omega.cols() != n)
    throw Error(ErrorCode::ConfigInvalid, "omega must be " + std::to_string(n) + "x" + std::to_string(n));
  const double scale = omega.cwiseAbs().maxCoeff();
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1.0))
    throw Error(ErrorCode::NotPositiveDefinite, "omega is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all())
    throw Error(ErrorCode::NotPositiveDefinite, "omega has no Cholesky factor");
  Design whitened = design;
  whitened.X = llt.matrixL().solve(design.X);
  whitened.y = llt.matrixL().solve(design.y);
  whitened.weights.resize(0);
  FitResult fit = least_squares(whitened, {CovarianceKind::homoscedastic, 0, true, "gls"});
  fit.residuals = design.y - design.X * fit.coef;
  return fit;
}

FitResult gls(const ModelSpec& spec, const PanelTable& table, const Eigen::MatrixXd& omega) {
  ModelSpec unweighted = spec;
  unweighted.weight.reset();
  FitResult fit = gls(build_design(unweighted, table), omega);
  fit.means = variable_means(spec, table, fit.rows);
  return fit;
}

namespace {

void check_common_rows(std::span<const Design> designs) {
  if (designs.size() < 2) throw Error(ErrorCode::ConfigInvalid, "SUR needs at least two equations");
  for (const auto& d : designs)
    if (d.n() != designs[0].n()) throw Error(ErrorCode::ConfigInvalid, "SUR equations must share their rows");
}

Eigen::MatrixXd residual_covariance(const Eigen::MatrixXd& E) {
  return (E.transpose() * E) / static_cast<double>(E.rows());
}

SurResult stacked_gls(std::span<const Design> designs, const Eigen::MatrixXd& sigma) {
  const std::size_t m = designs.size();
  const Eigen::Index n = designs[0].n();
  if (sigma.rows() != static_cast<Eigen::Index>(m) || sigma.cols() != static_cast<Eigen::Index>(m))
    throw Error(ErrorCode::ConfigInvalid, "sigma must be m x m for m equations");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
  const double emax = es.eigenvalues().maxCoeff();
  const double emin = es.eigenvalues().minCoeff();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (!(emax > 0.0) || emin / emax < 1e-12 || llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularSigma, "cross-equation residual covariance is singular");
  const Eigen::MatrixXd Linv =
      llt.matrixL().solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)));

  std::vector<Eigen::Index> offset(m + 1, 0);
  for (std::size_t i = 0; i < m; ++i) offset[i + 1] = offset[i] + designs[i].k();
  const Eigen::Index K = offset[m];

  Design stacked;
  stacked.X = Eigen::MatrixXd::Zero(n * static_cast<Eigen::Index>(m), K);
  stacked.y = Eigen::VectorXd::Zero(n * static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double l = Linv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (l == 0.0) continue;
      stacked.X.block(static_cast<Eigen::Index>(i) * n, offset[j], n, designs[j].k()) += l * designs[j].X;
      stacked.y.segment(static_cast<Eigen::Index>(i) * n, n) += l * designs[j].y;
    }
    for (const auto& name : designs[i].names) stacked.names.push_back("eq" + std::to_string(i) + ":" + name);
  }
  FitResult joint = least_squares(stacked, {CovarianceKind::homoscedastic, 0, true, "sur"});

  SurResult out;
  out.sigma = sigma;
  out.cov = joint.cov;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& d = designs[i];
    FitResult eq;
    eq.method = "sur";
    eq.names = d.names;
    eq.coef = joint.coef.segment(offset[i], d.k());
    eq.cov = joint.cov.block(offset[i], offset[i], d.k(), d.k());
    eq.residuals = d.y - d.X * eq.coef;
    eq.sigma2 = sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    eq.df = n - d.k();
    eq.n_used = n;
    eq.n_excluded = d.n_excluded;
    eq.rows = d.rows;
    const double ybar = d.y.mean();
    const double tss = (d.y.array() - ybar).square().sum();
    eq.r2 = tss > 0.0 ? 1.0 - eq.residuals.squaredNorm() / tss : 0.0;
    out.equations.push_back(std::move(eq));
  }
  return out;
}

}  // namespace

SurResult sur_with_sigma(std::span<const Design> designs, const Eigen::MatrixXd& sigma) {
  check_common_rows(designs);
  return stacked_gls(designs, sigma);
}

SurResult sur(std::span<const Design> designs, const SurOptions& options) {
  check_common_rows(designs);
  const std::size_t m = designs.size();
  const Eigen::Index n = designs[0].n();
  Eigen::MatrixXd E(n, static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) E.col(static_cast<Eigen::Index>(i)) = least_squares(designs[i]).residuals;
  SurResult result = stacked_gls(designs, residual_covariance(E));
  result.iterations = 1;
  while (options.iterate && result.iterations < options.max_iterations) {
    for (std::size_t i = 0; i < m; ++i) E.col(static_cast<Eigen::Index>(i)) = result.equations[i].residuals;
    SurResult next = stacked_gls(designs, residual_covariance(E));
    double change = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      change = std::max(change, (next.equations[i].coef - result.equations[i].coef).cwiseAbs().maxCoeff());
    next.iterations = result.iterations + 1;
    result = std::move(next);
    if (change < options.tolerance) break;
  }
  return result;
}

SurResult sur(std::span<const ModelSpec> specs, const PanelTable& table, const SurOptions& options) {
  if (specs.size() < 2) throw Error(ErrorCode::ConfigInvalid, "SUR needs at least two equations");
  // common complete-case rows across equations
  std::vector<bool> keep(table.rows(), true);
  for (const auto& s : specs) {
    ModelSpec u = s;
    u.weight.reset();
    std::vector<bool> used(table.rows(), false);
    for (auto r : build_design(u, table).rows) used[r] = true;
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = keep[i] && used[i];
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) rows.push_back(i);
  const PanelTable common = table.select_rows(rows);
  std::vector<Design> designs;
  for (const auto& s : specs) {
    ModelSpec u = s;
    u.weight.reset();
    Design d = build_design(u, common);
    for (auto& r : d.rows) r = rows[r];
    d.n_excluded = table.rows() - rows.size();
    designs.push_back(std::move(d));
  }
  SurResult result = sur(designs, options);
  for (std::size_t i = 0; i < specs.size(); ++i) result.equations[i].means = variable_means(specs[i], table, rows);
  return result;
}

double round12(double value) {
  if (!std::isfinite(value)) return value;
  return std::stod(format_number(value, 12));
}

std::string fit_to_json(const FitResult& fit) {
  using json = nlohmann::ordered_json;
  auto num = [](double v) -> json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return round12(v);
  };
  json j;
  j["method"] = fit.method;
  j["names"] = fit.names;
  json coef = json::object(), se = json::object();
  const Eigen::VectorXd ses = fit.std_errors();
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    coef[fit.names[i]] = num(fit.coef(static_cast<Eigen::Index>(i)));
    se[fit.names[i]] = num(ses(static_cast<Eigen::Index>(i)));
  }
  j["coef"] = coef;
  j["se"] = se;
  json cov = json::array();
  for (Eigen::Index r = 0; r < fit.cov.rows(); ++r)
    for (Eigen::Index c = 0; c < fit.cov.cols(); ++c) cov.push_back(num(fit.cov(r, c)));
  j["cov"] = cov;
  j["n_used"] = fit.n_used;
  j["n_excluded"] = fit.n_excluded;
  j["df"] = fit.df;
  j["sigma2"] = num(fit.sigma2);
  j["r2"] = num(fit.r2);
  json means = json::object();
  for (const auto& [k, v] : fit.means) means[k] = num(v);
  j["means"] = means;
  json extras = json::object();
  for (const auto& [k, v] : fit.extras) extras[k] = num(v);
  j["extras"] = extras;
  j["notes"] = fit.notes;
  return j.dump(2);
}

FitResult fit_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("fit JSON: ") + e.what());
  }
  auto num = [](const nlohmann::json& v) {
    if (v.is_null()) return std::nan("");
    if (v.is_string()) return v.get<std::string>() == "inf" ? HUGE_VAL : -HUGE_VAL;
    return v.get<double>();
  };
  FitResult fit;
  try {
    fit.method = j.value("method", std::string());
    fit.names = j.at("names").get<std::vector<std::string>>();
    const auto k = static_cast<Eigen::Index>(fit.names.size());
    fit.coef.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) fit.coef(i) = num(j.at("coef").at(fit.names[static_cast<std::size_t>(i)]));
    const auto& cov = j.at("cov");
    if (static_cast<Eigen::Index>(cov.size()) != k * k)
      throw Error(ErrorCode::ConfigInvalid, "fit JSON covariance has wrong size");
    fit.cov.resize(k, k);
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < k; ++c) fit.cov(r, c) = num(cov.at(static_cast<std::size_t>(r * k + c)));
    fit.n_used = j.value("n_used", Eigen::Index{0});
    fit.n_excluded = j.value("n_excluded", std::size_t{0});
    fit.df = j.value("df", Eigen::Index{0});
    if (j.contains("sigma2")) fit.sigma2 = num(j.at("sigma2"));
    if (j.contains("r2")) fit.r2 = num(j.at("r2"));
    if (j.contains("means"))
      for (const auto& [key, v] : j.at("means").items()) fit.means[key] = num(v);
    if (j.contains("extras"))
      for (const auto& [key, v] : j.at("extras").items()) fit.extras[key] = num(v);
    if (j.contains("notes")) fit.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("fit JSON: ") + e.what());
  }
  return fit;
}

}  // namespace ppanel
