#include "doctest.h"
#include "helpers.hpp"
#include "ppanel/diagnostics.hpp"
#include "ppanel/error.hpp"

using namespace ppanel;
using testing::small_panel;
using testing::spec_yx;

namespace {

FitResult fake(std::vector<std::string> names, Eigen::VectorXd coef, Eigen::MatrixXd cov) {
  FitResult f;
  f.names = std::move(names);
  f.coef = std::move(coef);
  f.cov = std::move(cov);
  return f;
}

}  // namespace

TEST_CASE("chi-square helpers") {
  CHECK(chi2_sf(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi2_quantile(0.95, 2) == doctest::Approx(5.991464547107979));
}

TEST_CASE("hausman on two coefficients") {
  const auto a = fake({"const", "x"}, Eigen::Vector2d(1.0, 0.2), Eigen::Matrix2d{{0.04, 0.01}, {0.01, 0.02}});
  const auto b = fake({"const", "x"}, Eigen::Vector2d(1.1, 0.5), Eigen::Matrix2d{{0.03, 0.0}, {0.0, 0.01}});
  const Eigen::Vector2d d(-0.1, -0.3);
  const Eigen::Matrix2d V = a.cov + b.cov;
  const auto full = hausman(a, b);
  CHECK(full.statistic == doctest::Approx(d.dot(V.inverse() * d)));
  CHECK(full.dof == 2);
  CHECK(full.p_value == doctest::Approx(chi2_sf(full.statistic, 2)));
  const auto sub = hausman(a, b, {"x"});
  CHECK(sub.statistic == doctest::Approx(0.09 * V.inverse()(1, 1)));
  const auto naive = hausman(a, b, {"x"}, true);
  CHECK(naive.statistic == doctest::Approx(0.09 / V(1, 1)));
  CHECK(naive.naive);
}

TEST_CASE("hausman repairs an indefinite variance") {
  const auto a = fake({"x"}, Eigen::VectorXd::Constant(1, 0.3), Eigen::MatrixXd::Constant(1, 1, -0.01));
  const auto b = fake({"x"}, Eigen::VectorXd::Constant(1, 0.1), Eigen::MatrixXd::Constant(1, 1, 0.005));
  const auto h = hausman(a, b);
  CHECK(h.V_psd_repaired);
  CHECK(std::isfinite(h.statistic));
}

TEST_CASE("dfbetas agree with leave-one-out refits") {
  const auto t = small_panel(15, 2, 31);
  const auto r = dfbetas_filter(spec_yx(), t);
  const Eigen::MatrixXd X = testing::with_const({t.column("x")});
  const Eigen::VectorXd y = testing::vec(t.column("y"));
  const Eigen::VectorXd b = testing::normal_eq(X, y);
  const Eigen::MatrixXd XtXi = (X.transpose() * X).inverse();
  const Eigen::Index n = X.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd Xi(n - 1, 2);
    Eigen::VectorXd yi(n - 1);
    for (Eigen::Index j = 0, k = 0; j < n; ++j)
      if (j != i) {
        Xi.row(k) = X.row(j);
        yi(k++) = y(j);
      }
    const Eigen::VectorXd bi = testing::normal_eq(Xi, yi);
    const double s2i = (yi - Xi * bi).squaredNorm() / static_cast<double>(n - 3);
    for (int c = 0; c < 2; ++c) {
      const double expected = (b(c) - bi(c)) / std::sqrt(s2i * XtXi(c, c));
      CHECK(r.values(i, c) == doctest::Approx(expected).epsilon(1e-8));
    }
  }
  CHECK(r.threshold == doctest::Approx(2.0 / std::sqrt(30.0)));
  CHECK(r.flagged.size() + r.retained.size() == t.rows());
  CHECK(drop_flagged(t, r).rows() == r.retained.size());
}

TEST_CASE("inverse absolute residual weights") {
  Eigen::VectorXd e(4);
  e << 0.5, -2.0, 0.0, 1.0;
  const Eigen::VectorXd w = reweight_inverse_abs_residual(e);
  CHECK(w(0) == doctest::Approx(2.0));
  CHECK(w(1) == doctest::Approx(0.5));
  CHECK(w(2) == doctest::Approx(2.0));  // floored at the smallest positive residual
  const Eigen::VectorXd ones = reweight_inverse_abs_residual(Eigen::VectorXd::Zero(3));
  CHECK(ones.isOnes());
}

TEST_CASE("heteroscedasticity test rejects variance tied to x") {
  std::vector<std::string> ids;
  std::vector<int> wv;
  std::vector<double> x, y;
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 400; ++i) {
    ids.push_back("u" + std::to_string(i));
    wv.push_back(1);
    x.push_back(n01(gen));
    y.push_back(1.0 + x.back() + std::exp(x.back()) * n01(gen));
  }
  PanelTable t(ids, wv);
  t.add_column("x", x);
  t.add_column("y", y);
  const auto fit = ols(spec_yx(), t);
  const auto h = het_test_and_reweight(fit, spec_yx(), t);
  CHECK(h.rejected);
  CHECK(h.p_value < 0.01);
  CHECK(h.reweighted.weights.size() == 400);
  const auto homo = het_test_and_reweight(ols(spec_yx(), small_panel(200, 1, 6)), spec_yx(), small_panel(200, 1, 6), 0.001);
  CHECK_FALSE(homo.rejected);
}
