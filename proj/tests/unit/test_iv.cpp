#include "doctest.h"
#include "helpers.hpp"
#include "ppanel/error.hpp"
#include "ppanel/iv.hpp"

using namespace ppanel;
using testing::small_panel;
using testing::spec_yx;

TEST_CASE("two stage least squares matches the projection formula") {
  const auto t = small_panel(80, 2, 21, 0.9);
  const InstrumentSet set{"x", {"z"}};
  const auto fit = two_stage(spec_yx(), t, set);
  const Eigen::MatrixXd X = testing::with_const({t.column("x")});
  const Eigen::MatrixXd Z = testing::with_const({t.column("z")});
  const Eigen::VectorXd y = testing::vec(t.column("y"));
  const Eigen::MatrixXd P = Z * (Z.transpose() * Z).inverse() * Z.transpose();
  const Eigen::MatrixXd Xh = P * X;
  const Eigen::VectorXd b = (Xh.transpose() * X).inverse() * Xh.transpose() * y;
  CHECK((fit.coef - b).cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::VectorXd e = y - X * b;
  const double s2 = e.squaredNorm() / (X.rows() - 2);
  CHECK(fit.std_error("x") == doctest::Approx(std::sqrt(s2 * (Xh.transpose() * Xh).inverse()(1, 1))).epsilon(1e-9));
  CHECK(fit.extras.at("first_stage_f") > 100.0);
  CHECK(fit.extras.count("weak_instruments") == 0);
}

TEST_CASE("first stage F on excluded instruments") {
  const auto t = small_panel(60, 2, 22);
  ModelSpec exo = spec_yx();
  exo.regressors.clear();
  const auto fs = first_stage({"x", {"z"}}, exo, t);
  const Eigen::MatrixXd Z = testing::with_const({t.column("z")});
  const Eigen::VectorXd x = testing::vec(t.column("x"));
  const double rss_u = (x - Z * testing::normal_eq(Z, x)).squaredNorm();
  const double rss_r = (x.array() - x.mean()).matrix().squaredNorm();
  const double n = static_cast<double>(x.size());
  CHECK(fs.f_stat == doctest::Approx((rss_r - rss_u) / (rss_u / (n - 2))));
  CHECK(fs.df1 == 1);
  CHECK(fs.fitted.size() == t.rows());
}

TEST_CASE("weak instruments are flagged") {
  auto t = small_panel(60, 2, 23);
  std::vector<double> noise(t.rows());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = std::sin(17.0 * static_cast<double>(i));
  t.add_column("w", noise);
  const auto fit = two_stage(spec_yx(), t, {"x", {"w"}});
  CHECK(fit.extras.at("weak_instruments") == 1.0);
}

TEST_CASE("configuration checks") {
  const auto t = small_panel(20, 2, 24);
  CHECK_THROWS_AS(two_stage(spec_yx(), t, {"x", {"y"}}), Error);
  CHECK_THROWS_AS(two_stage(spec_yx(), t, {"q", {"z"}}), Error);
  PanelOptions a;
  a.correction = CorrectionKind::approx_a;
  CHECK_THROWS_AS(estimate_by_name("ols", spec_yx(), t, a), Error);
  CHECK_THROWS_AS(estimate_by_name("nope", spec_yx(), t), Error);
  CHECK(is_estimator_name("within"));
}

TEST_CASE("panel iv recovers the slope when x correlates with the effect") {
  const auto t = small_panel(400, 3, 25, 1.0);
  const InstrumentSet set{"x", {"z"}};
  const auto w = panel_iv_fit(TransformKind::within, spec_yx(), t, set);
  CHECK(w.coefficient("x") == doctest::Approx(0.5).epsilon(0.15));
  CHECK(w.extras.count("first_stage_min_f"));
  ModelSpec s = spec_yx();
  s.intercept = false;
  const auto fd = fd_instrument(s, t, set);
  CHECK(fd.coefficient("x") == doctest::Approx(0.5).epsilon(0.15));
  CHECK(fd.extras.count("first_stage_diff_f"));
}
