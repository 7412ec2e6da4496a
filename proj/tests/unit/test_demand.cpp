#include <cmath>
#include "doctest.h"
#include "helpers.hpp"
#include "ppanel/demand.hpp"
#include "ppanel/error.hpp"

using namespace ppanel;

TEST_CASE("stone index") {
  Eigen::MatrixXd p(3, 2);
  p << 1.0, 2.0, 1.1, 2.2, 1.3, 2.1;
  const Eigen::Vector2d w(0.25, 0.75);
  const auto s = stone_index(p, w);
  CHECK(s(0) == 0.0);
  CHECK(s(2) == doctest::Approx(0.25 * std::log(1.3) + 0.75 * std::log(2.1 / 2.0)));
  p(1, 1) = 0.0;
  CHECK_THROWS_AS(stone_index(p, w), Error);
}

TEST_CASE("expenditure elasticity") {
  CHECK(expenditure_elasticity(-0.05, 0.0, 0.25, 3.0, false) == doctest::Approx(0.8));
  CHECK(expenditure_elasticity(-0.05, 0.01, 0.25, 3.0, true, 2.0) ==
        doctest::Approx(1.0 + (-0.05 + 2.0 * 0.005 * 3.0) / 0.25));
  CHECK_THROWS_AS(expenditure_elasticity(0.1, 0.0, 0.0, 1.0, false), Error);
}

TEST_CASE("shadow price elasticity") {
  const auto r = shadow_price_elasticity(0.49, 0.76);
  CHECK(r.gamma_ii == doctest::Approx(-0.38));
  CHECK(r.gamma_from_frisch);
  CHECK(r.shadow_income_elasticity == doctest::Approx((0.49 - 0.76) / -0.38));
  const auto g = shadow_price_elasticity(1.0, 0.5, -0.25);
  CHECK(g.shadow_income_elasticity == doctest::Approx(-2.0));
  CHECK_FALSE(g.gamma_from_frisch);
  CHECK_THROWS_AS(shadow_price_elasticity(1.0, 0.0), Error);
}

TEST_CASE("linear path without prices uses wave dummies") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> n01;
  std::vector<std::string> ids;
  std::vector<int> wv;
  std::vector<double> lnx, w;
  for (int i = 0; i < 300; ++i)
    for (int t = 1; t <= 2; ++t) {
      ids.push_back("h" + std::to_string(i));
      wv.push_back(t);
      lnx.push_back(n01(gen));
      w.push_back(0.3 - 0.04 * lnx.back() + 0.01 * t + 0.01 * n01(gen));
    }
  PanelTable t(ids, wv);
  t.add_column("lnx", lnx);
  t.add_column("w", w);
  DemandSpec s;
  s.goods = {"food"};
  s.shares = {"w"};
  s.log_outlay = "lnx";
  const auto q = qaids_fit(s, t);
  CHECK(q.iterations == 1);
  CHECK(q.fits[0].coefficient(kLnY) == doctest::Approx(-0.04).epsilon(0.05));
  CHECK(q.fits[0].has("wave_2"));
  const auto rep = elasticity_report(s, q, "ols");
  REQUIRE(rep.size() == 1);
  CHECK(rep[0].elasticity == doctest::Approx(1.0 + q.fits[0].coefficient(kLnY) / rep[0].wbar));
}
