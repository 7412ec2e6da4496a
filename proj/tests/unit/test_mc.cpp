#include <cmath>
#include "doctest.h"
#include "ppanel/error.hpp"
#include "ppanel/mc.hpp"

using namespace ppanel;

TEST_CASE("generation is reproducible per replication") {
  DgpConfig c;
  c.n_units = 40;
  c.n_cells = 8;
  const auto a = generate(c, 3), b = generate(c, 3), other = generate(c, 4);
  CHECK(a.column("y") == b.column("y"));
  CHECK(a.column("y") != other.column("y"));
  CHECK(a.rows() == 160);
  CHECK(a.text_column("cohort_key")[0] == a.text_column("cohort_key")[8 * 4]);
}

TEST_CASE("measurement error matches the reliability ratio") {
  DgpConfig c;
  c.n_units = 4000;
  c.n_cells = 40;
  c.reliability = 0.5;
  const auto t = generate(c);
  const auto& m = t.column("m");
  double ss = 0.0;
  for (double v : m) ss += v * v;
  CHECK(ss / static_cast<double>(m.size()) == doctest::Approx(c.var_x()).epsilon(0.05));
}

TEST_CASE("cell size variation drops rows") {
  DgpConfig c;
  c.n_units = 200;
  c.n_cells = 10;
  c.cell_size_variation = 0.5;
  const auto t = generate(c);
  CHECK(t.rows() < 800);
  const auto g = group_generated(t);
  CHECK(g.rows() == 40);
  CHECK(g.has_column("delta"));
}

TEST_CASE("config json") {
  DgpConfig c;
  c.beta = 0.7;
  c.seed = 99;
  const auto back = DgpConfig::from_json_text(c.to_json_text());
  CHECK(back.beta == 0.7);
  CHECK(back.seed == 99);
  CHECK_THROWS_AS(DgpConfig::from_json_text(R"({"betta": 1})"), Error);
  CHECK_THROWS_AS(DgpConfig::from_json_text(R"({"reliability": 0})"), Error);
  CHECK_THROWS_AS(DgpConfig::from_json_text(R"({"n_units": 10, "n_cells": 3})"), Error);
  const auto s = StudyConfig::from_json_text(R"({"reps": 3, "beta": 0.2, "estimators": ["fd"]})");
  CHECK(s.reps == 3);
  CHECK(s.dgp.beta == 0.2);
}

TEST_CASE("small study report") {
  StudyConfig s;
  s.dgp.n_units = 100;
  s.dgp.n_cells = 10;
  s.reps = 5;
  s.estimators = {"ols", "between", "within"};
  const auto r = run_study(s);
  CHECK(r.row("individual", "within", "none", false).n_ok == 5);
  CHECK(std::isnan(r.row("individual", "hausman_bw", "none", false).bias));
  CHECK(r.to_csv().find("level,estimator") == 0);
  CHECK_THROWS(r.row("pseudo", "within", "none", false));
}
