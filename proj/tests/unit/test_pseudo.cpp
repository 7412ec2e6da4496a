#include <cmath>
#include <sstream>

#include "doctest.h"
#include "ppanel/error.hpp"
#include "ppanel/pseudo.hpp"

using namespace ppanel;

namespace {

PanelTable households() {
  // four households over two waves; a and b share a cohort, c and d share another
  std::istringstream in(
      "unit,wave,age,edu,lnx,w\n"
      "a,1,32,hs,1,0.2\n"
      "a,2,33,hs,1.5,0.3\n"
      "b,1,38,hs,2,0.4\n"
      "b,2,40,hs,2.5,0.5\n"
      "c,1,55,uni,1,0.1\n"
      "c,2,56,uni,1,0.2\n"
      "d,1,59,uni,3,0.3\n"
      "d,2,61,uni,3,0.6\n");
  return read_csv(in, RoleSchema::from_json_text(R"({"lnx": "log_outlay", "w": "share"})"));
}

}  // namespace

TEST_CASE("cohort key uses age at the first wave") {
  const PanelTable t = assign_cohorts(households(), CohortScheme{}, 1);
  const auto& keys = t.text_column(kCohortColumn);
  CHECK(keys[0] == keys[2]);
  CHECK(keys[6] == keys[7]);  // d turns 60 in wave 2 but keeps its cohort
  CHECK(keys[4] == keys[6]);
  CHECK(keys[0] != keys[4]);
}

TEST_CASE("uncovered age and overlapping bands") {
  CohortScheme s;
  s.age_bands = {{20, 50, "young"}};
  CHECK_THROWS_AS(assign_cohorts(households(), s, 1), Error);
  s.age_bands = {{20, 50, "a"}, {40, 90, "b"}};
  CHECK_THROWS_AS(s.check(), Error);
}

TEST_CASE("income-share aggregation") {
  AggregateOptions o;
  o.min_cell_size = 1;
  const PseudoPanel pp = aggregate(assign_cohorts(households(), CohortScheme{}, 1), o);
  REQUIRE(pp.cells.size() == 4);
  const Cell& c = pp.cells.front();  // households a and b, wave 1
  const double ya = std::exp(1.0), yb = std::exp(2.0);
  const double ga = ya / (ya + yb), gb = yb / (ya + yb);
  CHECK(c.members == std::vector<std::string>{"a", "b"});
  CHECK(c.gamma[0] == doctest::Approx(ga));
  CHECK(c.delta == doctest::Approx(ga * ga + gb * gb));
  CHECK(c.aggregates.at("w") == doctest::Approx(ga * 0.2 + gb * 0.4));
  CHECK(pp.balanced);
  const double dbar = (c.delta + pp.cells[1].delta) / 2.0;
  CHECK(pp.delta_bar.at(c.key) == doctest::Approx(dbar));
}

TEST_CASE("equal weights give delta = 1/n") {
  AggregateOptions o;
  o.min_cell_size = 3;
  o.weighting = Weighting::equal;
  const PseudoPanel pp = aggregate(assign_cohorts(households(), CohortScheme{}, 1), o);
  for (const auto& c : pp.cells) {
    CHECK(c.delta == doctest::Approx(0.5));
    CHECK(c.small);
  }
  const auto rep = cell_report(pp, 100);
  CHECK(rep.n_cells == 4);
  CHECK(rep.under_threshold == 4);
  CHECK(rep.under_30 == 4);
}

TEST_CASE("sub-sample labels are a pure function of seed and unit") {
  CHECK(subsample_of("unit-17", 9, 3) == subsample_of("unit-17", 9, 3));
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 3000; ++i) ++counts[subsample_of("u" + std::to_string(i), 5, 3)];
  for (int c : counts) CHECK(c > 850);
}

TEST_CASE("rotating design feeds each wave from one sub-sample") {
  CohortScheme s;
  s.split_k = 2;
  const PanelTable t = assign_cohorts(households(), s, 3);
  AggregateOptions o;
  o.min_cell_size = 1;
  o.design = SampleDesign::rotating_subsamples;
  const PseudoPanel pp = aggregate(t, o);
  const auto& sub = t.column(kSubsampleColumn);
  for (const auto& c : pp.cells)
    for (const auto& m : c.members)
      for (std::size_t r = 0; r < t.rows(); ++r)
        if (t.unit_ids()[r] == m && t.waves()[r] == c.wave) CHECK(static_cast<int>(sub[r]) == c.wave - 1);
}

TEST_CASE("balanced requirement raises on a missing cell") {
  PanelTable t = households();
  std::vector<std::size_t> keep{0, 1, 2, 3, 4, 6};  // second cohort lacks wave 2
  AggregateOptions o;
  o.min_cell_size = 1;
  o.require_balanced = true;
  CHECK_THROWS_AS(aggregate(assign_cohorts(t.select_rows(keep), CohortScheme{}, 1), o), Error);
}

TEST_CASE("pseudo csv round trip") {
  AggregateOptions o;
  o.min_cell_size = 1;
  const PseudoPanel pp = aggregate(assign_cohorts(households(), CohortScheme{}, 1), o);
  std::ostringstream out;
  write_pseudo_csv(pp, out);
  std::istringstream in(out.str());
  const PanelTable back = read_pseudo_csv(in);
  const PanelTable direct = pp.to_table();
  CHECK(back.rows() == direct.rows());
  CHECK(back.column("delta") == direct.column("delta"));
  CHECK(back.column("w") == direct.column("w"));
}
