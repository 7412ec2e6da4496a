#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "ppanel/cli.hpp"
#include "ppanel/estimators.hpp"
#include "ppanel/mc.hpp"
#include "ppanel/regress.hpp"

using namespace ppanel;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path = fs::temp_directory_path() / ("ppanel_cli_" + std::to_string(::getpid()));
  TempDir() { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("exit codes") {
  CHECK(cli({}).code == exit_config);
  CHECK(cli({"estimate", "--input", "/nonexistent.csv", "--dependent", "y", "--regressors", "x"}).code == exit_config);
  CHECK(cli({"shadow-price", "--cs", "1", "--ts", "0"}).code == exit_numerical);
  CHECK(cli({"shadow-price", "--table4"}).code == exit_ok);
}

TEST_CASE("iv flag needs instruments") {
  RunConfig c;
  c.input = "x.csv";
  c.dependent = "y";
  c.regressors = {"x"};
  c.iv = true;
  CHECK_THROWS(c.check());
  c.iv = false;
  c.instruments = {"z"};
  CHECK_THROWS(c.check());
}

TEST_CASE("estimate matches the library fit") {
  TempDir dir;
  DgpConfig d;
  d.n_units = 60;
  d.n_cells = 6;
  const auto table = generate(d);
  {
    std::ofstream cfg(dir.file("dgp.json"));
    cfg << d.to_json_text();
  }
  REQUIRE(cli({"simulate", "--config", dir.file("dgp.json"), "--data-out", dir.file("d.csv"), "--data-only"}).code == 0);
  const auto r = cli({"estimate", "--input", dir.file("d.csv"), "--dependent", "y", "--regressors", "x", "--estimator",
                      "within", "--dummies", "wave"});
  REQUIRE(r.code == 0);
  ModelSpec s;
  s.dependent = "y";
  s.regressors = {"x"};
  s.dummy_groups = {kWaveDummies};
  const FitResult lib = within_fit(s, table);
  const FitResult got = fit_from_json(r.out);
  CHECK(got.coefficient("x") == round12(lib.coefficient("x")));
  CHECK(got.std_error("x") == doctest::Approx(lib.std_error("x")).epsilon(1e-10));
}

TEST_CASE("group writes a pseudo panel and a cell report") {
  TempDir dir;
  {
    std::ofstream f(dir.file("h.csv"));
    f << "unit,wave,age,edu,lnx,w\n";
    for (int i = 0; i < 40; ++i)
      for (int t = 1; t <= 2; ++t) f << "h" << i << ',' << t << ',' << 25 + i << ",hs," << 1 + 0.01 * i + 0.1 * t * (i % 3) << "," << 0.3 + 0.01 * (i % 5) << "\n";
  }
  {
    std::ofstream s(dir.file("s.json"));
    s << R"({"lnx": "log_outlay", "w": "share"})";
  }
  const auto r = cli({"group", "--input", dir.file("h.csv"), "--schema", dir.file("s.json"), "--min-cell", "1",
                      "--out", dir.file("p.csv"), "--report", dir.file("r.json")});
  REQUIRE(r.code == 0);
  std::ifstream p(dir.file("p.csv"));
  std::string header;
  std::getline(p, header);
  CHECK(header.rfind("key,wave,size,delta,delta_bar", 0) == 0);
  CHECK(fs::exists(dir.file("r.json")));
  const auto e = cli({"estimate", "--input", dir.file("p.csv"), "--dependent", "w", "--regressors", "lnx",
                      "--estimator", "within", "--correction", "approx"});
  CHECK(e.code == 0);
}

TEST_CASE("simulate output is deterministic") {
  const auto a = cli({"simulate", "--reps", "4", "--seed", "7"});
  const auto b = cli({"simulate", "--reps", "4", "--seed", "7"});
  const auto c = cli({"simulate", "--reps", "4", "--seed", "8"});
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out != c.out);
}
