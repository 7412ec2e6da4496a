#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ppanel/cli.hpp"
#include "ppanel/demand.hpp"
#include "ppanel/diagnostics.hpp"
#include "ppanel/error.hpp"
#include "ppanel/estimators.hpp"
#include "ppanel/iv.hpp"
#include "ppanel/mc.hpp"
#include "ppanel/regress.hpp"

namespace py = pybind11;
using namespace ppanel;

namespace {

PanelTable make_table(const std::vector<std::string>& units, const std::vector<int>& waves,
                      const std::map<std::string, std::vector<double>>& columns) {
  PanelTable t(units, waves);
  for (const auto& [name, values] : columns) {
    if (values.size() != units.size()) throw Error(ErrorCode::ConfigInvalid, "column '" + name + "' has the wrong length");
    t.add_column(name, values);
  }
  return t;
}

}  // namespace

PYBIND11_MODULE(_ppanel, m) {
  m.doc() = "Pseudo-panel and panel demand-system estimators";

  static py::exception<Error> error(m, "PpanelError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def(
      "estimate",
      [](const std::string& estimator, const std::vector<std::string>& units, const std::vector<int>& waves,
         const std::map<std::string, std::vector<double>>& columns, const std::string& dependent,
         const std::vector<std::string>& regressors, bool wave_dummies, bool intercept, const std::string& correction,
         const std::string& delta_column, const std::vector<std::string>& instruments, const std::string& target) {
        const PanelTable t = make_table(units, waves, columns);
        ModelSpec spec;
        spec.dependent = dependent;
        spec.regressors = regressors;
        spec.intercept = intercept;
        if (wave_dummies) spec.dummy_groups = {kWaveDummies};
        PanelOptions o;
        o.correction = parse_correction(correction);
        o.delta_column = delta_column;
        std::optional<InstrumentSet> iv;
        if (!instruments.empty()) iv = InstrumentSet{target.empty() ? regressors.front() : target, instruments};
        return fit_to_json(estimate_by_name(estimator, spec, t, o, iv));
      },
      py::arg("estimator"), py::arg("units"), py::arg("waves"), py::arg("columns"), py::arg("dependent"),
      py::arg("regressors"), py::arg("wave_dummies") = false, py::arg("intercept") = true,
      py::arg("correction") = "none", py::arg("delta_column") = "delta",
      py::arg("instruments") = std::vector<std::string>{}, py::arg("target") = "",
      "Fit one estimator; returns the fit as JSON text.");

  m.def(
      "hausman",
      [](const std::string& fit_a, const std::string& fit_b, const std::vector<std::string>& subset, bool naive) {
        return hausman_to_json(hausman(fit_from_json(fit_a), fit_from_json(fit_b), subset, naive));
      },
      py::arg("fit_a"), py::arg("fit_b"), py::arg("subset") = std::vector<std::string>{}, py::arg("naive") = false);

  m.def(
      "shadow_price",
      [](double e_cs, double e_ts, std::optional<double> gamma) {
        const auto r = shadow_price_elasticity(e_cs, e_ts, gamma);
        return py::dict(py::arg("gamma_ii") = r.gamma_ii, py::arg("shadow_income_elasticity") = r.shadow_income_elasticity,
                        py::arg("gamma_from_frisch") = r.gamma_from_frisch);
      },
      py::arg("e_cs"), py::arg("e_ts"), py::arg("gamma") = std::nullopt);

  m.def("expenditure_elasticity", py::overload_cast<double, double, double, double, bool, double>(&expenditure_elasticity),
        py::arg("b"), py::arg("c"), py::arg("wbar"), py::arg("ln_y"), py::arg("quadratic"), py::arg("e_p") = 1.0);

  m.def(
      "simulate",
      [](const std::string& config_json) { return run_study(StudyConfig::from_json_text(config_json)).to_json(); },
      py::arg("config_json"), "Run a Monte Carlo study from a JSON configuration; returns JSON text.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command-line front end; returns (exit code, stdout, stderr).");
}
