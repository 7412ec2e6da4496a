#include "ppanel/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ppanel/data.hpp"
#include "ppanel/demand.hpp"
#include "ppanel/diagnostics.hpp"
#include "ppanel/error.hpp"
#include "ppanel/estimators.hpp"
#include "ppanel/iv.hpp"
#include "ppanel/mc.hpp"
#include "ppanel/pseudo.hpp"
#include "ppanel/regress.hpp"

namespace ppanel {

namespace {

using json = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_output(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::ConfigInvalid, "cannot write '" + path + "'");
  f << content;
}

std::string with_newline(std::string s) {
  if (s.empty() || s.back() != '\n') s.push_back('\n');
  return s;
}

CovarianceKind parse_covariance(const std::string& s) {
  if (s == "homo" || s == "homoscedastic") return CovarianceKind::homoscedastic;
  if (s == "white" || s == "hc1") return CovarianceKind::white;
  if (s == "cluster") return CovarianceKind::cluster;
  throw Error(ErrorCode::ConfigInvalid, "unknown covariance '" + s + "' (homo|white|cluster)");
}

FdCovariance parse_fd_covariance(const std::string& s) {
  if (s == "sur") return FdCovariance::sur;
  if (s == "cluster") return FdCovariance::cluster;
  throw Error(ErrorCode::ConfigInvalid, "unknown first-difference covariance '" + s + "' (sur|cluster)");
}

SquareRule parse_square_rule(const std::string& s) {
  if (s == "fitted") return SquareRule::fitted_square;
  if (s == "separate") return SquareRule::separate;
  throw Error(ErrorCode::ConfigInvalid, "unknown square rule '" + s + "' (fitted|separate)");
}

/// Pseudo-panel exports start with "key,wave"; anything else goes through the role schema.
PanelTable read_input(const RunConfig& c) {
  if (c.input.empty()) throw Error(ErrorCode::ConfigInvalid, "--input is required");
  if (!c.schema.empty()) return load_csv(c.input, RoleSchema::from_json_text(read_file(c.schema)));
  std::ifstream in(c.input);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read '" + c.input + "'");
  std::string header;
  std::getline(in, header);
  if (header.rfind("key,wave,", 0) == 0) {
    in.clear();
    in.seekg(0);
    return read_pseudo_csv(in);
  }
  return load_csv(c.input, RoleSchema{});
}

ModelSpec model_of(const RunConfig& c) {
  ModelSpec s;
  s.dependent = c.dependent;
  s.regressors = c.regressors;
  s.dummy_groups = c.dummies;
  s.intercept = !c.no_intercept;
  return s;
}

PanelOptions panel_options_of(const RunConfig& c) {
  PanelOptions o;
  o.correction = parse_correction(c.correction);
  o.delta_column = c.delta_column;
  o.within_mode = parse_within_mode(c.within_mode);
  o.fd_covariance = parse_fd_covariance(c.fd_covariance);
  o.covariance = parse_covariance(c.covariance);
  return o;
}

InstrumentSet instruments_of(const RunConfig& c) {
  return {c.target.empty() ? c.regressors.front() : c.target, c.instruments};
}

IvOptions iv_options_of(const RunConfig& c) {
  IvOptions iv;
  if (!c.square.empty()) iv.square = c.square;
  iv.square_rule = parse_square_rule(c.square_rule);
  return iv;
}

void add_model_options(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--input", c.input, "data CSV (long format) or pseudo-panel CSV")->required();
  cmd->add_option("--schema", c.schema, "role schema JSON");
  cmd->add_option("--dependent", c.dependent, "dependent column")->required();
  cmd->add_option("--regressors", c.regressors, "regressor columns")->delimiter(',')->required();
  cmd->add_option("--dummies", c.dummies, "dummy groups ('wave' or a column)")->delimiter(',');
  cmd->add_flag("--no-intercept", c.no_intercept);
  cmd->add_option("--covariance", c.covariance, "homo|white|cluster");
}

std::string elasticity_json(const FitResult& fit, const ModelSpec& spec, const std::string& target,
                            const std::string& square) {
  const bool quadratic = !square.empty();
  const double wbar = fit.means.at(spec.dependent);
  const double ln_y = fit.means.at(target);
  const double b = fit.coefficient(target);
  const double c = quadratic ? fit.coefficient(square) : 0.0;
  json j;
  j["dependent"] = spec.dependent;
  j["target"] = target;
  j["quadratic"] = quadratic;
  j["wbar"] = round12(wbar);
  j["ln_y"] = round12(ln_y);
  j["elasticity"] = round12(expenditure_elasticity(b, c, wbar, ln_y, quadratic));
  return j.dump(2);
}

// ---------------------------------------------------------------- commands

struct Globals {
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::string out;
  bool quiet = false;
};

struct GroupArgs {
  std::string input, schema, scheme, report;
  std::optional<int> split;
  std::string weighting = "income";
  std::string design = "all";
  std::size_t min_cell = 30;
  std::size_t threshold = 100;
  bool balanced = false;
};

int cmd_group(const GroupArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const RoleSchema schema = a.schema.empty() ? RoleSchema{} : RoleSchema::from_json_text(read_file(a.schema));
  const PanelTable table = load_csv(a.input, schema);
  CohortScheme scheme = a.scheme.empty() ? CohortScheme{} : CohortScheme::from_json_text(read_file(a.scheme));
  if (a.split) scheme.split_k = *a.split;
  const PanelTable keyed = assign_cohorts(table, scheme, g.seed);
  AggregateOptions o;
  if (a.weighting == "income") o.weighting = Weighting::income_share;
  else if (a.weighting == "equal") o.weighting = Weighting::equal;
  else throw Error(ErrorCode::ConfigInvalid, "unknown weighting '" + a.weighting + "' (income|equal)");
  if (a.design == "all") o.design = SampleDesign::all_units;
  else if (a.design == "rotating") o.design = SampleDesign::rotating_subsamples;
  else throw Error(ErrorCode::ConfigInvalid, "unknown design '" + a.design + "' (all|rotating)");
  o.min_cell_size = a.min_cell;
  o.require_balanced = a.balanced;
  const PseudoPanel pp = aggregate(keyed, o);
  std::ostringstream csv;
  write_pseudo_csv(pp, csv);
  write_output(g.out, csv.str(), out);
  const std::string report = with_newline(cell_report_json(cell_report(pp, a.threshold)));
  if (!a.report.empty()) write_output(a.report, report, out);
  else if (!g.out.empty()) write_output(g.out + ".cells.json", report, out);
  else if (!g.quiet) err << report;
  return exit_ok;
}

struct EstimateArgs {
  RunConfig run;
  std::string elasticity;
};

int cmd_estimate(EstimateArgs a, const Globals& g, std::ostream& out, std::ostream& err) {
  a.run.seed = g.seed;
  a.run.check();
  const PanelTable table = read_input(a.run);
  const ModelSpec spec = model_of(a.run);
  const PanelOptions options = panel_options_of(a.run);
  const IvOptions iv = iv_options_of(a.run);
  const std::string target = instruments_of(a.run).target;

  if (a.run.all) {
    json grid = json::array();
    for (const std::string est : {"between", "within", "fd", "cs"})
      for (bool with_iv : {false, true}) {
        json cell;
        cell["estimator"] = est;
        cell["iv"] = with_iv;
        try {
          const FitResult fit = estimate_by_name(
              est, spec, table, options,
              with_iv ? std::optional<InstrumentSet>(instruments_of(a.run)) : std::nullopt, iv);
          cell["status"] = "ok";
          cell[target] = round12(fit.coefficient(target));
          cell["se"] = round12(fit.std_error(target));
          cell["fit"] = json::parse(fit_to_json(fit));
        } catch (const Error& e) {
          cell["status"] = "error";
          cell["error"] = e.what();
        }
        grid.push_back(cell);
      }
    json j;
    j["target"] = target;
    j["correction"] = a.run.correction;
    j["grid"] = grid;
    write_output(g.out, with_newline(j.dump(2)), out);
    return exit_ok;
  }

  const FitResult fit =
      estimate_by_name(a.run.estimator, spec, table, options,
                       a.run.iv ? std::optional<InstrumentSet>(instruments_of(a.run)) : std::nullopt, iv);
  write_output(g.out, with_newline(fit_to_json(fit)), out);
  if (!a.elasticity.empty())
    write_output(a.elasticity, with_newline(elasticity_json(fit, spec, target, a.run.square)), out);
  if (!g.quiet)
    for (const auto& n : fit.notes) err << "note: " << n << '\n';
  return exit_ok;
}

struct SimulateArgs {
  std::string config, json_out, data_out;
  std::optional<int> reps;
  std::vector<std::string> estimators, levels, corrections;
  bool with_iv = false;
  bool data_only = false;
};

int cmd_simulate(const SimulateArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  StudyConfig c = a.config.empty() ? StudyConfig{} : StudyConfig::from_json_text(read_file(a.config));
  if (g.seed_given || a.config.empty()) c.dgp.seed = g.seed;
  if (a.reps) c.reps = *a.reps;
  if (!a.estimators.empty()) c.estimators = a.estimators;
  if (!a.levels.empty()) c.levels = a.levels;
  if (!a.corrections.empty()) {
    c.corrections.clear();
    for (const auto& s : a.corrections) c.corrections.push_back(parse_correction(s));
  }
  if (a.with_iv) c.iv = {false, true};
  c.check();
  if (!a.data_out.empty()) {
    std::ostringstream csv;
    write_csv(generate(c.dgp), csv);
    write_output(a.data_out, csv.str(), out);
  }
  if (a.data_only) return exit_ok;
  const McReport report = run_study(c);
  write_output(g.out, report.to_csv(), out);
  if (!a.json_out.empty()) write_output(a.json_out, with_newline(report.to_json()), out);
  return exit_ok;
}

struct HausmanArgs {
  std::string fit_a, fit_b;
  std::vector<std::string> subset;
  bool naive = false;
};

int cmd_hausman(const HausmanArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  const FitResult fa = fit_from_json(read_file(a.fit_a));
  const FitResult fb = fit_from_json(read_file(a.fit_b));
  write_output(g.out, with_newline(hausman_to_json(hausman(fa, fb, a.subset, a.naive))), out);
  return exit_ok;
}

struct ShadowArgs {
  std::optional<double> cs, ts, gamma;
  bool frisch = false;
  bool table4 = false;
  std::string good;
};

int cmd_shadow_price(const ShadowArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  std::vector<ShadowPriceResult> rows;
  if (a.table4) {
    if (a.cs || a.ts || a.gamma) throw Error(ErrorCode::ConfigInvalid, "--table4 takes no elasticity inputs");
    const struct {
      const char* good;
      double cs, ts;
    } inputs[] = {{"us_food_home", 0.19, 0.38},
                  {"us_food_away", 1.00, 0.39},
                  {"pl_food_home", 0.49, 0.76},
                  {"pl_food_away", 1.22, 0.36}};
    for (const auto& in : inputs) rows.push_back(shadow_price_elasticity(in.cs, in.ts, std::nullopt, in.good));
  } else {
    if (!a.cs || !a.ts) throw Error(ErrorCode::ConfigInvalid, "--cs and --ts are required");
    if (a.gamma && a.frisch) throw Error(ErrorCode::ConfigInvalid, "give either --gamma or --frisch");
    rows.push_back(shadow_price_elasticity(*a.cs, *a.ts, a.gamma, a.good));
  }
  write_output(g.out, with_newline(shadow_price_json(rows)), out);
  return exit_ok;
}

struct ElasticityArgs {
  std::string fit;
  std::string slope = kLnY;
  std::string square;
  std::string share_column;
  std::optional<double> share, ln_y;
  double e_p = 1.0;
};

int cmd_elasticity(const ElasticityArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  const FitResult fit = fit_from_json(read_file(a.fit));
  const bool quadratic = !a.square.empty();
  auto mean_of = [&](const std::string& name) {
    auto it = fit.means.find(name);
    if (it == fit.means.end())
      throw Error(ErrorCode::ConfigInvalid, "fit has no sample mean for '" + name + "'; pass it explicitly");
    return it->second;
  };
  double wbar;
  if (a.share) wbar = *a.share;
  else if (!a.share_column.empty()) wbar = mean_of(a.share_column);
  else {
    // the dependent is the only mean that is not a coefficient name
    std::string dep;
    for (const auto& [k, v] : fit.means)
      if (!fit.has(k)) dep = k;
    if (dep.empty()) throw Error(ErrorCode::ConfigInvalid, "cannot tell the share column; pass --share-column");
    wbar = mean_of(dep);
  }
  const double ln_y = a.ln_y ? *a.ln_y : mean_of(a.slope);
  const double c = quadratic ? fit.coefficient(a.square) : 0.0;
  json j;
  j["slope"] = a.slope;
  j["quadratic"] = quadratic;
  j["wbar"] = round12(wbar);
  j["ln_y"] = round12(ln_y);
  j["e_p"] = round12(a.e_p);
  j["elasticity"] = round12(expenditure_elasticity(fit.coefficient(a.slope), c, wbar, ln_y, quadratic, a.e_p));
  write_output(g.out, with_newline(j.dump(2)), out);
  return exit_ok;
}

struct FilterArgs {
  RunConfig run;
  std::optional<double> threshold;
  bool threshold_auto = false;
  std::vector<std::string> subset;
  std::string flags;
  bool het = false;
};

int cmd_filter(FilterArgs a, const Globals& g, std::ostream& out, std::ostream&) {
  if (a.threshold && a.threshold_auto) throw Error(ErrorCode::ConfigInvalid, "give either --threshold or --threshold-auto");
  const PanelTable table = read_input(a.run);
  const ModelSpec spec = model_of(a.run);
  const DfbetasResult r = dfbetas_filter(spec, table, a.subset, a.threshold);
  const RoleSchema schema = a.run.schema.empty() ? RoleSchema{} : RoleSchema::from_json_text(read_file(a.run.schema));
  std::ostringstream csv;
  write_csv(drop_flagged(table, r), csv, schema);
  write_output(g.out, csv.str(), out);
  if (!a.flags.empty()) {
    json j;
    j["threshold"] = round12(r.threshold);
    j["n"] = r.fit.n_used;
    j["n_flagged"] = r.flagged.size();
    j["share_flagged"] = round12(static_cast<double>(r.flagged.size()) / static_cast<double>(r.fit.n_used));
    json rows = json::array();
    for (auto row : r.flagged) rows.push_back({{"unit", table.unit_ids()[row]}, {"wave", table.waves()[row]}});
    j["flagged"] = rows;
    if (a.het) {
      const HetTestResult h = het_test_and_reweight(r.fit, spec, table);
      json hj;
      hj["statistic"] = round12(h.statistic);
      hj["dof"] = h.dof;
      hj["p_value"] = round12(h.p_value);
      hj["rejected"] = h.rejected;
      hj["reweighted"] = json::parse(fit_to_json(h.reweighted));
      j["het_test"] = hj;
    }
    write_output(a.flags, with_newline(j.dump(2)), out);
  }
  return exit_ok;
}

}  // namespace

void RunConfig::check() const {
  if (!is_estimator_name(estimator))
    throw Error(ErrorCode::ConfigInvalid, "unknown estimator '" + estimator + "' (ols|between|within|fd|cs)");
  (void)parse_correction(correction);
  (void)parse_within_mode(within_mode);
  (void)parse_fd_covariance(fd_covariance);
  (void)parse_covariance(covariance);
  (void)parse_square_rule(square_rule);
  if (regressors.empty()) throw Error(ErrorCode::ConfigInvalid, "--regressors is required");
  if ((iv || all) && instruments.empty())
    throw Error(ErrorCode::ConfigInvalid, std::string(all ? "--all" : "--iv") + " needs --instruments");
  if (!iv && !all && (!instruments.empty() || !target.empty()))
    throw Error(ErrorCode::ConfigInvalid, "--instruments and --target need --iv");
  if (!target.empty() && std::find(regressors.begin(), regressors.end(), target) == regressors.end())
    throw Error(ErrorCode::ConfigInvalid, "--target must be one of the regressors");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudo-panel and panel demand-system estimation", "ppanel"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed = app.add_option("--seed", g.seed, "seed for sub-sampling and simulation");
  app.add_option("--out", g.out, "main output file (stdout when absent)");
  app.add_flag("--quiet", g.quiet, "suppress notes on stderr");

  GroupArgs group;
  auto* c_group = app.add_subcommand("group", "build a pseudo-panel of cohort cells");
  c_group->add_option("--input", group.input)->required();
  c_group->add_option("--schema", group.schema);
  c_group->add_option("--scheme", group.scheme, "cohort scheme JSON");
  c_group->add_option("--split", group.split, "rotating sub-samples per cohort");
  c_group->add_option("--weighting", group.weighting, "income|equal");
  c_group->add_option("--design", group.design, "all|rotating");
  c_group->add_option("--min-cell", group.min_cell);
  c_group->add_option("--threshold", group.threshold, "cell size reported as small");
  c_group->add_option("--report", group.report, "cell report JSON");
  c_group->add_flag("--balanced", group.balanced);

  EstimateArgs est;
  auto* c_est = app.add_subcommand("estimate", "fit one estimator or the full grid");
  add_model_options(c_est, est.run);
  c_est->add_option("--estimator", est.run.estimator, "ols|between|within|fd|cs");
  c_est->add_option("--correction", est.run.correction, "none|approx|exact|false");
  c_est->add_option("--within-mode", est.run.within_mode, "demean|system");
  c_est->add_option("--fd-covariance", est.run.fd_covariance, "sur|cluster");
  c_est->add_option("--delta-column", est.run.delta_column);
  c_est->add_flag("--iv", est.run.iv);
  c_est->add_option("--instruments", est.run.instruments)->delimiter(',');
  c_est->add_option("--target", est.run.target, "endogenous regressor (default: first regressor)");
  c_est->add_option("--square", est.run.square, "regressor holding the squared target");
  c_est->add_option("--square-rule", est.run.square_rule, "fitted|separate");
  c_est->add_flag("--all", est.run.all, "between/within/fd/cs with and without instruments");
  c_est->add_option("--elasticity", est.elasticity, "write the income elasticity JSON here");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Monte Carlo study");
  c_sim->add_option("--config", sim.config, "study JSON");
  c_sim->add_option("--reps", sim.reps);
  c_sim->add_option("--estimators", sim.estimators)->delimiter(',');
  c_sim->add_option("--levels", sim.levels)->delimiter(',');
  c_sim->add_option("--corrections", sim.corrections)->delimiter(',');
  c_sim->add_flag("--with-iv", sim.with_iv);
  c_sim->add_option("--json", sim.json_out, "summary JSON");
  c_sim->add_option("--data-out", sim.data_out, "CSV of one simulated panel");
  c_sim->add_flag("--data-only", sim.data_only);

  HausmanArgs hz;
  auto* c_hz = app.add_subcommand("hausman", "between/within specification test");
  c_hz->add_option("--fit-a", hz.fit_a)->required();
  c_hz->add_option("--fit-b", hz.fit_b)->required();
  c_hz->add_option("--subset", hz.subset)->delimiter(',');
  c_hz->add_flag("--naive", hz.naive, "variance of the tested block only (biased)");

  ShadowArgs sp;
  auto* c_sp = app.add_subcommand("shadow-price", "income elasticity of the shadow price");
  c_sp->add_option("--cs", sp.cs);
  c_sp->add_option("--ts", sp.ts);
  c_sp->add_option("--gamma", sp.gamma);
  c_sp->add_flag("--frisch", sp.frisch, "gamma = -0.5 * ts (default)");
  c_sp->add_flag("--table4", sp.table4, "the four published input pairs");
  c_sp->add_option("--good", sp.good);

  ElasticityArgs el;
  auto* c_el = app.add_subcommand("elasticity", "expenditure elasticity from a fit");
  c_el->add_option("--fit", el.fit)->required();
  c_el->add_option("--slope", el.slope, "coefficient on log outlay");
  c_el->add_option("--square", el.square, "coefficient on the squared term");
  c_el->add_option("--share-column", el.share_column);
  c_el->add_option("--share", el.share, "evaluation share");
  c_el->add_option("--ln-y", el.ln_y, "evaluation log outlay");
  c_el->add_flag("--at-means", "evaluate at sample means (default)");
  c_el->add_option("--e-p", el.e_p);

  FilterArgs fl;
  auto* c_fl = app.add_subcommand("filter", "DFBETAS outlier filter");
  add_model_options(c_fl, fl.run);
  c_fl->add_option("--threshold", fl.threshold);
  c_fl->add_flag("--threshold-auto", fl.threshold_auto, "2 / sqrt(n) (default)");
  c_fl->add_option("--subset", fl.subset)->delimiter(',');
  c_fl->add_option("--flags", fl.flags, "flagged rows JSON");
  c_fl->add_flag("--het", fl.het, "heteroscedasticity test and reweighting in the flags JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_config;
  }
  g.seed_given = seed->count() > 0;

  try {
    if (c_group->parsed()) return cmd_group(group, g, out, err);
    if (c_est->parsed()) return cmd_estimate(est, g, out, err);
    if (c_sim->parsed()) return cmd_simulate(sim, g, out, err);
    if (c_hz->parsed()) return cmd_hausman(hz, g, out, err);
    if (c_sp->parsed()) return cmd_shadow_price(sp, g, out, err);
    if (c_el->parsed()) return cmd_elasticity(el, g, out, err);
    if (c_fl->parsed()) return cmd_filter(fl, g, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_numerical(e.code()) ? exit_numerical : exit_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  }
  return exit_config;
}

}  // namespace ppanel
