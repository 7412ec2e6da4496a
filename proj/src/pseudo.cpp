#include "ppanel/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ppanel/error.hpp"

namespace ppanel {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

int integral_age(double value, std::size_t row) {
  if (std::isnan(value) || std::floor(value) != value)
    throw Error(ErrorCode::UncoveredAge, "age in row " + std::to_string(row + 1) + " is not an integer year");
  return static_cast<int>(value);
}

}  // namespace

std::vector<AgeBand> CohortScheme::default_age_bands() {
  return {{std::nullopt, 30, "<30"}, {30, 40, "30-39"}, {40, 50, "40-49"},
          {50, 60, "50-59"},         {60, 70, "60-69"}, {70, std::nullopt, ">=70"}};
}

void CohortScheme::check() const {
  if (age_bands.empty()) throw Error(ErrorCode::ConfigInvalid, "cohort scheme needs at least one age band");
  for (std::size_t i = 0; i < age_bands.size(); ++i) {
    const auto& a = age_bands[i];
    if (a.lo && a.hi && *a.lo >= *a.hi)
      throw Error(ErrorCode::ConfigInvalid, "age band '" + a.label + "' is empty");
    for (std::size_t j = i + 1; j < age_bands.size(); ++j) {
      const auto& b = age_bands[j];
      // overlap of [a.lo, a.hi) and [b.lo, b.hi)
      const bool a_before_b = a.hi && b.lo && *a.hi <= *b.lo;
      const bool b_before_a = b.hi && a.lo && *b.hi <= *a.lo;
      if (!a_before_b && !b_before_a)
        throw Error(ErrorCode::ConfigInvalid, "age bands '" + a.label + "' and '" + b.label + "' overlap");
    }
  }
  if (split_k && *split_k < 1) throw Error(ErrorCode::ConfigInvalid, "split count must be positive");
}

CohortScheme CohortScheme::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("cohort scheme is not valid JSON: ") + e.what());
  }
  CohortScheme scheme;
  try {
    if (j.contains("age_bands")) {
      scheme.age_bands.clear();
      for (const auto& band : j.at("age_bands")) {
        AgeBand b;
        if (!band.at("lo").is_null()) b.lo = band.at("lo").get<int>();
        if (!band.at("hi").is_null()) b.hi = band.at("hi").get<int>();
        b.label = band.value("label", std::string());
        if (b.label.empty())
          b.label = (b.lo ? std::to_string(*b.lo) : std::string()) + "-" + (b.hi ? std::to_string(*b.hi - 1) : "");
        scheme.age_bands.push_back(std::move(b));
      }
    }
    if (j.contains("edu_levels")) {
      for (const auto& level : j.at("edu_levels")) {
        EduLevel e;
        e.label = level.at("label").get<std::string>();
        for (const auto& v : level.at("values")) e.values.insert(v.is_string() ? v.get<std::string>() : v.dump());
        scheme.edu_levels.push_back(std::move(e));
      }
    }
    if (j.contains("split_k") && !j.at("split_k").is_null()) scheme.split_k = j.at("split_k").get<int>();
    scheme.age_column = j.value("age_column", scheme.age_column);
    scheme.edu_column = j.value("edu_column", scheme.edu_column);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("cohort scheme: ") + e.what());
  }
  scheme.check();
  return scheme;
}

int subsample_of(const std::string& unit_id, std::uint64_t seed, int k) {
  const std::uint64_t h = fnv1a(unit_id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 gen(seq);
  return static_cast<int>(gen() % static_cast<std::uint64_t>(k));
}

PanelTable assign_cohorts(const PanelTable& table, const CohortScheme& scheme, std::uint64_t seed) {
  scheme.check();
  const auto& ages = table.column(scheme.age_column);
  if (!table.has_column(scheme.edu_column))
    throw Error(ErrorCode::MissingColumn, "education column '" + scheme.edu_column + "'");

  // first observed row per unit
  std::map<std::string, std::size_t> first_row;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    auto [it, inserted] = first_row.emplace(table.unit_ids()[i], i);
    if (!inserted && table.waves()[i] < table.waves()[it->second]) it->second = i;
  }
  std::map<std::string, std::string> key_of;
  for (const auto& [unit, row] : first_row) {
    const int age = integral_age(ages[row], row);
    auto band = std::find_if(scheme.age_bands.begin(), scheme.age_bands.end(),
                             [&](const AgeBand& b) { return b.contains(age); });
    if (band == scheme.age_bands.end())
      throw Error(ErrorCode::UncoveredAge,
                  "age " + std::to_string(age) + " of unit " + unit + " falls in no age band");
    const std::string edu = table.label(scheme.edu_column, row);
    std::string edu_label = edu;
    if (!scheme.edu_levels.empty()) {
      auto level = std::find_if(scheme.edu_levels.begin(), scheme.edu_levels.end(),
                                [&](const EduLevel& l) { return l.values.count(edu) > 0; });
      if (level == scheme.edu_levels.end())
        throw Error(ErrorCode::ConfigInvalid, "education value '" + edu + "' of unit " + unit + " is in no level");
      edu_label = level->label;
    }
    key_of[unit] = band->label + "|" + edu_label;
  }

  std::vector<std::string> keys(table.rows());
  for (std::size_t i = 0; i < table.rows(); ++i) keys[i] = key_of.at(table.unit_ids()[i]);
  PanelTable out = table;
  out.add_text_column(kCohortColumn, std::move(keys), VariableRole::cohort_key);
  if (scheme.split_k) {
    std::vector<double> sub(table.rows());
    for (std::size_t i = 0; i < table.rows(); ++i)
      sub[i] = subsample_of(table.unit_ids()[i], seed, *scheme.split_k);
    out.add_column(kSubsampleColumn, std::move(sub));
  }
  return out;
}

std::size_t PseudoPanel::size(const std::string& key, int wave) const {
  for (const auto& c : cells)
    if (c.key == key && c.wave == wave) return c.members.size();
  return 0;
}

PanelTable PseudoPanel::to_table() const {
  std::vector<std::string> units;
  std::vector<int> waves_col;
  for (const auto& c : cells) {
    units.push_back(c.key);
    waves_col.push_back(c.wave);
  }
  PanelTable t(std::move(units), std::move(waves_col));
  for (const auto& v : variables) {
    std::vector<double> col;
    col.reserve(cells.size());
    for (const auto& c : cells) col.push_back(c.aggregates.at(v));
    std::optional<VariableRole> r;
    if (auto it = roles.find(v); it != roles.end()) r = it->second;
    t.add_column(v, std::move(col), r);
  }
  std::vector<double> size, delta, dbar;
  for (const auto& c : cells) {
    size.push_back(static_cast<double>(c.members.size()));
    delta.push_back(c.delta);
    dbar.push_back(delta_bar.at(c.key));
  }
  t.add_column("size", std::move(size));
  t.add_column("delta", std::move(delta));
  t.add_column("delta_bar", std::move(dbar));
  return t;
}

PseudoPanel aggregate(const PanelTable& table, const AggregateOptions& options) {
  if (!table.has_column(kCohortColumn))
    throw Error(ErrorCode::MissingColumn, "cohort_key column missing; run assign_cohorts first");
  const auto& keys = table.is_text(kCohortColumn) ? table.text_column(kCohortColumn) : std::vector<std::string>{};
  if (keys.empty() && table.rows() > 0)
    throw Error(ErrorCode::ConfigInvalid, "cohort_key column must hold text labels");

  const auto all_waves = table.distinct_waves();
  std::map<int, int> wave_rank;
  for (std::size_t i = 0; i < all_waves.size(); ++i) wave_rank[all_waves[i]] = static_cast<int>(i);

  std::vector<double> outlay;
  if (options.weighting == Weighting::income_share) {
    if (options.outlay_column) {
      outlay = table.column(*options.outlay_column);
    } else {
      auto logs = table.columns_with_role(VariableRole::log_outlay);
      if (logs.empty())
        throw Error(ErrorCode::ConfigInvalid, "income-share weighting needs an outlay or log_outlay column");
      const auto& lv = table.column(logs.front());
      outlay.resize(lv.size());
      std::transform(lv.begin(), lv.end(), outlay.begin(), [](double v) { return std::exp(v); });
    }
  }

  const std::vector<double>* subsample = nullptr;
  int k = 0;
  if (options.design == SampleDesign::rotating_subsamples) {
    if (!table.has_column(kSubsampleColumn))
      throw Error(ErrorCode::ConfigInvalid, "rotating sub-samples need a split_k cohort scheme");
    subsample = &table.column(kSubsampleColumn);
    k = static_cast<int>(*std::max_element(subsample->begin(), subsample->end())) + 1;
  }

  PseudoPanel pp;
  for (const auto& name : table.column_names()) {
    if (table.is_text(name) || name == kSubsampleColumn) continue;
    pp.variables.push_back(name);
    if (auto r = table.role(name)) pp.roles[name] = *r;
  }

  // group rows by (key, wave); members ordered by unit id
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const int w = table.waves()[i];
    if (subsample && static_cast<int>((*subsample)[i]) != wave_rank.at(w) % k) continue;
    groups[{keys[i], w}].push_back(i);
  }
  for (auto& [kw, rows] : groups) {
    std::sort(rows.begin(), rows.end(),
              [&](std::size_t a, std::size_t b) { return table.unit_ids()[a] < table.unit_ids()[b]; });
    Cell cell;
    cell.key = kw.first;
    cell.wave = kw.second;
    const std::size_t n = rows.size();
    cell.gamma.resize(n);
    if (options.weighting == Weighting::income_share) {
      double total = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        const double y = outlay[rows[m]];
        if (!(y > 0.0) || !std::isfinite(y))
          throw Error(ErrorCode::ConfigInvalid, "non-positive or missing outlay for unit " +
                                                    table.unit_ids()[rows[m]] + " in wave " +
                                                    std::to_string(kw.second));
        total += y;
      }
      for (std::size_t m = 0; m < n; ++m) cell.gamma[m] = outlay[rows[m]] / total;
    } else {
      std::fill(cell.gamma.begin(), cell.gamma.end(), 1.0 / static_cast<double>(n));
    }
    for (std::size_t m = 0; m < n; ++m) {
      cell.members.push_back(table.unit_ids()[rows[m]]);
      cell.delta += cell.gamma[m] * cell.gamma[m];
    }
    for (const auto& v : pp.variables) {
      const auto& col = table.column(v);
      double num = 0.0, wsum = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        const double x = col[rows[m]];
        if (std::isnan(x)) continue;
        num += cell.gamma[m] * x;
        wsum += cell.gamma[m];
      }
      cell.aggregates[v] = wsum > 0.0 ? num / wsum : std::numeric_limits<double>::quiet_NaN();
    }
    cell.small = n < options.min_cell_size;
    pp.cells.push_back(std::move(cell));
  }

  std::map<std::string, std::pair<double, int>> acc;
  std::map<std::string, std::set<int>> seen;
  for (const auto& c : pp.cells) {
    acc[c.key].first += c.delta;
    acc[c.key].second += 1;
    seen[c.key].insert(c.wave);
  }
  std::set<int> used_waves;
  for (const auto& c : pp.cells) used_waves.insert(c.wave);
  pp.waves.assign(used_waves.begin(), used_waves.end());
  for (const auto& [key, sum_count] : acc) pp.delta_bar[key] = sum_count.first / sum_count.second;
  pp.balanced = std::all_of(seen.begin(), seen.end(),
                            [&](const auto& kv) { return kv.second.size() == pp.waves.size(); });
  if (options.require_balanced && !pp.balanced) {
    for (const auto& [key, w] : seen)
      for (int wave : pp.waves)
        if (!w.count(wave))
          throw Error(ErrorCode::EmptyCell, "cell " + key + " has no members in wave " + std::to_string(wave));
  }
  return pp;
}

void write_pseudo_csv(const PseudoPanel& pp, std::ostream& out) {
  out << "key,wave,size,delta,delta_bar";
  for (const auto& v : pp.variables) out << ',' << v;
  out << '\n';
  for (const auto& c : pp.cells) {
    out << '"' << c.key << '"' << ',' << c.wave << ',' << c.members.size() << ',' << format_number(c.delta) << ','
        << format_number(pp.delta_bar.at(c.key));
    for (const auto& v : pp.variables) {
      out << ',';
      const double x = c.aggregates.at(v);
      if (!std::isnan(x)) out << format_number(x);
    }
    out << '\n';
  }
}

PanelTable read_pseudo_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorCode::MissingColumn, "empty pseudo-panel CSV");
  std::stringstream hs(header);
  RoleSchema schema;
  schema.unit_column = "key";
  schema.wave_column = "wave";
  std::string col;
  while (std::getline(hs, col, ',')) {
    if (!col.empty() && col.back() == '\r') col.pop_back();
    if (col != "key" && col != "wave") schema.roles[col] = VariableRole::regressor;
  }
  std::stringstream rest;
  rest << header << '\n' << in.rdbuf();
  return read_csv(rest, schema);
}

CellReport cell_report(const PseudoPanel& pp, std::size_t threshold) {
  CellReport r;
  r.threshold = threshold;
  std::map<std::string, CellSummary> by_key;
  std::map<std::string, std::size_t> counts;
  double total = 0.0;
  r.min_size = std::numeric_limits<std::size_t>::max();
  for (const auto& c : pp.cells) {
    const std::size_t n = c.members.size();
    auto [it, inserted] = by_key.try_emplace(c.key);
    auto& s = it->second;
    if (inserted) {
      s.key = c.key;
      s.min_size = n;
      s.max_size = n;
      s.delta_min = c.delta;
      s.delta_max = c.delta;
    }
    s.min_size = std::min(s.min_size, n);
    s.max_size = std::max(s.max_size, n);
    s.mean_size += static_cast<double>(n);
    s.delta_min = std::min(s.delta_min, c.delta);
    s.delta_max = std::max(s.delta_max, c.delta);
    counts[c.key] += 1;
    r.n_cells += 1;
    r.min_size = std::min(r.min_size, n);
    r.max_size = std::max(r.max_size, n);
    total += static_cast<double>(n);
    if (n < threshold) r.under_threshold += 1;
    if (n < 30) r.under_30 += 1;
  }
  if (r.n_cells == 0) r.min_size = 0;
  r.mean_size = r.n_cells ? total / static_cast<double>(r.n_cells) : 0.0;
  for (auto& [key, s] : by_key) {
    s.mean_size /= static_cast<double>(counts[key]);
    r.per_key.push_back(s);
  }
  return r;
}

std::string cell_report_json(const CellReport& report) {
  nlohmann::ordered_json j;
  j["n_cells"] = report.n_cells;
  j["min_size"] = report.min_size;
  j["mean_size"] = std::stod(format_number(report.mean_size, 12));
  j["max_size"] = report.max_size;
  j["threshold"] = report.threshold;
  j["under_threshold"] = report.under_threshold;
  j["under_30"] = report.under_30;
  auto& keys = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& s : report.per_key) {
    nlohmann::ordered_json k;
    k["key"] = s.key;
    k["min_size"] = s.min_size;
    k["mean_size"] = std::stod(format_number(s.mean_size, 12));
    k["max_size"] = s.max_size;
    k["delta_min"] = std::stod(format_number(s.delta_min, 12));
    k["delta_max"] = std::stod(format_number(s.delta_max, 12));
    keys.push_back(std::move(k));
  }
  return j.dump(2);
}

}  // namespace ppanel
