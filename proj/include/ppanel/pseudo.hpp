#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ppanel/data.hpp"

namespace ppanel {

/// Half-open integer interval [lo, hi). Missing bounds are open-ended.
struct AgeBand {
  std::optional<int> lo;
  std::optional<int> hi;
  std::string label;

  bool contains(int age) const { return (!lo || age >= *lo) && (!hi || age < *hi); }
};

struct EduLevel {
  std::string label;
  std::set<std::string> values;
};

struct CohortScheme {
  std::vector<AgeBand> age_bands = default_age_bands();
  /// Empty means every distinct education label forms its own level.
  std::vector<EduLevel> edu_levels;
  std::optional<int> split_k;
  std::string age_column = "age";
  std::string edu_column = "edu";

  /// <30, 30-39, 40-49, 50-59, 60-69, >=70
  static std::vector<AgeBand> default_age_bands();
  static CohortScheme from_json_text(const std::string& text);
  void check() const;
};

inline const std::string kCohortColumn = "cohort_key";
inline const std::string kSubsampleColumn = "subsample";

/// Adds cohort_key (text) and, when split_k is set, subsample (0..k-1) columns.
/// The key uses the head's age at the unit's first observed wave.
PanelTable assign_cohorts(const PanelTable& table, const CohortScheme& scheme, std::uint64_t seed);

/// Sub-sample label for a unit; a pure function of (seed, unit_id, k).
int subsample_of(const std::string& unit_id, std::uint64_t seed, int k);

enum class Weighting { income_share, equal };

enum class SampleDesign {
  all_units,            ///< every row contributes to its wave (fresh cross-sections)
  rotating_subsamples,  ///< sub-sample s feeds only the waves w with rank(w) % k == s
};

struct AggregateOptions {
  Weighting weighting = Weighting::income_share;
  SampleDesign design = SampleDesign::all_units;
  /// Level outlay column for income-share weights; defaults to exp(log_outlay).
  std::optional<std::string> outlay_column;
  std::size_t min_cell_size = 30;
  bool require_balanced = false;
};

struct Cell {
  std::string key;
  int wave = 0;
  std::vector<std::string> members;  // sorted unit ids
  std::vector<double> gamma;         // aligned with members
  double delta = 0.0;                // sum of squared gammas
  bool small = false;
  std::map<std::string, double> aggregates;
};

struct PseudoPanel {
  std::vector<Cell> cells;  // sorted by (key, wave)
  std::map<std::string, double> delta_bar;
  std::vector<std::string> variables;  // aggregated columns, source order
  std::map<std::string, VariableRole> roles;
  std::vector<int> waves;
  bool balanced = false;

  std::size_t size(const std::string& key, int wave) const;
  /// One row per cell: unit = key, columns = aggregates plus size, delta, delta_bar.
  PanelTable to_table() const;
};

PseudoPanel aggregate(const PanelTable& table, const AggregateOptions& options = {});

/// CSV with key, wave, size, delta, delta_bar and one column per aggregated variable.
void write_pseudo_csv(const PseudoPanel& pp, std::ostream& out);
/// Reads the export back as a table keyed by cell (unit = key).
PanelTable read_pseudo_csv(std::istream& in);

struct CellSummary {
  std::string key;
  std::size_t min_size = 0;
  double mean_size = 0.0;
  std::size_t max_size = 0;
  double delta_min = 0.0;
  double delta_max = 0.0;
};

struct CellReport {
  std::vector<CellSummary> per_key;
  std::size_t n_cells = 0;
  std::size_t min_size = 0;
  std::size_t max_size = 0;
  double mean_size = 0.0;
  std::size_t threshold = 100;
  std::size_t under_threshold = 0;
  std::size_t under_30 = 0;
};

CellReport cell_report(const PseudoPanel& pp, std::size_t threshold = 100);
std::string cell_report_json(const CellReport& report);

}  // namespace ppanel
