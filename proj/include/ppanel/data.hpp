#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ppanel {

enum class VariableRole { share, log_outlay, regressor, instrument, price, survey_weight, cohort_key };

std::string_view to_string(VariableRole role);
std::optional<VariableRole> parse_role(std::string_view text);

/// Column-to-role mapping for CSV ingestion. The JSON form is a flat object
/// {"column": "role"}; the pseudo-roles "unit_id" and "wave" name the key columns
/// (default "unit" and "wave").
struct RoleSchema {
  std::string unit_column = "unit";
  std::string wave_column = "wave";
  std::map<std::string, VariableRole> roles;

  static RoleSchema from_json_text(std::string_view text);
  std::string to_json_text() const;
};

/// Long-format (unit, wave) observation table. Numeric columns hold NaN for
/// missing cells; cohort_key columns are kept as text labels.
class PanelTable {
 public:
  PanelTable() = default;
  PanelTable(std::vector<std::string> unit_ids, std::vector<int> waves);

  std::size_t rows() const noexcept { return waves_.size(); }
  const std::vector<std::string>& unit_ids() const noexcept { return unit_ids_; }
  const std::vector<int>& waves() const noexcept { return waves_; }

  void add_column(std::string name, std::vector<double> values,
                  std::optional<VariableRole> role = std::nullopt);
  void add_text_column(std::string name, std::vector<std::string> values,
                       std::optional<VariableRole> role = std::nullopt);
  void set_role(const std::string& name, VariableRole role);

  bool has_column(const std::string& name) const;
  bool is_text(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;
  const std::vector<std::string>& text_column(const std::string& name) const;
  /// Text label of a cell; numeric cells are rendered with the shortest round-trip form.
  std::string label(const std::string& name, std::size_t row) const;

  std::optional<VariableRole> role(const std::string& name) const;
  std::vector<std::string> columns_with_role(VariableRole role) const;
  const std::vector<std::string>& column_names() const noexcept { return order_; }
  const std::map<std::string, VariableRole>& roles() const noexcept { return roles_; }

  PanelTable select_rows(std::span<const std::size_t> rows) const;
  /// Copy with one numeric column replaced (or appended when absent).
  PanelTable with_column(const std::string& name, std::vector<double> values) const;

  std::vector<int> distinct_waves() const;
  std::vector<std::string> distinct_units() const;
  bool is_balanced() const;

  /// Checks (unit, wave) uniqueness and that share columns lie in [0, 1].
  void validate() const;

 private:
  std::vector<std::string> unit_ids_;
  std::vector<int> waves_;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<double>> numeric_;
  std::map<std::string, std::vector<std::string>> text_;
  std::map<std::string, VariableRole> roles_;
};

/// Columns without a role are loaded as plain numeric columns, or as text when a
/// cell does not parse; columns with a role must be numeric (except cohort_key).
PanelTable read_csv(std::istream& in, const RoleSchema& schema);
PanelTable load_csv(const std::string& path, const RoleSchema& schema);
/// Writes unit, wave, then every column; numbers use the shortest round-trip form.
void write_csv(const PanelTable& table, std::ostream& out, const RoleSchema& schema = {});
void save_csv(const PanelTable& table, const std::string& path, const RoleSchema& schema = {});

/// Oxford equivalence scale: 1.0 first adult, 0.8 other adults,
/// 0.5 children aged 6 and over, 0.4 children aged 5 and under.
double oxford_scale(int adults, int children_6_plus, int children_under_6);

struct BalanceResult {
  PanelTable table;
  std::size_t units_removed = 0;
};

/// Keeps only units observed in every wave present in the table.
BalanceResult balance(const PanelTable& table);

PanelTable with_log_column(const PanelTable& table, const std::string& source,
                           const std::string& target, std::optional<VariableRole> role = std::nullopt);
PanelTable with_share_column(const PanelTable& table, const std::string& expenditure,
                             const std::string& outlay, const std::string& target);

std::string format_number(double value);           // shortest round-trip
std::string format_number(double value, int digits);  // fixed significant digits

}  // namespace ppanel
