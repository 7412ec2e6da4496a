#include "ppanel/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "ppanel/error.hpp"

namespace ppanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

std::optional<double> parse_double(const std::string& s) {
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace

std::string_view to_string(VariableRole role) {
  switch (role) {
    case VariableRole::share: return "share";
    case VariableRole::log_outlay: return "log_outlay";
    case VariableRole::regressor: return "regressor";
    case VariableRole::instrument: return "instrument";
    case VariableRole::price: return "price";
    case VariableRole::survey_weight: return "survey_weight";
    case VariableRole::cohort_key: return "cohort_key";
  }
  return "regressor";
}

std::optional<VariableRole> parse_role(std::string_view text) {
  static const std::pair<std::string_view, VariableRole> table[] = {
      {"share", VariableRole::share},         {"log_outlay", VariableRole::log_outlay},
      {"regressor", VariableRole::regressor}, {"instrument", VariableRole::instrument},
      {"price", VariableRole::price},         {"survey_weight", VariableRole::survey_weight},
      {"cohort_key", VariableRole::cohort_key}};
  for (const auto& [name, role] : table)
    if (name == text) return role;
  return std::nullopt;
}

RoleSchema RoleSchema::from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("role schema is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "role schema must be a JSON object");
  RoleSchema schema;
  for (const auto& [column, value] : j.items()) {
    if (!value.is_string())
      throw Error(ErrorCode::ConfigInvalid, "role for column '" + column + "' must be a string");
    const auto role_text = value.get<std::string>();
    if (role_text == "unit_id") {
      schema.unit_column = column;
    } else if (role_text == "wave") {
      schema.wave_column = column;
    } else if (auto role = parse_role(role_text)) {
      schema.roles[column] = *role;
    } else {
      throw Error(ErrorCode::ConfigInvalid, "unknown role '" + role_text + "' for column '" + column + "'");
    }
  }
  return schema;
}

std::string RoleSchema::to_json_text() const {
  nlohmann::ordered_json j;
  j[unit_column] = "unit_id";
  j[wave_column] = "wave";
  for (const auto& [column, role] : roles) j[column] = std::string(to_string(role));
  return j.dump(2);
}

PanelTable::PanelTable(std::vector<std::string> unit_ids, std::vector<int> waves)
    : unit_ids_(std::move(unit_ids)), waves_(std::move(waves)) {
  if (unit_ids_.size() != waves_.size())
    throw Error(ErrorCode::ConfigInvalid, "unit and wave vectors differ in length");
}

void PanelTable::add_column(std::string name, std::vector<double> values, std::optional<VariableRole> role) {
  if (values.size() != rows())
    throw Error(ErrorCode::ConfigInvalid, "column '" + name + "' has wrong length");
  if (!has_column(name)) order_.push_back(name);
  text_.erase(name);
  if (role) roles_[name] = *role;
  numeric_[std::move(name)] = std::move(values);
}

void PanelTable::add_text_column(std::string name, std::vector<std::string> values,
                                 std::optional<VariableRole> role) {
  if (values.size() != rows())
    throw Error(ErrorCode::ConfigInvalid, "column '" + name + "' has wrong length");
  if (!has_column(name)) order_.push_back(name);
  numeric_.erase(name);
  if (role) roles_[name] = *role;
  text_[std::move(name)] = std::move(values);
}

void PanelTable::set_role(const std::string& name, VariableRole role) {
  if (!has_column(name)) throw Error(ErrorCode::MissingColumn, "column '" + name + "'");
  roles_[name] = role;
}

bool PanelTable::has_column(const std::string& name) const {
  return numeric_.count(name) > 0 || text_.count(name) > 0;
}

bool PanelTable::is_text(const std::string& name) const { return text_.count(name) > 0; }

const std::vector<double>& PanelTable::column(const std::string& name) const {
  auto it = numeric_.find(name);
  if (it == numeric_.end()) throw Error(ErrorCode::MissingColumn, "numeric column '" + name + "' not found");
  return it->second;
}

const std::vector<std::string>& PanelTable::text_column(const std::string& name) const {
  auto it = text_.find(name);
  if (it == text_.end()) throw Error(ErrorCode::MissingColumn, "text column '" + name + "' not found");
  return it->second;
}

std::string PanelTable::label(const std::string& name, std::size_t row) const {
  if (auto it = text_.find(name); it != text_.end()) return it->second.at(row);
  return format_number(column(name).at(row));
}

std::optional<VariableRole> PanelTable::role(const std::string& name) const {
  auto it = roles_.find(name);
  if (it == roles_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> PanelTable::columns_with_role(VariableRole role) const {
  std::vector<std::string> out;
  for (const auto& name : order_) {
    auto it = roles_.find(name);
    if (it != roles_.end() && it->second == role) out.push_back(name);
  }
  return out;
}

PanelTable PanelTable::select_rows(std::span<const std::size_t> rows) const {
  std::vector<std::string> units;
  std::vector<int> waves;
  units.reserve(rows.size());
  waves.reserve(rows.size());
  for (auto r : rows) {
    units.push_back(unit_ids_.at(r));
    waves.push_back(waves_.at(r));
  }
  PanelTable out(std::move(units), std::move(waves));
  for (const auto& name : order_) {
    std::optional<VariableRole> r = role(name);
    if (auto it = numeric_.find(name); it != numeric_.end()) {
      std::vector<double> v;
      v.reserve(rows.size());
      for (auto row : rows) v.push_back(it->second[row]);
      out.add_column(name, std::move(v), r);
    } else {
      const auto& src = text_.at(name);
      std::vector<std::string> v;
      v.reserve(rows.size());
      for (auto row : rows) v.push_back(src[row]);
      out.add_text_column(name, std::move(v), r);
    }
  }
  return out;
}

PanelTable PanelTable::with_column(const std::string& name, std::vector<double> values) const {
  PanelTable out = *this;
  out.add_column(name, std::move(values));
  return out;
}

std::vector<int> PanelTable::distinct_waves() const {
  std::set<int> s(waves_.begin(), waves_.end());
  return {s.begin(), s.end()};
}

std::vector<std::string> PanelTable::distinct_units() const {
  std::set<std::string> s(unit_ids_.begin(), unit_ids_.end());
  return {s.begin(), s.end()};
}

bool PanelTable::is_balanced() const {
  const auto waves = distinct_waves();
  std::map<std::string, std::set<int>> seen;
  for (std::size_t i = 0; i < rows(); ++i) seen[unit_ids_[i]].insert(waves_[i]);
  return std::all_of(seen.begin(), seen.end(),
                     [&](const auto& kv) { return kv.second.size() == waves.size(); });
}

void PanelTable::validate() const {
  std::map<std::pair<std::string, int>, std::size_t> first_row;
  for (std::size_t i = 0; i < rows(); ++i) {
    auto [it, inserted] = first_row.emplace(std::make_pair(unit_ids_[i], waves_[i]), i);
    if (!inserted)
      throw Error(ErrorCode::DuplicateUnitWave, "unit " + unit_ids_[i] + ", wave " + std::to_string(waves_[i]) +
                                                    " appears in rows " + std::to_string(it->second + 1) +
                                                    " and " + std::to_string(i + 1));
  }
  for (const auto& name : columns_with_role(VariableRole::share)) {
    if (is_text(name)) throw Error(ErrorCode::NonNumericCell, "share column '" + name + "' is not numeric");
    const auto& v = column(name);
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!std::isnan(v[i]) && (v[i] < 0.0 || v[i] > 1.0)) bad.push_back(i + 1);
    if (!bad.empty()) {
      std::string rows_text;
      for (std::size_t k = 0; k < bad.size() && k < 10; ++k) rows_text += (k ? "," : "") + std::to_string(bad[k]);
      if (bad.size() > 10) rows_text += ",...";
      throw Error(ErrorCode::ShareOutOfRange,
                  "share column '" + name + "' outside [0,1] in data row(s) " + rows_text);
    }
  }
}

PanelTable read_csv(std::istream& in, const RoleSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "empty CSV: header row required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto find = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not in CSV header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t unit_idx = find(schema.unit_column);
  const std::size_t wave_idx = find(schema.wave_column);
  std::vector<std::pair<std::string, std::size_t>> cols;
  for (const auto& [name, role] : schema.roles) cols.emplace_back(name, find(name));
  // columns without a role are loaded too; they become text when any cell is not a number
  std::vector<bool> loose;
  for (std::size_t h = 0; h < header.size(); ++h) {
    if (h == unit_idx || h == wave_idx || schema.roles.count(header[h])) continue;
    if (std::any_of(cols.begin(), cols.end(), [&](const auto& c) { return c.first == header[h]; }))
      throw Error(ErrorCode::ConfigInvalid, "duplicate column '" + header[h] + "' in CSV header");
    cols.emplace_back(header[h], h);
  }
  // keep CSV header order for stable output
  std::sort(cols.begin(), cols.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& c : cols) loose.push_back(schema.roles.count(c.first) == 0);

  std::vector<std::string> units;
  std::vector<int> waves;
  std::vector<std::vector<double>> numeric(cols.size());
  std::vector<std::vector<std::string>> text(cols.size());
  std::vector<bool> is_text(cols.size(), false);
  std::vector<std::string> problems;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(ErrorCode::NonNumericCell, "data row " + std::to_string(row) + " has " +
                                                 std::to_string(fields.size()) + " fields, header has " +
                                                 std::to_string(header.size()));
    units.push_back(trim(fields[unit_idx]));
    auto wave_text = trim(fields[wave_idx]);
    auto wave_value = parse_double(wave_text);
    if (!wave_value || std::floor(*wave_value) != *wave_value) {
      problems.push_back("row " + std::to_string(row) + " column '" + schema.wave_column + "' value '" +
                         wave_text + "'");
      waves.push_back(0);
    } else {
      waves.push_back(static_cast<int>(*wave_value));
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      auto cell = trim(fields[cols[c].second]);
      if (loose[c] || schema.roles.at(cols[c].first) == VariableRole::cohort_key) text[c].push_back(cell);
      if (!loose[c] && schema.roles.at(cols[c].first) == VariableRole::cohort_key) continue;
      if (is_missing_token(cell)) {
        numeric[c].push_back(kNaN);
      } else if (auto v = parse_double(cell)) {
        numeric[c].push_back(*v);
      } else if (loose[c]) {
        numeric[c].push_back(kNaN);
        is_text[c] = true;
      } else {
        problems.push_back("row " + std::to_string(row) + " column '" + cols[c].first + "' value '" + cell + "'");
        numeric[c].push_back(kNaN);
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " unparseable cell(s): ";
    for (std::size_t k = 0; k < problems.size() && k < 10; ++k) msg += (k ? "; " : "") + problems[k];
    if (problems.size() > 10) msg += "; ...";
    throw Error(ErrorCode::NonNumericCell, msg);
  }

  PanelTable table(std::move(units), std::move(waves));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (loose[c]) {
      if (is_text[c])
        table.add_text_column(cols[c].first, std::move(text[c]));
      else
        table.add_column(cols[c].first, std::move(numeric[c]));
      continue;
    }
    const auto role = schema.roles.at(cols[c].first);
    if (role == VariableRole::cohort_key)
      table.add_text_column(cols[c].first, std::move(text[c]), role);
    else
      table.add_column(cols[c].first, std::move(numeric[c]), role);
  }
  table.validate();
  return table;
}

PanelTable load_csv(const std::string& path, const RoleSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open '" + path + "'");
  return read_csv(in, schema);
}

void write_csv(const PanelTable& table, std::ostream& out, const RoleSchema& schema) {
  out << csv_escape(schema.unit_column) << ',' << csv_escape(schema.wave_column);
  for (const auto& name : table.column_names()) out << ',' << csv_escape(name);
  out << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out << csv_escape(table.unit_ids()[i]) << ',' << table.waves()[i];
    for (const auto& name : table.column_names()) {
      out << ',';
      if (table.is_text(name)) {
        out << csv_escape(table.text_column(name)[i]);
      } else {
        double v = table.column(name)[i];
        if (!std::isnan(v)) out << format_number(v);
      }
    }
    out << '\n';
  }
}

void save_csv(const PanelTable& table, const std::string& path, const RoleSchema& schema) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ConfigInvalid, "cannot write '" + path + "'");
  write_csv(table, out, schema);
}

double oxford_scale(int adults, int children_6_plus, int children_under_6) {
  if (adults < 1) throw Error(ErrorCode::NoAdult, "household must contain at least one adult");
  if (children_6_plus < 0 || children_under_6 < 0)
    throw Error(ErrorCode::ConfigInvalid, "child counts must be non-negative");
  return 1.0 + 0.8 * (adults - 1) + 0.5 * children_6_plus + 0.4 * children_under_6;
}

BalanceResult balance(const PanelTable& table) {
  const auto waves = table.distinct_waves();
  std::map<std::string, std::set<int>> seen;
  for (std::size_t i = 0; i < table.rows(); ++i) seen[table.unit_ids()[i]].insert(table.waves()[i]);
  std::set<std::string> keep;
  for (const auto& [unit, w] : seen)
    if (w.size() == waves.size()) keep.insert(unit);
  if (keep.empty()) throw Error(ErrorCode::EmptyResult, "no unit is observed in all waves");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < table.rows(); ++i)
    if (keep.count(table.unit_ids()[i])) rows.push_back(i);
  return {table.select_rows(rows), seen.size() - keep.size()};
}

PanelTable with_log_column(const PanelTable& table, const std::string& source, const std::string& target,
                           std::optional<VariableRole> role) {
  const auto& src = table.column(source);
  std::vector<double> v(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) v[i] = src[i] > 0.0 ? std::log(src[i]) : kNaN;
  PanelTable out = table;
  out.add_column(target, std::move(v), role);
  return out;
}

PanelTable with_share_column(const PanelTable& table, const std::string& expenditure, const std::string& outlay,
                             const std::string& target) {
  const auto& e = table.column(expenditure);
  const auto& y = table.column(outlay);
  std::vector<double> v(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) v[i] = y[i] > 0.0 ? e[i] / y[i] : kNaN;
  PanelTable out = table;
  out.add_column(target, std::move(v), VariableRole::share);
  out.validate();
  return out;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string format_number(double value, int digits) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, digits);
  return std::string(buf, ptr);
}

}  // namespace ppanel
