#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fusionlasso {

enum class Family { linear, logistic, multinomial };

inline Family family_from_string(const std::string& s) {
  if (s == "linear") return Family::linear;
  if (s == "logistic" || s == "binomial") return Family::logistic;
  if (s == "multinomial") return Family::multinomial;
  throw std::invalid_argument("unknown family: " + s);
}

inline std::string family_to_string(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::logistic: return "logistic";
    default: return "multinomial";
  }
}

enum class ColumnKind { numeric, categorical, binary_outcome, count_outcome };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<double> numeric;       // numeric / outcome values
  std::vector<int> codes;            // categorical level codes
  std::vector<std::string> levels;   // closed, sorted level set
};

// Tabular data with named, typed columns.  Categorical level sets are closed
// once the Dataset is built; all accessors are const after construction.
struct Dataset {
  std::vector<Column> columns;
  std::size_t n_rows = 0;
  std::string outcome_name;
  Family family = Family::linear;

  const Column* find(const std::string& name) const {
    for (const auto& c : columns) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }

  const Column& at(const std::string& name) const {
    const Column* c = find(name);
    if (!c) throw std::invalid_argument("unknown column: " + name);
    return *c;
  }

  const Column& outcome() const { return at(outcome_name); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}

inline double parse_double(const std::string& s, const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("column '" + col + "': cannot parse numeric value '" + s + "'");
  }
}

}  // namespace detail

// Raw CSV: header row plus string cells, before typing.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == EOF) break;
    auto fields = detail::split_csv_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != t.header.size()) {
        throw std::invalid_argument("csv row has " + std::to_string(fields.size()) +
                                    " fields, header has " + std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(fields));
    }
  }
  if (first) throw std::invalid_argument("csv: missing header row");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open csv file: " + path);
  return read_csv(in);
}

// Sidecar configuration: which columns are categorical, the outcome, the
// family and the design formula.
struct DataConfig {
  std::string outcome;
  Family family = Family::linear;
  std::vector<std::string> categorical;
  std::map<std::string, std::vector<std::string>> declared_levels;  // optional closed sets
  std::string formula;
  bool intercept = true;
};

inline DataConfig parse_data_config(const nlohmann::json& j) {
  DataConfig cfg;
  cfg.outcome = j.at("outcome").get<std::string>();
  cfg.family = family_from_string(j.value("family", std::string("linear")));
  if (j.contains("categorical")) {
    const auto& cat = j.at("categorical");
    if (cat.is_array()) {
      cfg.categorical = cat.get<std::vector<std::string>>();
    } else {
      for (auto it = cat.begin(); it != cat.end(); ++it) {
        cfg.categorical.push_back(it.key());
        cfg.declared_levels[it.key()] = it.value().get<std::vector<std::string>>();
      }
    }
  }
  cfg.formula = j.value("formula", std::string());
  cfg.intercept = j.value("intercept", true);
  return cfg;
}

inline DataConfig load_data_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return parse_data_config(j);
}

// Types a CsvTable according to the config.  Level sets are collected from the
// data (sorted for determinism) unless declared explicitly.
inline Dataset build_dataset(const CsvTable& table, const DataConfig& cfg) {
  if (table.rows.empty()) throw std::invalid_argument("dataset must contain at least one row");
  Dataset ds;
  ds.n_rows = table.rows.size();
  ds.outcome_name = cfg.outcome;
  ds.family = cfg.family;

  const auto is_categorical = [&](const std::string& name) {
    return std::find(cfg.categorical.begin(), cfg.categorical.end(), name) !=
           cfg.categorical.end();
  };

  for (std::size_t ci = 0; ci < table.header.size(); ++ci) {
    Column col;
    col.name = table.header[ci];
    const bool is_outcome = col.name == cfg.outcome;
    const bool categorical =
        is_categorical(col.name) || (is_outcome && cfg.family == Family::multinomial);
    if (categorical) {
      col.kind = ColumnKind::categorical;
      auto declared = cfg.declared_levels.find(col.name);
      if (declared != cfg.declared_levels.end()) {
        col.levels = declared->second;
        std::sort(col.levels.begin(), col.levels.end());
      } else {
        for (const auto& row : table.rows) col.levels.push_back(row[ci]);
        std::sort(col.levels.begin(), col.levels.end());
        col.levels.erase(std::unique(col.levels.begin(), col.levels.end()), col.levels.end());
      }
      if (col.levels.empty()) throw std::invalid_argument("column '" + col.name + "': empty level set");
      for (const auto& row : table.rows) {
        auto it = std::lower_bound(col.levels.begin(), col.levels.end(), row[ci]);
        if (it == col.levels.end() || *it != row[ci]) {
          throw std::invalid_argument("column '" + col.name + "': value '" + row[ci] +
                                      "' outside the declared level set");
        }
        col.codes.push_back(static_cast<int>(it - col.levels.begin()));
      }
    } else {
      col.kind = is_outcome && cfg.family == Family::logistic ? ColumnKind::binary_outcome
                                                              : ColumnKind::numeric;
      for (const auto& row : table.rows) {
        col.numeric.push_back(detail::parse_double(row[ci], col.name));
      }
      if (col.kind == ColumnKind::binary_outcome) {
        for (double v : col.numeric) {
          if (v != 0.0 && v != 1.0) {
            throw std::invalid_argument("binary outcome '" + col.name + "' must be 0/1");
          }
        }
      }
    }
    ds.columns.push_back(std::move(col));
  }

  if (!ds.find(cfg.outcome)) {
    throw std::invalid_argument("outcome column '" + cfg.outcome + "' not present in data");
  }
  return ds;
}

inline Dataset load_dataset(const std::string& csv_path, const DataConfig& cfg) {
  return build_dataset(read_csv_file(csv_path), cfg);
}

}  // namespace fusionlasso
