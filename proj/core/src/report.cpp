#include "mrb/report.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mrb/error.hpp"

namespace mrb {

Cell cell(std::optional<double> v) {
  if (!v) return std::monostate{};
  return *v;
}

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) throw Error("table \"" + name + "\": row width does not match the header");
  rows.push_back(std::move(row));
}

std::string format_double(double v) {
  if (!std::isfinite(v)) throw Error("cannot format a non-finite value");
  if (v == 0.0) return "0";  // also folds -0
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf.data(), end);
}

namespace {

std::string csv_field(const Cell& c) {
  struct Visitor {
    std::string operator()(std::monostate) const { return {}; }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(double v) const { return format_double(v); }
    std::string operator()(const std::string& s) const {
      if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
      std::string q = "\"";
      for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
      }
      return q + '"';
    }
  };
  return std::visit(Visitor{}, c);
}

void write_table_csv(std::ostream& out, const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << csv_field(Cell{t.columns[i]});
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(row[i]);
    out << '\n';
  }
}

}  // namespace

void write_csv(std::ostream& out, const Report& report) {
  if (report.tables.size() == 1) {
    write_table_csv(out, report.tables.front());
    return;
  }
  for (std::size_t i = 0; i < report.tables.size(); ++i) {
    if (i) out << '\n';
    out << "# " << report.tables[i].name << '\n';
    write_table_csv(out, report.tables[i]);
  }
}

void write_json(std::ostream& out, const Report& report) {
  using ordered = nlohmann::ordered_json;
  ordered root = ordered::object();
  for (const auto& t : report.tables) {
    ordered rows = ordered::array();
    for (const auto& row : t.rows) {
      ordered obj = ordered::object();
      for (std::size_t i = 0; i < row.size(); ++i) {
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, std::monostate>) {
                obj[t.columns[i]] = nullptr;
              } else {
                obj[t.columns[i]] = v;
              }
            },
            row[i]);
      }
      rows.push_back(std::move(obj));
    }
    root[t.name] = std::move(rows);
  }
  out << root.dump(2) << '\n';
}

void write_report(std::ostream& out, const Report& report, ReportFormat format) {
  if (format == ReportFormat::Csv) {
    write_csv(out, report);
  } else {
    write_json(out, report);
  }
  if (!out) throw Error("failed writing report");
}

void write_report(const std::filesystem::path& path, const Report& report, ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_report(out, report, format);
}

}  // namespace mrb
