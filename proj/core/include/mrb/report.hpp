#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mrb {

/// Empty cells stand for undefined values (empty CSV field, JSON null).
using Cell = std::variant<std::monostate, std::string, std::int64_t, double>;

Cell cell(std::optional<double> v);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
};

struct Report {
  std::vector<Table> tables;
};

enum class ReportFormat { Csv, Json };

/// Shortest decimal string that reads back to the same double.
std::string format_double(double v);

/// A single table is plain CSV. Several tables are written as sections,
/// each introduced by a "# <name>" line and separated by a blank line.
void write_csv(std::ostream& out, const Report& report);
/// {"<table>": [{"<column>": value, ...}, ...], ...} with columns in order.
void write_json(std::ostream& out, const Report& report);

void write_report(std::ostream& out, const Report& report, ReportFormat format);
void write_report(const std::filesystem::path& path, const Report& report, ReportFormat format);

}  // namespace mrb
