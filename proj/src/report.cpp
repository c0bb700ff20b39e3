#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fhlr/experiment.hpp"

namespace fhlr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cell_text(std::pair<double, double> v) {
  if (std::isnan(v.first)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ± %.1f", v.first, v.second);
  return buf;
}

std::string number(double v, int digits = 2) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

// Display width in code points so the "±" sign does not skew alignment.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "row";
  for (const auto& c : columns) out << ',' << csv_escape(c + " mean") << ',' << csv_escape(c + " std");
  for (const auto& c : extra_columns) out << ',' << csv_escape(c);
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << csv_escape(rows[r]);
    for (std::size_t k = 0; k < columns.size(); ++k) {
      const auto v = r < cells.size() && k < cells[r].size() ? cells[r][k] : std::pair{std::nan(""), std::nan("")};
      out << ',' << number(v.first) << ',' << number(v.second);
    }
    for (std::size_t k = 0; k < extra_columns.size(); ++k)
      out << ',' << (r < extra_values.size() && k < extra_values[r].size() ? number(extra_values[r][k]) : "");
    out << '\n';
  }
  return out.str();
}

std::string ComparisonTable::to_text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{""};
  header.insert(header.end(), columns.begin(), columns.end());
  header.insert(header.end(), extra_columns.begin(), extra_columns.end());
  grid.push_back(header);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::string> line{rows[r]};
    for (std::size_t k = 0; k < columns.size(); ++k)
      line.push_back(r < cells.size() && k < cells[r].size() ? cell_text(cells[r][k]) : "n/a");
    for (std::size_t k = 0; k < extra_columns.size(); ++k)
      line.push_back(r < extra_values.size() && k < extra_values[r].size() ? number(extra_values[r][k]) : "");
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t k = 0; k < line.size(); ++k) width[k] = std::max(width[k], display_width(line[k]));

  std::ostringstream out;
  if (!title.empty()) out << title << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t k = 0; k < grid[i].size(); ++k) {
      const std::string pad(width[k] - display_width(grid[i][k]), ' ');
      if (k == 0) out << grid[i][k] << pad;
      else out << "  " << pad << grid[i][k];
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

void to_json(json& j, const ComparisonTable& t) {
  json cells = json::array();
  for (const auto& row : t.cells) {
    json r = json::array();
    for (const auto& [m, s] : row)
      r.push_back(std::isnan(m) ? json{{"mean", nullptr}, {"std", nullptr}} : json{{"mean", m}, {"std", s}});
    cells.push_back(r);
  }
  json extras = json::array();
  for (const auto& row : t.extra_values) {
    json r = json::array();
    for (double v : row) r.push_back(std::isnan(v) ? json(nullptr) : json(v));
    extras.push_back(r);
  }
  j = {{"title", t.title}, {"columns", t.columns}, {"rows", t.rows}, {"cells", cells},
       {"extra_columns", t.extra_columns}, {"extra_values", extras}};
}

void from_json(const json& j, ComparisonTable& t) {
  auto num = [](const json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  t.title = j.value("title", std::string());
  t.columns = j.value("columns", std::vector<std::string>{});
  t.rows = j.value("rows", std::vector<std::string>{});
  t.cells.clear();
  for (const auto& row : j.value("cells", json::array())) {
    auto& r = t.cells.emplace_back();
    for (const auto& c : row) r.emplace_back(num(c.at("mean")), num(c.at("std")));
  }
  t.extra_columns = j.value("extra_columns", std::vector<std::string>{});
  t.extra_values.clear();
  for (const auto& row : j.value("extra_values", json::array())) {
    auto& r = t.extra_values.emplace_back();
    for (const auto& v : row) r.push_back(num(v));
  }
}

void write_bundle(const fs::path& dir, const PresetBundle& bundle) {
  fs::create_directories(dir);
  json reports = json::array();
  for (const auto& r : bundle.reports) reports.push_back(r);
  std::ofstream(dir / "bundle.json") << json{{"preset", std::string(to_string(bundle.name))},
                                             {"table", bundle.table},
                                             {"reports", reports}}
                                            .dump(2)
                                     << '\n';
  std::ofstream(dir / "table.csv") << bundle.table.to_csv();
  std::ofstream(dir / "table.txt") << bundle.table.to_text();
}

ComparisonTable collect_reports(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::io, "not a directory: " + dir.string());
  if (fs::exists(dir / "bundle.json")) {
    std::ifstream in(dir / "bundle.json");
    try {
      return json::parse(in).at("table").get<ComparisonTable>();
    } catch (const json::exception& e) {
      fail(ErrorCode::io, "malformed bundle.json: " + std::string(e.what()));
    }
  }

  std::vector<std::pair<std::string, RunReport>> found;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "report.json") continue;
    std::ifstream in(entry.path());
    try {
      const auto rel = fs::relative(entry.path().parent_path(), dir).generic_string();
      found.emplace_back(rel == "." ? std::string("run") : rel, json::parse(in).get<RunReport>());
    } catch (const json::exception& e) {
      fail(ErrorCode::io, "malformed " + entry.path().string() + ": " + e.what());
    }
  }
  require(!found.empty(), ErrorCode::not_found, "no report.json under " + dir.string());
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::set<std::string> stage_names;
  for (const auto& [_, r] : found)
    for (const auto& t : r.trials)
      for (const auto& [stage, __] : t.stages) stage_names.insert(stage);

  ComparisonTable table;
  table.title = dir.filename().string();
  table.columns = {"final"};
  table.columns.insert(table.columns.end(), stage_names.begin(), stage_names.end());
  for (const auto& [name, r] : found) {
    table.rows.push_back(r.method.empty() ? name : name + " (" + r.method + ")");
    auto& row = table.cells.emplace_back();
    for (const auto& c : table.columns) {
      const auto v = r.stage_summary(c == "final" ? std::string() : c);
      row.emplace_back(100.0 * v.first, 100.0 * v.second);
    }
  }
  return table;
}

}  // namespace fhlr
