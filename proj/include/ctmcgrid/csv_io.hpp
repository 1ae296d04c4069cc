#pragma once

// CSV formats:
//   telemetry        header with x, y, t (any order, extra columns ignored)
//   continuous path  x,y,t
//   CTMC path        cell_row,cell_col,entry_time; a trailing row with
//                    cell_row = cell_col = -1 carries the end-of-observation time
//   expanded data    z,log_offset,weight,path_id,from_row,from_col,to_row,to_col,time,<covariates>

#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctmcgrid/detail/format.hpp"
#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/path.hpp"
#include "ctmcgrid/pipeline.hpp"

namespace ctmcgrid {

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

inline double csv_number(std::string_view tok, const std::string& source, long line, const std::string& column) {
  auto v = parse_double(tok);
  if (!v) throw InputError(source, line, "column '" + column + "': non-numeric value '" + std::string(tok) + "'");
  return *v;
}

// Header name -> column index; throws naming the first missing column.
inline std::map<std::string, std::size_t> header_index(const std::string& header_line, const std::vector<std::string>& required,
                                                       const std::string& source) {
  std::map<std::string, std::size_t> idx;
  const auto fields = split_csv(header_line);
  for (std::size_t i = 0; i < fields.size(); ++i) idx[std::string(fields[i])] = i;
  for (const auto& r : required)
    if (!idx.count(r)) throw InputError(source, 1, "missing required column '" + r + "'");
  return idx;
}

}  // namespace detail

inline Telemetry parse_telemetry_csv(std::istream& in, const std::string& source = "<telemetry>") {
  std::string line;
  if (!std::getline(in, line)) throw InputError(source, 1, "empty telemetry file (header x,y,t required)");
  const auto idx = detail::header_index(line, {"x", "y", "t"}, source);
  Telemetry tel;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv(line);
    auto get = [&](const std::string& name) {
      const auto i = idx.at(name);
      if (i >= f.size()) throw InputError(source, lineno, "row is missing column '" + name + "'");
      return detail::csv_number(f[i], source, lineno, name);
    };
    tel.fixes.push_back({get("x"), get("y"), get("t")});
  }
  tel.validate();
  return tel;
}

inline Telemetry read_telemetry_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_telemetry_csv(in, path);
}

inline void write_fixes_csv(const std::vector<Fix>& fixes, std::ostream& out) {
  out << "x,y,t\n";
  for (const auto& f : fixes)
    out << detail::format_double(f.x) << ',' << detail::format_double(f.y) << ',' << detail::format_double(f.t) << '\n';
}

inline void write_continuous_path_csv(const ContinuousPath& p, const std::string& path) {
  auto out = detail::open_output(path);
  write_fixes_csv(p.samples, out);
}

inline ContinuousPath read_continuous_path_csv(const std::string& path) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path, 1, "empty path file");
  const auto idx = detail::header_index(line, {"x", "y", "t"}, path);
  ContinuousPath p;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() < idx.size()) throw InputError(path, lineno, "short row");
    p.samples.push_back({detail::csv_number(f[idx.at("x")], path, lineno, "x"),
                         detail::csv_number(f[idx.at("y")], path, lineno, "y"),
                         detail::csv_number(f[idx.at("t")], path, lineno, "t")});
  }
  return p;
}

inline void write_ctmc_path_csv(const CtmcPath& p, const GridGeometry& g, std::ostream& out) {
  out << "cell_row,cell_col,entry_time\n";
  const auto times = p.entry_times();
  for (std::size_t k = 0; k < p.cells.size(); ++k)
    out << g.row_of(p.cells[k]) << ',' << g.col_of(p.cells[k]) << ',' << detail::format_double(times[k]) << '\n';
  if (p.final_residence) out << "-1,-1," << detail::format_double(times.back() + *p.final_residence) << '\n';
}

inline void write_ctmc_path_csv(const CtmcPath& p, const GridGeometry& g, const std::string& path) {
  auto out = detail::open_output(path);
  write_ctmc_path_csv(p, g, out);
}

inline CtmcPath parse_ctmc_path_csv(std::istream& in, const GridGeometry& g, const std::string& source = "<path>") {
  std::string line;
  if (!std::getline(in, line)) throw InputError(source, 1, "empty path file");
  const auto idx = detail::header_index(line, {"cell_row", "cell_col", "entry_time"}, source);
  CtmcPath p;
  std::vector<double> entries;
  long lineno = 1;
  bool ended = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (ended) throw InputError(source, lineno, "rows after the end-of-observation marker");
    const auto f = detail::split_csv(line);
    if (f.size() < 3) throw InputError(source, lineno, "short row");
    const double r = detail::csv_number(f[idx.at("cell_row")], source, lineno, "cell_row");
    const double c = detail::csv_number(f[idx.at("cell_col")], source, lineno, "cell_col");
    const double t = detail::csv_number(f[idx.at("entry_time")], source, lineno, "entry_time");
    if (r == -1 && c == -1) {
      if (entries.empty()) throw InputError(source, lineno, "end marker before any cell");
      p.final_residence = t - entries.back();
      ended = true;
      continue;
    }
    if (!g.in_range(static_cast<int>(r), static_cast<int>(c)))
      throw InputError(source, lineno, "cell outside the grid");
    p.cells.push_back(g.cell(static_cast<int>(r), static_cast<int>(c)));
    entries.push_back(t);
  }
  if (p.cells.empty()) throw InputError(source, lineno, "path has no cells");
  p.start_time = entries.front();
  for (std::size_t k = 1; k < entries.size(); ++k) p.residence_times.push_back(entries[k] - entries[k - 1]);
  return p;
}

inline CtmcPath read_ctmc_path_csv(const std::string& path, const GridGeometry& g) {
  auto in = detail::open_input(path);
  return parse_ctmc_path_csv(in, g, path);
}

inline const std::vector<std::string>& expanded_fixed_columns() {
  static const std::vector<std::string> cols{"z", "log_offset", "weight", "path_id", "from_row",
                                             "from_col", "to_row", "to_col", "time"};
  return cols;
}

inline void write_expanded_csv(const ExpandedData& d, std::ostream& out) {
  const auto& fixed = expanded_fixed_columns();
  for (std::size_t i = 0; i < fixed.size(); ++i) out << (i ? "," : "") << fixed[i];
  for (const auto& l : d.labels) out << ',' << l;
  out << '\n';
  const auto p = d.labels.size();
  for (std::size_t r = 0; r < d.rows(); ++r) {
    out << detail::format_double(d.z[r]) << ',' << detail::format_double(d.log_offset[r]) << ','
        << detail::format_double(d.weight[r]) << ',' << d.path_id[r] << ',' << d.from[r].row << ',' << d.from[r].col
        << ',' << d.to[r].row << ',' << d.to[r].col << ',' << detail::format_double(d.time[r]);
    for (std::size_t j = 0; j < p; ++j) out << ',' << detail::format_double(d.x[r * p + j]);
    out << '\n';
  }
}

inline std::string expanded_to_csv_string(const ExpandedData& d) {
  std::ostringstream os;
  write_expanded_csv(d, os);
  return os.str();
}

inline ExpandedData parse_expanded_csv(std::istream& in, const std::string& source = "<expanded>") {
  std::string line;
  if (!std::getline(in, line)) throw InputError(source, 1, "empty expanded-data file");
  const auto header = detail::split_csv(line);
  const auto& fixed = expanded_fixed_columns();
  if (header.size() < fixed.size()) throw InputError(source, 1, "header is missing the fixed columns");
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (header[i] != fixed[i]) throw InputError(source, 1, "expected column '" + fixed[i] + "' at position " + std::to_string(i + 1));
  ExpandedData d;
  for (std::size_t i = fixed.size(); i < header.size(); ++i) d.labels.emplace_back(header[i]);
  const std::size_t width = header.size();
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != width)
      throw InputError(source, lineno, "row has " + std::to_string(f.size()) + " fields, header has " + std::to_string(width));
    auto num = [&](std::size_t i) { return detail::csv_number(f[i], source, lineno, std::string(header[i])); };
    auto integer = [&](std::size_t i) {
      auto v = detail::parse_int(f[i]);
      if (!v) throw InputError(source, lineno, "column '" + std::string(header[i]) + "': expected an integer");
      return static_cast<int>(*v);
    };
    d.z.push_back(num(0));
    d.log_offset.push_back(num(1));
    d.weight.push_back(num(2));
    d.path_id.push_back(integer(3));
    d.from.push_back({integer(4), integer(5)});
    d.to.push_back({integer(6), integer(7)});
    d.time.push_back(num(8));
    for (std::size_t i = fixed.size(); i < width; ++i) d.x.push_back(num(i));
  }
  return d;
}

inline ExpandedData read_expanded_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_expanded_csv(in, path);
}

}  // namespace ctmcgrid
