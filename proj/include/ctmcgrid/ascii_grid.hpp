#pragma once

// ESRI ASCII grid reader/writer. Files list the northernmost row first.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "ctmcgrid/detail/format.hpp"
#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/raster.hpp"

namespace ctmcgrid {

inline RasterGrid parse_ascii_grid(std::istream& in, const std::string& source = "<stream>") {
  static constexpr const char* kKeys[] = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"};
  std::map<std::string, double> header;
  std::string line;
  long lineno = 0;
  bool have_pending = false;

  while (std::getline(in, line)) {
    ++lineno;
    auto toks = detail::split_whitespace(line);
    if (toks.empty()) continue;
    std::string key(toks[0]);
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      have_pending = true;
      break;
    }
    if (toks.size() != 2) throw InputError(source, lineno, "header line for '" + key + "' must have one value");
    if (header.count(key)) throw InputError(source, lineno, "duplicate header key '" + key + "'");
    auto v = detail::parse_double(toks[1]);
    if (!v) throw InputError(source, lineno, "non-numeric header value '" + std::string(toks[1]) + "'");
    header[key] = *v;
  }
  for (const char* k : kKeys) {
    if (std::string(k) == "nodata_value") continue;
    if (!header.count(k)) throw InputError(source, lineno, std::string("missing header key '") + k + "'");
  }

  auto as_count = [&](const char* key) {
    double v = header.at(key);
    if (v < 1 || v != std::floor(v) || v > 1e9) throw InputError(source, 0, std::string("invalid ") + key);
    return static_cast<int>(v);
  };
  GridGeometry g;
  g.ncols = as_count("ncols");
  g.nrows = as_count("nrows");
  g.x_origin = header.at("xllcorner");
  g.y_origin = header.at("yllcorner");
  g.cell_size = header.at("cellsize");
  try {
    g.validate();
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
  const double nodata = header.count("nodata_value") ? header.at("nodata_value") : RasterGrid::kDefaultNoData;

  std::vector<double> values(static_cast<std::size_t>(g.size()));
  int file_row = 0;
  auto consume = [&](const std::string& text) {
    auto toks = detail::split_whitespace(text);
    if (toks.empty()) return;
    if (file_row >= g.nrows) throw InputError(source, lineno, "more data rows than nrows=" + std::to_string(g.nrows));
    if (static_cast<int>(toks.size()) != g.ncols)
      throw InputError(source, lineno,
                       "data row " + std::to_string(file_row + 1) + " has " + std::to_string(toks.size()) +
                           " values, expected ncols=" + std::to_string(g.ncols));
    const int row = g.nrows - 1 - file_row;
    for (int c = 0; c < g.ncols; ++c) {
      auto v = detail::parse_double(toks[c]);
      if (!v) throw InputError(source, lineno, "non-numeric value '" + std::string(toks[c]) + "'");
      values[static_cast<std::size_t>(g.cell(row, c))] = *v;
    }
    ++file_row;
  };
  if (have_pending) consume(line);
  while (std::getline(in, line)) {
    ++lineno;
    consume(line);
  }
  if (file_row != g.nrows)
    throw InputError(source, lineno, "expected " + std::to_string(g.nrows) + " data rows, found " +
                                         std::to_string(file_row));
  return RasterGrid(g, std::move(values), nodata);
}

inline RasterGrid read_ascii_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open raster file '" + path + "'");
  return parse_ascii_grid(in, path);
}

inline void format_ascii_grid(const RasterGrid& grid, std::ostream& out) {
  const auto& g = grid.geometry();
  out << "ncols " << g.ncols << "\n"
      << "nrows " << g.nrows << "\n"
      << "xllcorner " << detail::format_double(g.x_origin) << "\n"
      << "yllcorner " << detail::format_double(g.y_origin) << "\n"
      << "cellsize " << detail::format_double(g.cell_size) << "\n"
      << "NODATA_value " << detail::format_double(grid.nodata_value()) << "\n";
  for (int r = g.nrows - 1; r >= 0; --r) {
    for (int c = 0; c < g.ncols; ++c) {
      if (c) out << ' ';
      out << detail::format_double(grid.value(r, c));
    }
    out << "\n";
  }
}

inline std::string to_ascii_grid_string(const RasterGrid& grid) {
  std::ostringstream os;
  format_ascii_grid(grid, os);
  return os.str();
}

inline void write_ascii_grid(const RasterGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write raster file '" + path + "'");
  format_ascii_grid(grid, out);
}

}  // namespace ctmcgrid
