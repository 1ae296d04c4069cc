#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctmcgrid/detail/format.hpp"
#include "ctmcgrid/errors.hpp"

namespace ctmcgrid {

using CellId = std::int64_t;

// Out-of-bounds / "no cell" marker.
inline constexpr CellId kNoCell = -1;

/**
 * Geometry of a square-celled raster. Row 0 is the southernmost row, so the
 * cell with row r, column c covers
 * [x_origin + c*cell_size, x_origin + (c+1)*cell_size) x
 * [y_origin + r*cell_size, y_origin + (r+1)*cell_size).
 * Cell ids are row-major: id = r*ncols + c.
 */
struct GridGeometry {
  int nrows = 1;
  int ncols = 1;
  double x_origin = 0.0;
  double y_origin = 0.0;
  double cell_size = 1.0;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;

  std::int64_t size() const { return static_cast<std::int64_t>(nrows) * ncols; }

  void validate() const {
    if (nrows < 1 || ncols < 1) throw InputError("grid must have at least one row and one column");
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw InputError("cell_size must be positive and finite");
    if (!std::isfinite(x_origin) || !std::isfinite(y_origin)) throw InputError("grid origin must be finite");
  }

  bool in_range(CellId id) const { return id >= 0 && id < size(); }
  bool in_range(int row, int col) const { return row >= 0 && row < nrows && col >= 0 && col < ncols; }

  CellId cell(int row, int col) const { return static_cast<CellId>(row) * ncols + col; }
  int row_of(CellId id) const { return static_cast<int>(id / ncols); }
  int col_of(CellId id) const { return static_cast<int>(id % ncols); }

  double center_x(CellId id) const { return x_origin + (col_of(id) + 0.5) * cell_size; }
  double center_y(CellId id) const { return y_origin + (row_of(id) + 0.5) * cell_size; }

  double x_max() const { return x_origin + ncols * cell_size; }
  double y_max() const { return y_origin + nrows * cell_size; }

  std::string describe() const {
    return "nrows=" + std::to_string(nrows) + " ncols=" + std::to_string(ncols) +
           " xllcorner=" + detail::format_double(x_origin) + " yllcorner=" + detail::format_double(y_origin) +
           " cellsize=" + detail::format_double(cell_size);
  }
};

/// Cell containing (x, y) under the half-open convention, or kNoCell.
inline CellId cell_index(double x, double y, const GridGeometry& g) {
  if (!std::isfinite(x) || !std::isfinite(y)) return kNoCell;
  const double fc = std::floor((x - g.x_origin) / g.cell_size);
  const double fr = std::floor((y - g.y_origin) / g.cell_size);
  if (fc < 0 || fr < 0 || fc >= g.ncols || fr >= g.nrows) return kNoCell;
  return g.cell(static_cast<int>(fr), static_cast<int>(fc));
}

/**
 * Raster layer: geometry plus one value per cell. Cells are either finite or
 * no-data; non-finite inputs and values equal to the sentinel become no-data.
 */
class RasterGrid {
 public:
  static constexpr double kDefaultNoData = -9999.0;

  RasterGrid() : RasterGrid(GridGeometry{}) {}

  explicit RasterGrid(const GridGeometry& geometry, double fill = 0.0, double nodata_value = kDefaultNoData)
      : geom_(geometry), nodata_value_(nodata_value) {
    geom_.validate();
    values_.assign(static_cast<std::size_t>(geom_.size()), fill);
    nodata_.assign(values_.size(), 0);
    if (!std::isfinite(fill) || fill == nodata_value_) {
      std::fill(nodata_.begin(), nodata_.end(), 1);
      std::fill(values_.begin(), values_.end(), nodata_value_);
    }
  }

  RasterGrid(const GridGeometry& geometry, std::vector<double> values, double nodata_value = kDefaultNoData)
      : geom_(geometry), values_(std::move(values)), nodata_value_(nodata_value) {
    geom_.validate();
    if (static_cast<std::int64_t>(values_.size()) != geom_.size())
      throw InputError("raster value count " + std::to_string(values_.size()) + " does not match geometry " +
                       geom_.describe());
    nodata_.assign(values_.size(), 0);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]) || values_[i] == nodata_value_) {
        nodata_[i] = 1;
        values_[i] = nodata_value_;
      }
    }
  }

  template <class F>
  static RasterGrid from_function(const GridGeometry& geometry, F&& f) {
    std::vector<double> v(static_cast<std::size_t>(geometry.size()));
    for (CellId id = 0; id < geometry.size(); ++id) v[id] = f(geometry.center_x(id), geometry.center_y(id));
    return RasterGrid(geometry, std::move(v));
  }

  const GridGeometry& geometry() const { return geom_; }
  double nodata_value() const { return nodata_value_; }
  std::int64_t size() const { return geom_.size(); }

  double value(CellId id) const { return values_[static_cast<std::size_t>(id)]; }
  double value(int row, int col) const { return value(geom_.cell(row, col)); }
  bool is_nodata(CellId id) const { return nodata_[static_cast<std::size_t>(id)] != 0; }

  /// In range and carrying data; these cells form the CTMC state space.
  bool is_valid(CellId id) const { return geom_.in_range(id) && !is_nodata(id); }

  void set(CellId id, double v) {
    if (!std::isfinite(v) || v == nodata_value_) {
      set_nodata(id);
      return;
    }
    values_[static_cast<std::size_t>(id)] = v;
    nodata_[static_cast<std::size_t>(id)] = 0;
  }
  void set_nodata(CellId id) {
    values_[static_cast<std::size_t>(id)] = nodata_value_;
    nodata_[static_cast<std::size_t>(id)] = 1;
  }

  std::span<const double> values() const { return values_; }

  friend bool operator==(const RasterGrid& a, const RasterGrid& b) {
    return a.geom_ == b.geom_ && a.nodata_ == b.nodata_ && a.values_ == b.values_;
  }

 private:
  GridGeometry geom_;
  std::vector<double> values_;
  std::vector<std::uint8_t> nodata_;
  double nodata_value_;
};

inline bool aligned(const RasterGrid& a, const RasterGrid& b) { return a.geometry() == b.geometry(); }

/// Rook neighbor with its axis-aligned unit direction.
struct Neighbor {
  CellId cell = kNoCell;
  int dx = 0;
  int dy = 0;
};

// At most four entries, kept in E, N, W, S order.
class NeighborList {
 public:
  void push_back(const Neighbor& n) { items_[size_++] = n; }
  int size() const { return size_; }
  bool empty() const { return size_ == 0; }
  const Neighbor& operator[](int i) const { return items_[i]; }
  const Neighbor* begin() const { return items_.data(); }
  const Neighbor* end() const { return items_.data() + size_; }

  int index_of(CellId cell) const {
    for (int i = 0; i < size_; ++i)
      if (items_[i].cell == cell) return i;
    return -1;
  }

 private:
  std::array<Neighbor, 4> items_{};
  int size_ = 0;
};

inline constexpr std::array<std::array<int, 2>, 4> kRookDirections{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};

/// Rook neighbors of `cell` that are inside the grid and carry data, in E, N, W, S order.
inline NeighborList neighbors(CellId cell, const RasterGrid& grid) {
  const auto& g = grid.geometry();
  if (!grid.is_valid(cell)) throw std::out_of_range("invalid cell id " + std::to_string(cell));
  const int r = g.row_of(cell);
  const int c = g.col_of(cell);
  NeighborList out;
  for (const auto& d : kRookDirections) {
    const int rr = r + d[1];
    const int cc = c + d[0];
    if (!g.in_range(rr, cc)) continue;
    const CellId id = g.cell(rr, cc);
    if (grid.is_nodata(id)) continue;
    out.push_back({id, d[0], d[1]});
  }
  return out;
}

inline bool are_neighbors(CellId a, CellId b, const GridGeometry& g) {
  if (!g.in_range(a) || !g.in_range(b)) return false;
  const int dr = std::abs(g.row_of(a) - g.row_of(b));
  const int dc = std::abs(g.col_of(a) - g.col_of(b));
  return dr + dc == 1;
}

/// Gradient components at cell centres; masked (no-data) cells read as (0, 0).
struct VectorField {
  RasterGrid gx;
  RasterGrid gy;

  std::array<double, 2> at(CellId id) const {
    if (gx.is_nodata(id)) return {0.0, 0.0};
    return {gx.value(id), gy.value(id)};
  }
};

/**
 * Finite-difference gradient of a layer: central differences where both
 * stencil neighbours carry data, one-sided where only one does, zero where
 * neither does.
 */
inline VectorField gradient(const RasterGrid& grid) {
  const auto& g = grid.geometry();
  RasterGrid gx(g, 0.0);
  RasterGrid gy(g, 0.0);
  auto ok = [&](int r, int c) { return g.in_range(r, c) && !grid.is_nodata(g.cell(r, c)); };
  auto diff = [&](int r, int c, int dr, int dc) {
    const bool fwd = ok(r + dr, c + dc);
    const bool bwd = ok(r - dr, c - dc);
    const double v = grid.value(r, c);
    if (fwd && bwd) return (grid.value(r + dr, c + dc) - grid.value(r - dr, c - dc)) / (2.0 * g.cell_size);
    if (fwd) return (grid.value(r + dr, c + dc) - v) / g.cell_size;
    if (bwd) return (v - grid.value(r - dr, c - dc)) / g.cell_size;
    return 0.0;
  };
  for (int r = 0; r < g.nrows; ++r) {
    for (int c = 0; c < g.ncols; ++c) {
      const CellId id = g.cell(r, c);
      if (grid.is_nodata(id)) {
        gx.set_nodata(id);
        gy.set_nodata(id);
        continue;
      }
      gx.set(id, diff(r, c, 0, 1));
      gy.set(id, diff(r, c, 1, 0));
    }
  }
  return {std::move(gx), std::move(gy)};
}

}  // namespace ctmcgrid
