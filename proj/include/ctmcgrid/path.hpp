#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/raster.hpp"

namespace ctmcgrid {

/**
 * A CTMC path: the embedded chain of visited cells and the residence time in
 * each completed sojourn. `residence_times[k]` is the time spent in
 * `cells[k]` before jumping to `cells[k+1]`. The time spent in the last cell
 * is censored; when known it is stored in `final_residence`.
 */
struct CtmcPath {
  std::vector<CellId> cells;
  std::vector<double> residence_times;
  double start_time = 0.0;
  std::optional<double> final_residence;

  std::size_t transitions() const { return residence_times.size(); }

  double entry_time(std::size_t k) const {
    double t = start_time;
    for (std::size_t i = 0; i < k; ++i) t += residence_times[i];
    return t;
  }

  std::vector<double> entry_times() const {
    std::vector<double> out;
    out.reserve(cells.size());
    double t = start_time;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out.push_back(t);
      if (i < residence_times.size()) t += residence_times[i];
    }
    return out;
  }

  double end_time() const {
    return entry_time(residence_times.size()) + final_residence.value_or(0.0);
  }
};

/// Throws InputError unless the path is a valid chain of distinct rook-neighbour cells with positive sojourns.
inline void validate_path(const CtmcPath& path, const RasterGrid& grid) {
  if (path.cells.empty()) throw InputError("path has no cells");
  if (path.residence_times.size() + 1 != path.cells.size())
    throw InputError("path needs exactly one residence time per completed sojourn");
  for (std::size_t k = 0; k < path.cells.size(); ++k) {
    if (!grid.is_valid(path.cells[k])) throw InputError("path visits invalid cell " + std::to_string(path.cells[k]));
    if (k + 1 < path.cells.size()) {
      if (!are_neighbors(path.cells[k], path.cells[k + 1], grid.geometry()))
        throw InputError("path step " + std::to_string(k) + " is not between rook neighbours");
      if (!(path.residence_times[k] > 0.0) || !std::isfinite(path.residence_times[k]))
        throw InputError("residence time " + std::to_string(k) + " must be positive");
    }
  }
  if (path.final_residence && (!(*path.final_residence >= 0.0) || !std::isfinite(*path.final_residence)))
    throw InputError("final residence must be nonnegative");
}

/// Total residence time per cell (the censored final residence included).
inline RasterGrid occupancy(const std::vector<CtmcPath>& paths, const GridGeometry& geometry) {
  RasterGrid occ(geometry, 0.0);
  std::vector<double> acc(static_cast<std::size_t>(geometry.size()), 0.0);
  for (const auto& p : paths) {
    for (std::size_t k = 0; k < p.residence_times.size(); ++k) acc[p.cells[k]] += p.residence_times[k];
    if (p.final_residence && !p.cells.empty()) acc[p.cells.back()] += *p.final_residence;
  }
  for (CellId id = 0; id < geometry.size(); ++id) occ.set(id, acc[id]);
  return occ;
}

}  // namespace ctmcgrid
