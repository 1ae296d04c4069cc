#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/model_spec.hpp"
#include "ctmcgrid/path.hpp"
#include "ctmcgrid/raster.hpp"
#include "ctmcgrid/spline.hpp"

namespace ctmcgrid {

/// Current position of the mover: cell, previous cell in the embedded chain (or kNoCell), entry time.
struct MoveState {
  CellId cur = kNoCell;
  CellId prev = kNoCell;
  double time = 0.0;
};

namespace detail {

inline void require_neighbors(CellId from, CellId to, const GridGeometry& g) {
  if (!are_neighbors(from, to, g))
    throw std::invalid_argument("cells " + std::to_string(from) + " and " + std::to_string(to) +
                                " are not rook neighbours");
}

}  // namespace detail

// Displacement e_ij (length cell_size) dotted with the layer gradient at from_cell.
inline double directional_covariate(const VectorField& grad, CellId from_cell, CellId to_cell) {
  const auto& g = grad.gx.geometry();
  detail::require_neighbors(from_cell, to_cell, g);
  const auto v = grad.at(from_cell);
  const double ex = g.center_x(to_cell) - g.center_x(from_cell);
  const double ey = g.center_y(to_cell) - g.center_y(from_cell);
  return ex * v[0] + ey * v[1];
}

inline double directional_covariate(const RasterGrid& d_layer, CellId from_cell, CellId to_cell) {
  return directional_covariate(gradient(d_layer), from_cell, to_cell);
}

/**
 * Candidate displacement dotted with the unit heading from prev_cell to
 * cur_cell. Zero at the start of a path (no previous cell).
 */
inline double autocovariate(CellId prev_cell, CellId cur_cell, CellId to_cell, const GridGeometry& g) {
  detail::require_neighbors(cur_cell, to_cell, g);
  if (prev_cell == kNoCell || prev_cell == cur_cell) return 0.0;
  const double hx = g.center_x(cur_cell) - g.center_x(prev_cell);
  const double hy = g.center_y(cur_cell) - g.center_y(prev_cell);
  const double len = std::hypot(hx, hy);
  const double ex = g.center_x(to_cell) - g.center_x(cur_cell);
  const double ey = g.center_y(to_cell) - g.center_y(cur_cell);
  return (ex * hx + ey * hy) / len;
}

inline RasterGrid distance_to_point_layer(const GridGeometry& g, double px, double py) {
  if (!std::isfinite(px) || !std::isfinite(py)) throw InputError("activity centre must be finite");
  return RasterGrid::from_function(g, [&](double x, double y) { return std::hypot(x - px, y - py); });
}

/// Per-cell distance to the nearest centre of a cell entered strictly before `up_to`.
inline RasterGrid memory_layer(const CtmcPath& past, const GridGeometry& g, double up_to) {
  std::vector<CellId> visited;
  const auto times = past.entry_times();
  for (std::size_t k = 0; k < past.cells.size(); ++k)
    if (times[k] < up_to) visited.push_back(past.cells[k]);
  if (visited.empty()) throw InputError("memory layer needs at least one visit before the requested time");
  std::sort(visited.begin(), visited.end());
  visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
  return RasterGrid::from_function(g, [&](double x, double y) {
    double best = std::numeric_limits<double>::infinity();
    for (CellId c : visited) best = std::min(best, std::hypot(x - g.center_x(c), y - g.center_y(c)));
    return best;
  });
}

/**
 * Binds a ModelSpec to the state-space grid and its covariate layers, and
 * assembles rows of the log-rate design matrix. Immutable once built.
 */
class DesignContext {
 public:
  DesignContext(ModelSpec spec, RasterGrid state_grid, const std::map<std::string, RasterGrid>& layers = {})
      : spec_(std::move(spec)), grid_(std::move(state_grid)) {
    spec_.validate();
    labels_ = spec_.column_labels();
    roles_ = spec_.column_roles();
    const auto& g = grid_.geometry();
    for (const auto& name : spec_.layer_names()) {
      auto it = layers.find(name);
      if (it == layers.end()) throw InputError("model references unknown layer '" + name + "'");
      if (!aligned(it->second, grid_))
        throw InputError("layer '" + name + "' is not aligned with the state grid: layer " +
                         it->second.geometry().describe() + " vs grid " + g.describe());
      layers_.emplace(name, it->second);
    }
    auto need_values = [&](const std::string& name) {
      const auto& layer = layers_.at(name);
      for (CellId id = 0; id < g.size(); ++id)
        if (grid_.is_valid(id) && layer.is_nodata(id))
          throw InputError("motility layer '" + name + "' has no data at state cell " + std::to_string(id));
    };
    for (const auto& t : spec_.motility) need_values(t.layer);
    for (const auto& t : spec_.directional)
      if (!gradients_.count(t.layer)) gradients_.emplace(t.layer, gradient(layers_.at(t.layer)));
    for (const auto& v : spec_.varying) {
      if (v.role == TermRole::motility) need_values(v.layer);
      if (v.role == TermRole::directional && !gradients_.count(v.layer))
        gradients_.emplace(v.layer, gradient(layers_.at(v.layer)));
    }
    if (spec_.surface) {
      auto tabulate = [&](const SplineBasis2D& b, std::vector<double>& out) {
        const int k = b.size();
        out.assign(static_cast<std::size_t>(g.size() * k), 0.0);
        for (CellId id = 0; id < g.size(); ++id) {
          if (!grid_.is_valid(id)) continue;
          auto phi = b.evaluate(g.center_x(id), g.center_y(id));
          std::copy(phi.begin(), phi.end(), out.begin() + id * k);
        }
      };
      if (spec_.surface->motility) tabulate(*spec_.surface->motility, surface_motility_);
      if (spec_.surface->potential) tabulate(*spec_.surface->potential, surface_potential_);
    }
  }

  const ModelSpec& spec() const { return spec_; }
  const RasterGrid& grid() const { return grid_; }
  const GridGeometry& geometry() const { return grid_.geometry(); }
  int columns() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<TermRole>& roles() const { return roles_; }
  const std::map<std::string, RasterGrid>& layers() const { return layers_; }

  /**
   * Design rows for every candidate move out of `state.cur`, written
   * row-major into `out` (candidates x columns). Returns the candidates in
   * E, N, W, S order.
   */
  NeighborList rows(const MoveState& state, std::vector<double>& out) const {
    const auto cand = neighbors(state.cur, grid_);
    const int p = columns();
    out.assign(static_cast<std::size_t>(cand.size() * p), 0.0);
    if (cand.empty()) return cand;

    const auto& g = grid_.geometry();
    const double cs = g.cell_size;
    double hx = 0.0, hy = 0.0;  // unit heading
    if (state.prev != kNoCell && state.prev != state.cur) {
      hx = g.center_x(state.cur) - g.center_x(state.prev);
      hy = g.center_y(state.cur) - g.center_y(state.prev);
      const double len = std::hypot(hx, hy);
      hx /= len;
      hy /= len;
    }

    std::vector<std::vector<double>> phis;
    phis.reserve(spec_.varying.size());
    for (const auto& v : spec_.varying) phis.push_back(v.basis.evaluate_clamped(state.time));

    for (int c = 0; c < cand.size(); ++c) {
      double* row = out.data() + static_cast<std::size_t>(c) * p;
      const Neighbor& nb = cand[c];
      int col = 0;
      if (spec_.intercept) row[col++] = 1.0;
      for (const auto& t : spec_.motility) row[col++] = layers_.at(t.layer).value(state.cur);
      for (const auto& t : spec_.directional) {
        const auto gv = gradients_.at(t.layer).at(state.cur);
        row[col++] = cs * (nb.dx * gv[0] + nb.dy * gv[1]);
      }
      const double auto_value = cs * (nb.dx * hx + nb.dy * hy);
      if (spec_.autocovariate) row[col++] = auto_value;
      for (std::size_t vi = 0; vi < spec_.varying.size(); ++vi) {
        const auto& v = spec_.varying[vi];
        double base = 0.0;
        switch (v.role) {
          case TermRole::motility: base = layers_.at(v.layer).value(state.cur); break;
          case TermRole::directional: {
            const auto gv = gradients_.at(v.layer).at(state.cur);
            base = cs * (nb.dx * gv[0] + nb.dy * gv[1]);
            break;
          }
          case TermRole::autocovariate: base = auto_value; break;
          case TermRole::intercept: break;
        }
        for (double phi : phis[vi]) row[col++] = base * phi;
      }
      if (spec_.surface) {
        if (spec_.surface->motility) {
          const int k = spec_.surface->motility->size();
          const double* phi = surface_motility_.data() + state.cur * k;
          for (int i = 0; i < k; ++i) row[col++] = phi[i];
        }
        if (spec_.surface->potential) {
          // Potential drop along the edge: rates favour moves toward lower potential.
          const int k = spec_.surface->potential->size();
          const double* from = surface_potential_.data() + state.cur * k;
          const double* to = surface_potential_.data() + nb.cell * k;
          for (int i = 0; i < k; ++i) row[col++] = from[i] - to[i];
        }
      }
    }
    return cand;
  }

  /// One design row for the move state.cur -> candidate.
  std::vector<double> row(const MoveState& state, CellId candidate) const {
    detail::require_neighbors(state.cur, candidate, grid_.geometry());
    std::vector<double> all;
    const auto cand = rows(state, all);
    const int idx = cand.index_of(candidate);
    if (idx < 0) throw std::invalid_argument("candidate cell " + std::to_string(candidate) + " is not in the state space");
    const auto p = static_cast<std::size_t>(columns());
    return {all.begin() + idx * p, all.begin() + (idx + 1) * p};
  }

  /// Potential surface value sum_k coef_k phi_k at a cell centre.
  double potential_at(CellId cell, std::span<const double> potential_coefficients) const {
    if (!spec_.surface || !spec_.surface->potential) throw std::logic_error("model has no potential surface");
    const int k = spec_.surface->potential->size();
    double v = 0.0;
    for (int i = 0; i < k; ++i) v += potential_coefficients[i] * surface_potential_[cell * k + i];
    return v;
  }

  /// Column index of the first coefficient of the named label, or -1.
  int column_of(const std::string& label) const {
    for (int i = 0; i < columns(); ++i)
      if (labels_[i] == label) return i;
    return -1;
  }

 private:
  ModelSpec spec_;
  RasterGrid grid_;
  std::map<std::string, RasterGrid> layers_;
  std::map<std::string, VectorField> gradients_;
  std::vector<std::string> labels_;
  std::vector<TermRole> roles_;
  std::vector<double> surface_motility_;
  std::vector<double> surface_potential_;
};

}  // namespace ctmcgrid
