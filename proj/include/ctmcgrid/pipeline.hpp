#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "ctmcgrid/covariates.hpp"
#include "ctmcgrid/detail/parallel.hpp"
#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/path.hpp"
#include "ctmcgrid/raster.hpp"

namespace ctmcgrid {

struct Fix {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;
};

/// Telemetry fixes, strictly increasing in time.
struct Telemetry {
  std::vector<Fix> fixes;

  void validate() const {
    if (fixes.size() < 2) throw InputError("telemetry needs at least two fixes");
    for (std::size_t i = 0; i < fixes.size(); ++i) {
      const auto& f = fixes[i];
      if (!std::isfinite(f.x) || !std::isfinite(f.y) || !std::isfinite(f.t))
        throw InputError("telemetry fix " + std::to_string(i) + " is not finite");
      if (i && !(f.t > fixes[i - 1].t))
        throw InputError("telemetry times must be strictly increasing (fix " + std::to_string(i) + ")");
    }
  }
};

// Dense samples of an imputed continuous path.
struct ContinuousPath {
  std::vector<Fix> samples;
};

/**
 * Maximum-likelihood scale of planar Brownian motion observed at the fix
 * times: sigma^2 = sum_i |dxy_i|^2 / dt_i / (2 (n - 1)).
 */
inline double fit_bridge_sigma(const Telemetry& tel) {
  if (tel.fixes.size() < 3) throw InputError("estimating the bridge scale needs at least three fixes");
  double acc = 0.0;
  for (std::size_t i = 1; i < tel.fixes.size(); ++i) {
    const auto& a = tel.fixes[i - 1];
    const auto& b = tel.fixes[i];
    const double dt = b.t - a.t;
    if (!(dt > 0.0)) throw InputError("telemetry time step " + std::to_string(i) + " is not positive");
    const double dx = b.x - a.x, dy = b.y - a.y;
    acc += (dx * dx + dy * dy) / dt;
  }
  return std::sqrt(acc / (2.0 * static_cast<double>(tel.fixes.size() - 1)));
}

/// Default bridge sampling step: a twentieth of the shortest fix gap, capped so sigma*sqrt(dt) <= cell_size / 3.
inline double default_bridge_step(const Telemetry& tel, double sigma, double cell_size) {
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < tel.fixes.size(); ++i) min_gap = std::min(min_gap, tel.fixes[i].t - tel.fixes[i - 1].t);
  double dt = min_gap / 20.0;
  if (sigma > 0.0) dt = std::min(dt, std::pow(cell_size / (3.0 * sigma), 2));
  return dt;
}

/// Source of imputed continuous paths between telemetry fixes.
class PathImputer {
 public:
  virtual ~PathImputer() = default;
  /// The p-th imputation; results depend only on (telemetry, seed, p).
  virtual ContinuousPath impute_one(const Telemetry& tel, std::uint64_t seed, std::size_t p) const = 0;
};

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace detail

/**
 * Planar Brownian bridge between consecutive fixes, sampled on the global
 * lattice t_0 + k*dt plus the fix times themselves.
 */
class BrownianBridgeImputer final : public PathImputer {
 public:
  BrownianBridgeImputer(double sigma, double time_step) : sigma_(sigma), dt_(time_step) {
    if (!(sigma_ >= 0.0) || !std::isfinite(sigma_)) throw InputError("bridge sigma must be finite and nonnegative");
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw InputError("bridge time step must be positive");
  }

  double sigma() const { return sigma_; }
  double time_step() const { return dt_; }

  ContinuousPath impute_one(const Telemetry& tel, std::uint64_t seed, std::size_t p) const override {
    tel.validate();
    auto rng = detail::stream_rng(seed, p);
    std::normal_distribution<double> normal(0.0, 1.0);
    ContinuousPath out;
    const double t0 = tel.fixes.front().t;
    out.samples.push_back(tel.fixes.front());
    for (std::size_t i = 1; i < tel.fixes.size(); ++i) {
      const Fix& b = tel.fixes[i];
      Fix cur = tel.fixes[i - 1];
      const double eps = 1e-12 * std::max(1.0, std::abs(b.t));
      auto k = static_cast<long long>(std::floor((cur.t - t0) / dt_)) + 1;
      for (;; ++k) {
        const double s = t0 + static_cast<double>(k) * dt_;
        if (s >= b.t - eps) break;
        if (s <= cur.t) continue;
        const double frac = (s - cur.t) / (b.t - cur.t);
        const double sd = sigma_ * std::sqrt((s - cur.t) * (b.t - s) / (b.t - cur.t));
        Fix next{cur.x + frac * (b.x - cur.x), cur.y + frac * (b.y - cur.y), s};
        if (sd > 0.0) {
          next.x += sd * normal(rng);
          next.y += sd * normal(rng);
        }
        out.samples.push_back(next);
        cur = next;
      }
      out.samples.push_back(b);
    }
    return out;
  }

 private:
  double sigma_;
  double dt_;
};

inline std::vector<ContinuousPath> impute_paths(const Telemetry& tel, const PathImputer& imputer, std::size_t count,
                                                std::uint64_t seed, unsigned threads = 1) {
  if (count < 1) throw InputError("number of imputations must be at least 1");
  std::vector<ContinuousPath> out(count);
  detail::parallel_for(count, threads, [&](std::size_t p) { out[p] = imputer.impute_one(tel, seed, p); });
  return out;
}

inline std::vector<ContinuousPath> impute_paths(const Telemetry& tel, std::size_t count, double time_step, double sigma,
                                                std::uint64_t seed, unsigned threads = 1) {
  return impute_paths(tel, BrownianBridgeImputer(sigma, time_step), count, seed, threads);
}

// Sojourns shorter than this are merged away during discretization.
inline constexpr double kMinSojourn = 1e-9;

/**
 * Converts a piecewise-linear path into CTMC paths on the grid's valid cells.
 * Cell entry times come from exact segment/grid-line intersections (x-line
 * crossings ordered first on ties). Excursions off the grid or into no-data
 * cells split the path; each on-grid run becomes one CtmcPath whose final
 * residence is the censored time until the run ends.
 */
inline std::vector<CtmcPath> discretize(const ContinuousPath& path, const RasterGrid& grid) {
  const auto& g = grid.geometry();
  if (path.samples.empty()) throw InputError("cannot discretize an empty path");
  for (std::size_t i = 1; i < path.samples.size(); ++i)
    if (!(path.samples[i].t > path.samples[i - 1].t)) throw InputError("continuous path times must increase");

  auto fcol = [&](double x) { return static_cast<long long>(std::floor((x - g.x_origin) / g.cell_size)); };
  auto frow = [&](double y) { return static_cast<long long>(std::floor((y - g.y_origin) / g.cell_size)); };
  auto cell_of = [&](long long r, long long c) -> CellId {
    if (r < 0 || c < 0 || r >= g.nrows || c >= g.ncols) return kNoCell;
    const CellId id = g.cell(static_cast<int>(r), static_cast<int>(c));
    return grid.is_nodata(id) ? kNoCell : id;
  };

  struct Event {
    CellId cell;
    double t;
  };
  std::vector<Event> events;
  long long row = frow(path.samples.front().y);
  long long col = fcol(path.samples.front().x);
  events.push_back({cell_of(row, col), path.samples.front().t});

  struct Crossing {
    double s;
    int axis;  // 0: vertical grid line (column changes), 1: horizontal
    long long next;
  };
  std::vector<Crossing> xs;
  for (std::size_t i = 1; i < path.samples.size(); ++i) {
    const Fix& a = path.samples[i - 1];
    const Fix& b = path.samples[i];
    xs.clear();
    const double dx = b.x - a.x, dy = b.y - a.y;
    const long long ca = fcol(a.x), cb = fcol(b.x), ra = frow(a.y), rb = frow(b.y);
    if (cb > ca)
      for (long long k = ca + 1; k <= cb; ++k) xs.push_back({(g.x_origin + k * g.cell_size - a.x) / dx, 0, k});
    else if (cb < ca)
      for (long long k = ca; k > cb; --k) xs.push_back({(g.x_origin + k * g.cell_size - a.x) / dx, 0, k - 1});
    if (rb > ra)
      for (long long k = ra + 1; k <= rb; ++k) xs.push_back({(g.y_origin + k * g.cell_size - a.y) / dy, 1, k});
    else if (rb < ra)
      for (long long k = ra; k > rb; --k) xs.push_back({(g.y_origin + k * g.cell_size - a.y) / dy, 1, k - 1});
    std::stable_sort(xs.begin(), xs.end(), [](const Crossing& l, const Crossing& r) {
      return std::tie(l.s, l.axis) < std::tie(r.s, r.axis);
    });
    for (const auto& c : xs) {
      if (c.axis == 0)
        col = c.next;
      else
        row = c.next;
      const double s = std::clamp(c.s, 0.0, 1.0);
      const CellId id = cell_of(row, col);
      if (id == events.back().cell) continue;
      events.push_back({id, a.t + s * (b.t - a.t)});
    }
  }
  const double t_end = path.samples.back().t;

  std::vector<CtmcPath> runs;
  std::size_t i = 0;
  while (i < events.size()) {
    if (events[i].cell == kNoCell) {
      ++i;
      continue;
    }
    std::vector<CellId> cells;
    std::vector<double> entry;
    while (i < events.size() && events[i].cell != kNoCell) {
      cells.push_back(events[i].cell);
      entry.push_back(events[i].t);
      ++i;
    }
    const double run_end = i < events.size() ? events[i].t : t_end;

    // Remove sub-threshold sojourns while keeping the chain rook-connected.
    std::size_t k = 0;
    while (k + 1 < cells.size()) {
      const double tau = entry[k + 1] - entry[k];
      if (tau >= kMinSojourn) {
        ++k;
        continue;
      }
      if (k == 0) {
        // merge into the following sojourn
        cells.erase(cells.begin());
        entry.erase(entry.begin() + 1);
      } else if (cells[k - 1] == cells[k + 1]) {
        // A B A with a vanishing visit to B: one sojourn in A
        cells.erase(cells.begin() + k, cells.begin() + k + 2);
        entry.erase(entry.begin() + k, entry.begin() + k + 2);
        --k;
      } else {
        // corner crossing: keep B, borrow the minimum sojourn from the following cell
        entry[k + 1] = entry[k] + kMinSojourn;
        ++k;
      }
    }

    CtmcPath p;
    p.start_time = entry.front();
    p.cells = std::move(cells);
    for (std::size_t j = 0; j + 1 < entry.size(); ++j) p.residence_times.push_back(entry[j + 1] - entry[j]);
    p.final_residence = std::max(0.0, run_end - entry.back());
    runs.push_back(std::move(p));
  }
  if (runs.empty()) throw InputError("path lies entirely outside the grid's valid cells");
  return runs;
}

struct CellRC {
  int row = 0;
  int col = 0;
  friend bool operator==(const CellRC&, const CellRC&) = default;
};

/**
 * Stacked Poisson rows: one row per (sojourn, candidate move). Covariates
 * are stored row-major.
 */
struct ExpandedData {
  std::vector<std::string> labels;
  std::vector<double> z;
  std::vector<double> log_offset;
  std::vector<double> weight;
  std::vector<int> path_id;
  std::vector<CellRC> from;
  std::vector<CellRC> to;
  std::vector<double> time;
  std::vector<double> x;

  std::size_t rows() const { return z.size(); }
  int columns() const { return static_cast<int>(labels.size()); }
  const double* row(std::size_t r) const { return x.data() + r * labels.size(); }

  void reserve(std::size_t n) {
    z.reserve(n);
    log_offset.reserve(n);
    weight.reserve(n);
    path_id.reserve(n);
    from.reserve(n);
    to.reserve(n);
    time.reserve(n);
    x.reserve(n * labels.size());
  }

  void append(const ExpandedData& other) {
    z.insert(z.end(), other.z.begin(), other.z.end());
    log_offset.insert(log_offset.end(), other.log_offset.begin(), other.log_offset.end());
    weight.insert(weight.end(), other.weight.begin(), other.weight.end());
    path_id.insert(path_id.end(), other.path_id.begin(), other.path_id.end());
    from.insert(from.end(), other.from.begin(), other.from.end());
    to.insert(to.end(), other.to.begin(), other.to.end());
    time.insert(time.end(), other.time.begin(), other.time.end());
    x.insert(x.end(), other.x.begin(), other.x.end());
  }

  ExpandedData subset(const std::vector<std::size_t>& idx) const {
    ExpandedData out;
    out.labels = labels;
    out.reserve(idx.size());
    const auto p = labels.size();
    for (auto r : idx) {
      out.z.push_back(z[r]);
      out.log_offset.push_back(log_offset[r]);
      out.weight.push_back(weight[r]);
      out.path_id.push_back(path_id[r]);
      out.from.push_back(from[r]);
      out.to.push_back(to[r]);
      out.time.push_back(time[r]);
      out.x.insert(out.x.end(), x.begin() + r * p, x.begin() + (r + 1) * p);
    }
    return out;
  }
};

struct ExpandOptions {
  bool censor_final = true;
  int path_id = 0;
  double weight = 1.0;
};

/**
 * Poisson expansion of one CTMC path: for each sojourn and each candidate
 * move, z = 1 for the realised move and 0 otherwise, with offset log(tau).
 * A known censored final residence emits all-zero rows when censoring is on.
 */
inline ExpandedData expand(const CtmcPath& path, const DesignContext& ctx, const ExpandOptions& opt = {}) {
  if (path.cells.empty()) throw InputError("cannot expand an empty path");
  if (path.residence_times.size() + 1 != path.cells.size()) throw InputError("malformed path");
  const auto& g = ctx.geometry();
  ExpandedData out;
  out.labels = ctx.labels();
  const auto p = static_cast<std::size_t>(ctx.columns());
  std::vector<double> block;
  double t = path.start_time;
  const std::size_t n = path.cells.size();
  out.reserve(4 * n);
  for (std::size_t k = 0; k < n; ++k) {
    const bool last = k + 1 == n;
    double tau = 0.0;
    if (!last) {
      tau = path.residence_times[k];
      if (!(tau > 0.0)) throw InputError("zero-length sojourn at step " + std::to_string(k));
    } else if (opt.censor_final && path.final_residence && *path.final_residence > kMinSojourn) {
      tau = *path.final_residence;
    } else {
      break;
    }
    const CellId cur = path.cells[k];
    const MoveState state{cur, k ? path.cells[k - 1] : kNoCell, t};
    const auto cand = ctx.rows(state, block);
    int hit = -1;
    if (!last) {
      hit = cand.index_of(path.cells[k + 1]);
      if (hit < 0) throw InputError("path step " + std::to_string(k) + " is not a move between valid neighbours");
    }
    const double off = std::log(tau);
    for (int c = 0; c < cand.size(); ++c) {
      out.z.push_back(c == hit ? 1.0 : 0.0);
      out.log_offset.push_back(off);
      out.weight.push_back(opt.weight);
      out.path_id.push_back(opt.path_id);
      out.from.push_back({g.row_of(cur), g.col_of(cur)});
      out.to.push_back({g.row_of(cand[c].cell), g.col_of(cand[c].cell)});
      out.time.push_back(t);
      out.x.insert(out.x.end(), block.begin() + c * p, block.begin() + (c + 1) * p);
    }
    t += tau;
  }
  return out;
}

/// Row-wise concatenation with every weight set to 1/P.
inline ExpandedData stack(const std::vector<ExpandedData>& parts) {
  if (parts.empty()) throw InputError("nothing to stack");
  ExpandedData out;
  out.labels = parts.front().labels;
  std::size_t total = 0;
  for (const auto& e : parts) {
    if (e.labels != out.labels) throw InputError("cannot stack expansions with different columns");
    total += e.rows();
  }
  out.reserve(total);
  for (const auto& e : parts) out.append(e);
  const double w = 1.0 / static_cast<double>(parts.size());
  std::fill(out.weight.begin(), out.weight.end(), w);
  return out;
}

/// Expands every CTMC path of every imputation (path_id = imputation index) and stacks them.
inline ExpandedData expand_and_stack(const std::vector<std::vector<CtmcPath>>& per_imputation, const DesignContext& ctx,
                                     bool censor_final = true, unsigned threads = 1) {
  std::vector<ExpandedData> parts(per_imputation.size());
  detail::parallel_for(per_imputation.size(), threads, [&](std::size_t p) {
    ExpandedData e;
    e.labels = ctx.labels();
    for (const auto& path : per_imputation[p])
      e.append(expand(path, ctx, {censor_final, static_cast<int>(p), 1.0}));
    parts[p] = std::move(e);
  });
  return stack(parts);
}

}  // namespace ctmcgrid
