#pragma once

// Shared generators and independent reference implementations for tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ctmcgrid.hpp"

namespace testsupport {

using namespace ctmcgrid;

inline GridGeometry unit_geometry(int nrows, int ncols, double cell = 1.0) {
  return GridGeometry{nrows, ncols, 0.0, 0.0, cell};
}

inline RasterGrid random_layer(const GridGeometry& g, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(g.size()));
  for (auto& x : v) x = u(rng);
  return RasterGrid(g, std::move(v));
}

/// Random nearest-neighbour walk on the valid cells, exponential residence times.
inline CtmcPath random_walk(const RasterGrid& grid, std::mt19937_64& rng, int transitions, double start_time = 0.0) {
  const auto& g = grid.geometry();
  std::uniform_int_distribution<CellId> pick(0, g.size() - 1);
  std::exponential_distribution<double> tau(1.5);
  CtmcPath p;
  p.start_time = start_time;
  CellId c;
  do c = pick(rng);
  while (!grid.is_valid(c) || neighbors(c, grid).empty());
  p.cells.push_back(c);
  for (int k = 0; k < transitions; ++k) {
    const auto nb = neighbors(p.cells.back(), grid);
    std::uniform_int_distribution<int> which(0, nb.size() - 1);
    p.cells.push_back(nb[which(rng)].cell);
    p.residence_times.push_back(0.01 + tau(rng));
  }
  p.final_residence = 0.01 + tau(rng);
  return p;
}

/// Textbook recursive Cox-de Boor B_{i,k}(t) on a knot vector (right-continuous spans).
inline double naive_bspline(int i, int k, double t, const std::vector<double>& u, double right_end) {
  if (k == 0) {
    if (t == right_end) {
      // the last non-empty span owns the right endpoint
      int last = static_cast<int>(u.size()) - 2;
      while (last > 0 && !(u[last] < u[last + 1])) --last;
      return i == last ? 1.0 : 0.0;
    }
    return (u[i] <= t && t < u[i + 1]) ? 1.0 : 0.0;
  }
  double a = 0.0, b = 0.0;
  if (u[i + k] > u[i]) a = (t - u[i]) / (u[i + k] - u[i]) * naive_bspline(i, k - 1, t, u, right_end);
  if (u[i + k + 1] > u[i + 1])
    b = (u[i + k + 1] - t) / (u[i + k + 1] - u[i + 1]) * naive_bspline(i + 1, k - 1, t, u, right_end);
  return a + b;
}

/// Second derivative of B_{i,k} by differentiating the recursion twice.
inline double naive_bspline_d(int i, int k, double t, const std::vector<double>& u, double right_end, int order) {
  if (order == 0) return naive_bspline(i, k, t, u, right_end);
  if (k == 0) return 0.0;
  double a = 0.0, b = 0.0;
  if (u[i + k] > u[i]) a = k / (u[i + k] - u[i]) * naive_bspline_d(i, k - 1, t, u, right_end, order - 1);
  if (u[i + k + 1] > u[i + 1])
    b = k / (u[i + k + 1] - u[i + 1]) * naive_bspline_d(i + 1, k - 1, t, u, right_end, order - 1);
  return a - b;
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> xs, Cdf&& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

/// Asymptotic p-value P(K > sqrt(n) D) with the Stephens small-sample correction.
inline double ks_p_value(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

/// Expansion of one Gillespie path started at the grid centre.
inline ExpandedData simulated_expansion(const DesignContext& ctx, const std::vector<double>& beta, double duration,
                                        std::uint64_t seed, bool censor_final = true) {
  const auto& g = ctx.geometry();
  const auto sim = simulate_path(ctx, beta, g.cell(g.nrows / 2, g.ncols / 2), 0.0, duration, seed);
  return expand(sim.path, ctx, {censor_final, 0, 1.0});
}

/// Cell-centre fixes taken every `every` jumps, plus the end of the path.
inline Telemetry telemetry_every(const CtmcPath& path, const GridGeometry& g, std::size_t every) {
  Telemetry tel;
  const auto entry = path.entry_times();
  for (std::size_t k = 0; k < path.cells.size(); k += every)
    tel.fixes.push_back({g.center_x(path.cells[k]), g.center_y(path.cells[k]), entry[k]});
  const double end = path.end_time();
  if (end > tel.fixes.back().t) tel.fixes.push_back({g.center_x(path.cells.back()), g.center_y(path.cells.back()), end});
  return tel;
}

/// Coefficients with sum_i c_i B_i(t) = a + b t (Greville abscissae).
inline std::vector<double> linear_coefficients(const SplineBasis1D& basis, double a, double b) {
  const auto& u = basis.knots();
  const int k = basis.degree();
  std::vector<double> c(static_cast<std::size_t>(basis.size()));
  for (int i = 0; i < basis.size(); ++i) {
    double xi = 0.0;
    for (int m = 1; m <= k; ++m) xi += u[i + m];
    c[i] = a + b * xi / k;
  }
  return c;
}

/// Weighted-moment standardized design, computed directly from the rows.
inline Eigen::MatrixXd standardized_design(const ExpandedData& d, bool center) {
  const int p = d.columns();
  Eigen::MatrixXd xs(static_cast<Eigen::Index>(d.rows()), p);
  double wsum = 0.0;
  for (double w : d.weight) wsum += w;
  for (int j = 0; j < p; ++j) {
    double m = 0.0, m2 = 0.0;
    for (std::size_t r = 0; r < d.rows(); ++r) {
      m += d.weight[r] * d.x[r * p + j] / wsum;
      m2 += d.weight[r] * d.x[r * p + j] * d.x[r * p + j] / wsum;
    }
    const bool constant = m2 - m * m < 1e-14;
    const double c = center && !constant ? m : 0.0;
    const double s = constant ? 1.0 : std::sqrt(m2 - c * (2 * m - c));
    for (std::size_t r = 0; r < d.rows(); ++r) xs(static_cast<Eigen::Index>(r), j) = (d.x[r * p + j] - c) / s;
  }
  return xs;
}

/// Temporary directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("ctmcgrid_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace testsupport
