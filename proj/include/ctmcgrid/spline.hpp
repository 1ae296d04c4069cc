#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctmcgrid/errors.hpp"

namespace ctmcgrid {

/**
 * B-spline basis of arbitrary degree over a full (possibly clamped) knot
 * vector. The domain is [knots[degree], knots[size()]]; evaluation is by the
 * Cox-de Boor recursion, with the right endpoint assigned to the last
 * non-empty span so clamped bases interpolate at both ends.
 */
class SplineBasis1D {
 public:
  SplineBasis1D() : SplineBasis1D(0, {0.0, 1.0}) {}

  SplineBasis1D(int degree, std::vector<double> knots) : degree_(degree), knots_(std::move(knots)) {
    if (degree_ < 0) throw InputError("spline degree must be nonnegative");
    if (static_cast<int>(knots_.size()) < 2 * degree_ + 2)
      throw InputError("knot vector too short for degree " + std::to_string(degree_));
    for (std::size_t i = 1; i < knots_.size(); ++i)
      if (!(knots_[i] >= knots_[i - 1])) throw InputError("knots must be nondecreasing");
    if (!(t_max() > t_min())) throw InputError("spline domain is empty");
  }

  /// Clamped basis with `n_basis` functions and equally spaced interior knots.
  static SplineBasis1D uniform(double t_min, double t_max, int n_basis, int degree = 3) {
    if (!(t_max > t_min)) throw InputError("spline domain must satisfy t_min < t_max");
    if (n_basis < degree + 1)
      throw InputError("n_basis must be at least degree + 1 (got " + std::to_string(n_basis) + ")");
    const int interior = n_basis - degree - 1;
    std::vector<double> k;
    k.reserve(static_cast<std::size_t>(n_basis + degree + 1));
    for (int i = 0; i <= degree; ++i) k.push_back(t_min);
    for (int i = 1; i <= interior; ++i) k.push_back(t_min + (t_max - t_min) * i / (interior + 1));
    for (int i = 0; i <= degree; ++i) k.push_back(t_max);
    return SplineBasis1D(degree, std::move(k));
  }

  int degree() const { return degree_; }
  int size() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  const std::vector<double>& knots() const { return knots_; }
  double t_min() const { return knots_[degree_]; }
  double t_max() const { return knots_[knots_.size() - degree_ - 1]; }

  bool in_domain(double t) const { return t >= t_min() && t <= t_max(); }
  double clamp(double t) const { return std::clamp(t, t_min(), t_max()); }

  std::vector<double> evaluate(double t) const { return derivative(t, 0); }

  std::vector<double> evaluate_clamped(double t) const { return derivative(clamp(t), 0); }

  /// Order-`order` derivative of every basis function at t.
  std::vector<double> derivative(double t, int order) const {
    if (!std::isfinite(t) || !in_domain(t))
      throw InputError("spline argument " + std::to_string(t) + " outside domain [" + std::to_string(t_min()) +
                       ", " + std::to_string(t_max()) + "]");
    if (order < 0) throw std::invalid_argument("negative derivative order");
    if (order > degree_) return std::vector<double>(static_cast<std::size_t>(size()), 0.0);
    return derivs(t, span(t), degree_, order);
  }

  /// Index mu with knots[mu] <= t < knots[mu+1] (last non-empty span at t_max).
  int span(double t) const {
    const int last = size() - 1;
    if (t >= t_max()) {
      int mu = last;
      while (mu > degree_ && knots_[mu] == knots_[mu + 1]) --mu;
      return mu;
    }
    auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + last + 2, t);
    return static_cast<int>(it - knots_.begin()) - 1;
  }

  /// Unique breakpoints of the domain (knot spans of positive length).
  std::vector<double> breakpoints() const {
    std::vector<double> b;
    for (int i = degree_; i <= size(); ++i)
      if (b.empty() || knots_[i] > b.back()) b.push_back(knots_[i]);
    return b;
  }

  friend bool operator==(const SplineBasis1D&, const SplineBasis1D&) = default;

 private:
  // Dense values of all degree-q basis functions (there are m - q - 1 of them).
  std::vector<double> values(double t, int mu, int q) const {
    const int m = static_cast<int>(knots_.size());
    std::vector<double> n(static_cast<std::size_t>(m - 1), 0.0);
    n[mu] = 1.0;
    for (int d = 1; d <= q; ++d) {
      for (int i = 0; i < m - d - 1; ++i) {
        double v = 0.0;
        const double l = knots_[i + d] - knots_[i];
        const double r = knots_[i + d + 1] - knots_[i + 1];
        if (l > 0) v += (t - knots_[i]) / l * n[i];
        if (r > 0) v += (knots_[i + d + 1] - t) / r * n[i + 1];
        n[i] = v;
      }
      n.pop_back();
    }
    return n;
  }

  std::vector<double> derivs(double t, int mu, int p, int order) const {
    if (order == 0) return values(t, mu, p);
    auto lower = derivs(t, mu, p - 1, order - 1);
    const int m = static_cast<int>(knots_.size());
    std::vector<double> out(static_cast<std::size_t>(m - p - 1), 0.0);
    for (int i = 0; i < m - p - 1; ++i) {
      double v = 0.0;
      const double l = knots_[i + p] - knots_[i];
      const double r = knots_[i + p + 1] - knots_[i + 1];
      if (l > 0) v += lower[i] / l;
      if (r > 0) v -= lower[i + 1] / r;
      out[i] = p * v;
    }
    return out;
  }

  int degree_;
  std::vector<double> knots_;
};

/// Product of each basis value with a base covariate (varying-coefficient columns).
inline std::vector<double> expand_varying_term(double base_column, double t, const SplineBasis1D& basis) {
  auto phi = basis.evaluate(t);
  for (auto& v : phi) v *= base_column;
  return phi;
}

// Tensor-product basis; function k = iy * nx + ix.
class SplineBasis2D {
 public:
  SplineBasis2D() = default;
  SplineBasis2D(SplineBasis1D x, SplineBasis1D y) : x_(std::move(x)), y_(std::move(y)) {}

  const SplineBasis1D& x_basis() const { return x_; }
  const SplineBasis1D& y_basis() const { return y_; }
  int size() const { return x_.size() * y_.size(); }

  std::vector<double> evaluate(double x, double y) const {
    const auto bx = x_.evaluate_clamped(x);
    const auto by = y_.evaluate_clamped(y);
    std::vector<double> out(static_cast<std::size_t>(size()));
    for (int iy = 0; iy < y_.size(); ++iy)
      for (int ix = 0; ix < x_.size(); ++ix) out[iy * x_.size() + ix] = bx[ix] * by[iy];
    return out;
  }

  friend bool operator==(const SplineBasis2D&, const SplineBasis2D&) = default;

 private:
  SplineBasis1D x_;
  SplineBasis1D y_;
};

namespace detail {

// Gauss-Legendre nodes/weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  const double pi = std::acos(-1.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0, p1 = x;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

}  // namespace detail

}  // namespace ctmcgrid
