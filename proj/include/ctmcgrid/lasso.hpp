#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "ctmcgrid/glm.hpp"

namespace ctmcgrid {

struct LassoOptions {
  int max_outer = 200;
  int max_sweeps = 100000;
  double coefficient_tolerance = 1e-8;  // sup-norm change between outer iterations
  double kkt_tolerance = 1e-6;
};

struct LassoPath {
  double lambda_max = 0.0;
  std::vector<double> lambdas;
  std::vector<FitResult> fits;
};

/**
 * Internal column scaling: weighted mean 0 (only when the design has a
 * constant column to absorb the shift) and weighted variance 1. Columns
 * with zero variance are held at zero.
 */
struct Standardization {
  VectorXd center;
  VectorXd scale;
  std::vector<bool> dead;
  int intercept = -1;

  static Standardization of(const ExpandedData& d) {
    Standardization s;
    const int p = d.columns();
    s.center = VectorXd::Zero(p);
    s.scale = VectorXd::Ones(p);
    s.dead.assign(static_cast<std::size_t>(p), false);
    s.intercept = detail::constant_column(d);
    double wsum = 0.0;
    for (double w : d.weight) wsum += w;
    for (int j = 0; j < p; ++j) {
      if (j == s.intercept) continue;
      double m = 0.0;
      for (std::size_t r = 0; r < d.rows(); ++r) m += d.weight[r] * d.x[r * p + j];
      m /= wsum;
      double v = 0.0, ms = 0.0;
      for (std::size_t r = 0; r < d.rows(); ++r) {
        const double x = d.x[r * p + j];
        v += d.weight[r] * (x - m) * (x - m);
        ms += d.weight[r] * x * x;
      }
      v /= wsum;
      ms /= wsum;
      if (s.intercept >= 0) {
        s.center[j] = m;
      } else {
        v = ms;  // scale only
      }
      if (!(v > 1e-24 * std::max(1.0, ms))) {
        s.dead[static_cast<std::size_t>(j)] = true;
        continue;
      }
      s.scale[j] = std::sqrt(v);
    }
    return s;
  }

  MatrixXd apply(const ExpandedData& d) const {
    MatrixXd xs = design_matrix(d);
    for (Eigen::Index j = 0; j < xs.cols(); ++j) {
      if (dead[static_cast<std::size_t>(j)]) {
        xs.col(j).setZero();
        continue;
      }
      if (j == intercept) continue;
      xs.col(j) = (xs.col(j).array() - center[j]) / scale[j];
    }
    return xs;
  }

  /// Standardized coefficients -> original scale.
  VectorXd unscale(const VectorXd& b) const {
    VectorXd beta = VectorXd::Zero(b.size());
    double shift = 0.0;
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      if (j == intercept || dead[static_cast<std::size_t>(j)]) continue;
      beta[j] = b[j] / scale[j];
      shift += beta[j] * center[j];
    }
    if (intercept >= 0) beta[intercept] = b[intercept] - shift;
    return beta;
  }
};

namespace detail {

struct LassoProblem {
  const ExpandedData& data;
  MatrixXd xs;
  std::vector<double> penalty_factor;  // 0 or 1 per column
  std::vector<bool> dead;

  VectorXd eta(const VectorXd& b) const {
    VectorXd e = xs * b;
    for (Eigen::Index r = 0; r < e.size(); ++r) e[r] += data.log_offset[static_cast<std::size_t>(r)];
    return e;
  }

  double loglik(const VectorXd& b) const {
    const VectorXd e = eta(b);
    double ll = 0.0;
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      ll += data.weight[r] * (data.z[r] * e[i] - std::exp(e[i]));
    }
    return ll;
  }

  double objective(const VectorXd& b, double lambda) const {
    double v = -loglik(b);
    for (Eigen::Index j = 0; j < b.size(); ++j) v += lambda * penalty_factor[static_cast<std::size_t>(j)] * std::abs(b[j]);
    return v;
  }

  VectorXd score(const VectorXd& b) const {
    const VectorXd e = eta(b);
    VectorXd resid(e.size());
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      resid[i] = data.weight[r] * (data.z[r] - std::exp(e[i]));
    }
    return xs.transpose() * resid;
  }

  MatrixXd information(const VectorXd& b) const {
    const VectorXd e = eta(b);
    VectorXd w(e.size());
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      w[i] = data.weight[r] * std::exp(e[i]);
    }
    MatrixXd h = MatrixXd::Zero(xs.cols(), xs.cols());
    h.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose() * w.cwiseSqrt().asDiagonal());
    return h.selfadjointView<Eigen::Lower>();
  }

  double kkt_residual(const VectorXd& b, double lambda) const {
    const VectorXd s = score(b);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (dead[jj]) continue;
      const double l = lambda * penalty_factor[jj];
      double r = 0.0;
      if (b[j] == 0.0)
        r = std::max(0.0, std::abs(s[j]) - l);
      else
        r = std::abs(s[j] - l * (b[j] > 0 ? 1.0 : -1.0));
      worst = std::max(worst, r);
    }
    return worst;
  }

  // Proximal Newton: coordinate descent on the quadratic model, then a backtracking step.
  Convergence solve(VectorXd& b, double lambda, const LassoOptions& opt) const {
    Convergence conv;
    conv.status = FitStatus::max_iterations;
    const Eigen::Index p = b.size();
    double obj = objective(b, lambda);
    int outer = 0;
    for (; outer < opt.max_outer; ++outer) {
      const VectorXd g = score(b);
      const MatrixXd h = information(b);
      // minimise -c'x + 1/2 x'Hx + lambda |x|_1 with c = g + H b
      const VectorXd c = g + h * b;
      VectorXd x = b;
      for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
          const auto jj = static_cast<std::size_t>(j);
          if (dead[jj] || !(h(j, j) > 0.0)) continue;
          const double partial = c[j] - h.row(j).dot(x) + h(j, j) * x[j];
          const double l = lambda * penalty_factor[jj];
          double nx = 0.0;
          if (partial > l)
            nx = (partial - l) / h(j, j);
          else if (partial < -l)
            nx = (partial + l) / h(j, j);
          max_change = std::max(max_change, std::abs(nx - x[j]) * std::max(1.0, h(j, j)));
          x[j] = nx;
        }
        if (max_change < 1e-13) break;
      }
      const VectorXd dir = x - b;
      double t = 1.0;
      VectorXd cand = x;
      double cand_obj = objective(cand, lambda);
      while (!(cand_obj <= obj + 1e-13 * std::abs(obj)) && t > 1e-10) {
        t *= 0.5;
        cand = b + t * dir;
        cand_obj = objective(cand, lambda);
      }
      const double change = (cand - b).cwiseAbs().maxCoeff();
      b = cand;
      obj = cand_obj;
      conv.iterations = outer + 1;
      if (change < opt.coefficient_tolerance && kkt_residual(b, lambda) < opt.kkt_tolerance) {
        conv.status = FitStatus::converged;
        break;
      }
      if (t <= 1e-10) break;
    }
    conv.gradient_norm = kkt_residual(b, lambda);
    if (conv.status != FitStatus::converged && conv.gradient_norm < opt.kkt_tolerance) conv.status = FitStatus::converged;
    return conv;
  }
};

}  // namespace detail

/**
 * LASSO path for the weighted Poisson likelihood: maximise
 * l(b) - lambda * sum_{j penalized} |b_j| with b on the standardized scale,
 * for each lambda of a decreasing grid, warm-starting along the grid.
 * Coefficients are reported on the original scale.
 */
inline LassoPath fit_lasso(const ExpandedData& d, const std::vector<double>& lambdas, std::vector<bool> penalized,
                           const LassoOptions& opt = {}) {
  const int p = d.columns();
  if (static_cast<int>(penalized.size()) != p) throw std::invalid_argument("penalty mask length does not match the design");
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    if (lambdas[i] > lambdas[i - 1]) throw InputError("lambda grid must be decreasing");
  for (double l : lambdas)
    if (!(l >= 0.0)) throw InputError("lambda must be nonnegative");

  const auto stdz = Standardization::of(d);
  if (stdz.intercept >= 0) penalized[static_cast<std::size_t>(stdz.intercept)] = false;
  detail::LassoProblem prob{d, stdz.apply(d), {}, stdz.dead};
  for (bool b : penalized) prob.penalty_factor.push_back(b ? 1.0 : 0.0);

  LassoPath out;
  // Fit with every penalized coefficient at zero to get lambda_max.
  VectorXd b = VectorXd::Zero(p);
  if (stdz.intercept >= 0) b[stdz.intercept] = detail::default_start(d)[stdz.intercept];
  {
    detail::LassoProblem unpen = prob;
    for (int j = 0; j < p; ++j)
      if (penalized[j]) unpen.dead[static_cast<std::size_t>(j)] = true;
    for (auto& f : unpen.penalty_factor) f = 0.0;
    unpen.solve(b, 0.0, opt);
    const VectorXd s = prob.score(b);
    for (int j = 0; j < p; ++j)
      if (penalized[j] && !prob.dead[static_cast<std::size_t>(j)]) out.lambda_max = std::max(out.lambda_max, std::abs(s[j]));
  }

  out.lambdas = lambdas;
  for (double lambda : lambdas) {
    FitResult f;
    f.labels = d.labels;
    f.penalty = PenaltyKind::l1;
    f.lambda = lambda;
    f.convergence = prob.solve(b, lambda, opt);
    f.kkt_residual = f.convergence.gradient_norm;
    const VectorXd beta = stdz.unscale(b);
    f.coefficients.assign(beta.data(), beta.data() + p);
    f.standard_errors.assign(static_cast<std::size_t>(p), std::numeric_limits<double>::quiet_NaN());
    f.log_likelihood = prob.loglik(b);
    int nonzero = 0;
    for (int j = 0; j < p; ++j) nonzero += b[j] != 0.0 ? 1 : 0;
    f.edf = nonzero;
    f.aic = -2.0 * f.log_likelihood + 2.0 * f.edf;
    out.fits.push_back(std::move(f));
  }
  return out;
}

/// Geometric grid from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_grid(double lambda_max, int n, double ratio = 1e-3) {
  std::vector<double> g;
  if (n == 1) return {lambda_max};
  for (int i = 0; i < n; ++i) g.push_back(lambda_max * std::pow(ratio, static_cast<double>(i) / (n - 1)));
  return g;
}

/**
 * Unpenalized refit on the support of an l1 fit; dropped columns report a
 * zero estimate and no standard error.
 */
inline FitResult relaxed_refit(const ExpandedData& d, const FitResult& l1_fit, const FitOptions& opt = {}) {
  const int p = d.columns();
  std::vector<int> keep;
  for (int j = 0; j < p; ++j)
    if (l1_fit.coefficients[j] != 0.0) keep.push_back(j);
  ExpandedData sub;
  sub.labels.reserve(keep.size());
  for (int j : keep) sub.labels.push_back(d.labels[j]);
  sub.z = d.z;
  sub.log_offset = d.log_offset;
  sub.weight = d.weight;
  sub.path_id = d.path_id;
  sub.from = d.from;
  sub.to = d.to;
  sub.time = d.time;
  sub.x.reserve(d.rows() * keep.size());
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (int j : keep) sub.x.push_back(d.x[r * p + j]);

  FitResult res;
  res.labels = d.labels;
  res.coefficients.assign(static_cast<std::size_t>(p), 0.0);
  res.standard_errors.assign(static_cast<std::size_t>(p), std::numeric_limits<double>::quiet_NaN());
  res.penalty = PenaltyKind::l1;
  res.lambda = l1_fit.lambda;
  if (keep.empty()) {
    res.log_likelihood = poisson_log_likelihood(d, VectorXd::Zero(p));
    res.aic = -2.0 * res.log_likelihood;
    res.convergence.status = FitStatus::converged;
    return res;
  }
  const FitResult inner = fit_poisson_weighted(sub, PenaltySpec::none(), opt);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    res.coefficients[keep[k]] = inner.coefficients[k];
    res.standard_errors[keep[k]] = inner.standard_errors[k];
  }
  res.log_likelihood = inner.log_likelihood;
  res.edf = inner.edf;
  res.aic = inner.aic;
  res.convergence = inner.convergence;
  return res;
}

}  // namespace ctmcgrid
