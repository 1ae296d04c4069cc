#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ctmcgrid/detail/format.hpp"
#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/model_spec.hpp"
#include "ctmcgrid/pipeline.hpp"
#include "ctmcgrid/spline.hpp"

namespace ctmcgrid {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrixMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline RowMatrixMap design_matrix(const ExpandedData& d) {
  return RowMatrixMap(d.x.data(), static_cast<Eigen::Index>(d.rows()), d.columns());
}

enum class FitStatus { converged, max_iterations, separation, failed };

inline std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iterations: return "max_iterations";
    case FitStatus::separation: return "separation";
    case FitStatus::failed: return "failed";
  }
  return "?";
}

inline FitStatus fit_status_from_string(const std::string& s) {
  if (s == "converged") return FitStatus::converged;
  if (s == "max_iterations") return FitStatus::max_iterations;
  if (s == "separation") return FitStatus::separation;
  if (s == "failed") return FitStatus::failed;
  throw InputError("unknown fit status '" + s + "'");
}

struct Convergence {
  int iterations = 0;
  double gradient_norm = 0.0;
  FitStatus status = FitStatus::failed;
};

enum class PenaltyKind { none, quadratic, l1 };

inline std::string to_string(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::none: return "none";
    case PenaltyKind::quadratic: return "quadratic";
    case PenaltyKind::l1: return "l1";
  }
  return "?";
}

/**
 * Penalty on the coefficient vector: (lambda/2) b'Omega b for quadratic,
 * lambda * sum |b_j| over masked (standardized) columns for l1.
 */
struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::none;
  double lambda = 0.0;
  MatrixXd omega;                // quadratic: p x p
  std::vector<bool> penalized;   // l1: which columns carry the penalty

  static PenaltySpec none() { return {}; }
  static PenaltySpec quadratic(MatrixXd omega, double lambda) {
    PenaltySpec s;
    s.kind = PenaltyKind::quadratic;
    s.omega = std::move(omega);
    s.lambda = lambda;
    return s;
  }
  static PenaltySpec l1(std::vector<bool> mask, double lambda) {
    PenaltySpec s;
    s.kind = PenaltyKind::l1;
    s.penalized = std::move(mask);
    s.lambda = lambda;
    return s;
  }
};

struct FitResult {
  std::vector<std::string> labels;
  std::vector<double> coefficients;
  std::vector<double> standard_errors;  // NaN where unavailable
  double log_likelihood = 0.0;
  double aic = 0.0;
  std::optional<double> lambda;
  double edf = 0.0;
  PenaltyKind penalty = PenaltyKind::none;
  Convergence convergence;
  std::optional<double> kkt_residual;  // l1 fits

  bool converged() const { return convergence.status == FitStatus::converged; }

  double coefficient(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return coefficients[i];
    throw std::out_of_range("no coefficient labelled '" + label + "'");
  }
  double standard_error(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return standard_errors[i];
    throw std::out_of_range("no coefficient labelled '" + label + "'");
  }
};

// ---------------------------------------------------------------------------
// Weighted Poisson log-likelihood with log offsets:
//   l(b) = sum_r w_r (z_r eta_r - exp(eta_r)),  eta_r = offset_r + x_r'b.

inline double poisson_log_likelihood(const ExpandedData& d, const VectorXd& beta) {
  const auto X = design_matrix(d);
  const VectorXd xb = X * beta;
  double ll = 0.0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const double eta = d.log_offset[r] + xb[static_cast<Eigen::Index>(r)];
    ll += d.weight[r] * (d.z[r] * eta - std::exp(eta));
  }
  return ll;
}

inline VectorXd poisson_score(const ExpandedData& d, const VectorXd& beta) {
  const auto X = design_matrix(d);
  const VectorXd xb = X * beta;
  VectorXd resid(static_cast<Eigen::Index>(d.rows()));
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    resid[i] = d.weight[r] * (d.z[r] - std::exp(d.log_offset[r] + xb[i]));
  }
  return X.transpose() * resid;
}

inline MatrixXd poisson_information(const ExpandedData& d, const VectorXd& beta) {
  const auto X = design_matrix(d);
  const VectorXd xb = X * beta;
  VectorXd w(static_cast<Eigen::Index>(d.rows()));
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    w[i] = d.weight[r] * std::exp(d.log_offset[r] + xb[i]);
  }
  MatrixXd h = MatrixXd::Zero(X.cols(), X.cols());
  h.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose() * w.cwiseSqrt().asDiagonal());
  return h.selfadjointView<Eigen::Lower>();
}

/// Penalized objective l(b) - (lambda/2) b'Omega b (or - lambda sum|b_j| for l1 on the given scale).
inline double penalized_objective(const ExpandedData& d, const VectorXd& beta, const PenaltySpec& pen) {
  double v = poisson_log_likelihood(d, beta);
  if (pen.kind == PenaltyKind::quadratic) v -= 0.5 * pen.lambda * beta.dot(pen.omega * beta);
  if (pen.kind == PenaltyKind::l1)
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (pen.penalized[static_cast<std::size_t>(j)]) v -= pen.lambda * std::abs(beta[j]);
  return v;
}

namespace detail {

// SPD solve; retries once with a 1e-10 diagonal jitter.
inline Eigen::LLT<MatrixXd> spd_factor(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  MatrixXd j = a;
  j.diagonal().array() += 1e-10;
  llt.compute(j);
  if (llt.info() != Eigen::Success) throw NumericalError("information matrix is not positive definite");
  return llt;
}

inline int constant_column(const ExpandedData& d) {
  const int p = d.columns();
  for (int j = 0; j < p; ++j) {
    bool all_one = d.rows() > 0;
    for (std::size_t r = 0; r < d.rows() && all_one; ++r) all_one = d.x[r * p + j] == 1.0;
    if (all_one) return j;
  }
  return -1;
}

inline VectorXd default_start(const ExpandedData& d) {
  VectorXd beta = VectorXd::Zero(d.columns());
  const int ic = constant_column(d);
  if (ic >= 0) {
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < d.rows(); ++r) {
      num += d.weight[r] * d.z[r];
      den += d.weight[r] * std::exp(d.log_offset[r]);
    }
    if (num > 0.0 && den > 0.0) beta[ic] = std::log(num / den);
  }
  return beta;
}

}  // namespace detail

struct FitOptions {
  int max_iterations = 100;
  double relative_tolerance = 1e-10;
  double gradient_tolerance = 1e-6;
  double separation_bound = 30.0;
  std::optional<VectorXd> start;
};

/**
 * Weighted (optionally quadratically penalized) Poisson regression by
 * Newton/IRLS with step halving. Standard errors come from the inverse of
 * the penalized information at the optimum; edf = tr(H (H + lambda Omega)^-1).
 */
inline FitResult fit_poisson_weighted(const ExpandedData& d, const PenaltySpec& pen = PenaltySpec::none(),
                                      const FitOptions& opt = {}) {
  if (pen.kind == PenaltyKind::l1) throw std::invalid_argument("use fit_lasso for l1 penalties");
  const int p = d.columns();
  if (d.rows() == 0) throw InputError("no data rows to fit");
  for (std::size_t r = 0; r < d.rows(); ++r) {
    if (d.z[r] != 0.0 && d.z[r] != 1.0) throw InputError("response must be 0/1");
    if (!(d.weight[r] > 0.0)) throw InputError("weights must be positive");
  }
  const bool quad = pen.kind == PenaltyKind::quadratic && pen.lambda > 0.0;
  if (pen.kind == PenaltyKind::quadratic && (pen.omega.rows() != p || pen.omega.cols() != p))
    throw std::invalid_argument("penalty matrix dimension does not match the design");

  auto penalized_score = [&](const VectorXd& b) {
    VectorXd g = poisson_score(d, b);
    if (quad) g -= pen.lambda * (pen.omega * b);
    return g;
  };
  auto penalized_info = [&](const VectorXd& b) {
    MatrixXd h = poisson_information(d, b);
    if (quad) h += pen.lambda * pen.omega;
    return h;
  };

  FitResult res;
  res.labels = d.labels;
  res.penalty = pen.kind;
  if (pen.kind == PenaltyKind::quadratic) res.lambda = pen.lambda;

  VectorXd beta = opt.start ? *opt.start : detail::default_start(d);
  if (beta.size() != p) throw std::invalid_argument("start vector has the wrong length");
  double obj = penalized_objective(d, beta, pen);
  VectorXd grad = penalized_score(beta);
  res.convergence.status = FitStatus::max_iterations;
  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    const auto llt = detail::spd_factor(penalized_info(beta));
    const VectorXd step = llt.solve(grad);
    // changes below this are rounding noise in the objective
    const double noise = 1e-13 * (1.0 + std::abs(obj));
    double t = 1.0;
    VectorXd cand = beta + step;
    double cand_obj = penalized_objective(d, cand, pen);
    while (!(cand_obj >= obj - noise) && t > 1e-12) {
      t *= 0.5;
      cand = beta + t * step;
      cand_obj = penalized_objective(d, cand, pen);
    }
    if (!(cand_obj >= obj - noise)) {
      // No ascent possible at working precision.
      if (grad.norm() < opt.gradient_tolerance) res.convergence.status = FitStatus::converged;
      break;
    }
    const double rel = std::abs(cand_obj - obj) / (std::abs(obj) + 1e-10);
    beta = cand;
    obj = cand_obj;
    grad = penalized_score(beta);
    if (beta.cwiseAbs().maxCoeff() > opt.separation_bound) {
      res.convergence.status = FitStatus::separation;
      ++iter;
      break;
    }
    if (rel < opt.relative_tolerance && grad.norm() < opt.gradient_tolerance) {
      res.convergence.status = FitStatus::converged;
      ++iter;
      // one polishing Newton step; quadratic convergence takes the error well below the tolerance
      const VectorXd polish = beta + detail::spd_factor(penalized_info(beta)).solve(grad);
      const double polish_obj = penalized_objective(d, polish, pen);
      if (polish_obj >= obj - 1e-13 * (1.0 + std::abs(obj))) {
        beta = polish;
        obj = polish_obj;
        grad = penalized_score(beta);
      }
      break;
    }
  }
  res.convergence.iterations = iter;
  res.convergence.gradient_norm = grad.norm();

  const MatrixXd h = poisson_information(d, beta);
  MatrixXd hp = h;
  if (quad) hp += pen.lambda * pen.omega;
  res.coefficients.assign(beta.data(), beta.data() + p);
  res.standard_errors.assign(static_cast<std::size_t>(p), std::numeric_limits<double>::quiet_NaN());
  try {
    const auto llt = detail::spd_factor(hp);
    const MatrixXd cov = llt.solve(MatrixXd::Identity(p, p));
    for (int j = 0; j < p; ++j) res.standard_errors[j] = std::sqrt(std::max(0.0, cov(j, j)));
    res.edf = quad ? (llt.solve(h)).trace() : static_cast<double>(p);
  } catch (const NumericalError&) {
    res.edf = static_cast<double>(p);
    res.convergence.status = FitStatus::failed;
  }
  res.log_likelihood = poisson_log_likelihood(d, beta);
  res.aic = -2.0 * res.log_likelihood + 2.0 * res.edf;
  return res;
}

/**
 * Roughness penalty of a spline basis: Omega_ij = integral of
 * phi_i''(t) phi_j''(t) dt, by Gauss-Legendre quadrature on each knot span.
 */
inline MatrixXd penalty_matrix(const SplineBasis1D& basis) {
  if (basis.degree() < 2) throw InputError("second-derivative penalty needs spline degree >= 2");
  const int k = basis.size();
  MatrixXd omega = MatrixXd::Zero(k, k);
  std::vector<double> nodes, weights;
  detail::gauss_legendre(std::max(2, basis.degree()), nodes, weights);
  const auto bp = basis.breakpoints();
  for (std::size_t s = 0; s + 1 < bp.size(); ++s) {
    const double a = bp[s], b = bp[s + 1];
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      const auto d2 = basis.derivative(mid + half * nodes[q], 2);
      const Eigen::Map<const VectorXd> v(d2.data(), k);
      omega.noalias() += (weights[q] * half) * (v * v.transpose());
    }
  }
  return 0.5 * (omega + omega.transpose());
}

/// Full p x p penalty with a roughness block for each varying-coefficient term.
inline MatrixXd varying_penalty(const ModelSpec& spec) {
  const int p = spec.column_count();
  MatrixXd omega = MatrixXd::Zero(p, p);
  int offset = (spec.intercept ? 1 : 0) + static_cast<int>(spec.motility.size() + spec.directional.size()) +
               (spec.autocovariate ? 1 : 0);
  for (const auto& v : spec.varying) {
    const int k = v.basis.size();
    if (v.basis.degree() >= 2) omega.block(offset, offset, k, k) = penalty_matrix(v.basis);
    offset += k;
  }
  return omega;
}

struct WaldTest {
  double z = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;  // false when the standard error is zero or unavailable
};

inline std::vector<WaldTest> wald_tests(const FitResult& fit) {
  std::vector<WaldTest> out(fit.coefficients.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double se = j < fit.standard_errors.size() ? fit.standard_errors[j] : std::numeric_limits<double>::quiet_NaN();
    if (!(se > 0.0) || !std::isfinite(se)) continue;
    out[j].z = fit.coefficients[j] / se;
    out[j].p_value = std::erfc(std::abs(out[j].z) / std::sqrt(2.0));
    out[j].defined = true;
  }
  return out;
}

// --- serialization -----------------------------------------------------------

namespace detail {

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::json fit_result_to_json(const FitResult& f) {
  nlohmann::json j;
  j["labels"] = f.labels;
  j["estimates"] = f.coefficients;
  nlohmann::json se = nlohmann::json::array();
  for (double s : f.standard_errors) se.push_back(detail::number_or_null(s));
  j["standard_errors"] = se;
  j["log_likelihood"] = detail::number_or_null(f.log_likelihood);
  j["aic"] = detail::number_or_null(f.aic);
  j["lambda"] = f.lambda ? nlohmann::json(*f.lambda) : nlohmann::json(nullptr);
  j["edf"] = f.edf;
  j["penalty"] = to_string(f.penalty);
  j["convergence"] = {{"iterations", f.convergence.iterations},
                      {"gradient_norm", detail::number_or_null(f.convergence.gradient_norm)},
                      {"status", to_string(f.convergence.status)}};
  if (f.kkt_residual) j["kkt_residual"] = *f.kkt_residual;
  return j;
}

inline FitResult fit_result_from_json(const nlohmann::json& j) {
  FitResult f;
  try {
    f.labels = j.at("labels").get<std::vector<std::string>>();
    f.coefficients = j.at("estimates").get<std::vector<double>>();
    for (const auto& s : j.value("standard_errors", nlohmann::json::array()))
      f.standard_errors.push_back(s.is_null() ? std::numeric_limits<double>::quiet_NaN() : s.get<double>());
    f.log_likelihood = j.value("log_likelihood", nlohmann::json(0.0)).is_null() ? 0.0 : j.value("log_likelihood", 0.0);
    f.edf = j.value("edf", 0.0);
    if (j.contains("lambda") && !j.at("lambda").is_null()) f.lambda = j.at("lambda").get<double>();
    const std::string pk = j.value("penalty", std::string("none"));
    f.penalty = pk == "quadratic" ? PenaltyKind::quadratic : pk == "l1" ? PenaltyKind::l1 : PenaltyKind::none;
    if (j.contains("convergence")) {
      const auto& c = j.at("convergence");
      f.convergence.iterations = c.value("iterations", 0);
      f.convergence.status = fit_status_from_string(c.value("status", std::string("failed")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("fit result: ") + e.what());
  }
  if (f.labels.size() != f.coefficients.size()) throw InputError("fit result: labels and estimates differ in length");
  return f;
}

/// label,estimate,std_error,z,p_value
inline std::string coefficient_table_csv(const FitResult& f) {
  std::ostringstream os;
  os << "label,estimate,std_error,z,p_value\n";
  const auto tests = wald_tests(f);
  auto num = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string("NA"); };
  for (std::size_t j = 0; j < f.labels.size(); ++j) {
    const double se = j < f.standard_errors.size() ? f.standard_errors[j] : std::numeric_limits<double>::quiet_NaN();
    os << f.labels[j] << ',' << num(f.coefficients[j]) << ',' << num(se) << ',' << num(tests[j].z) << ','
       << num(tests[j].p_value) << '\n';
  }
  return os.str();
}

}  // namespace ctmcgrid
