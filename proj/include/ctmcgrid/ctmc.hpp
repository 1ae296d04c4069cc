#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctmcgrid/covariates.hpp"
#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/path.hpp"

namespace ctmcgrid {

inline constexpr double kNegInfLogLik = -std::numeric_limits<double>::infinity();

/// Outgoing rates from one cell, one entry per candidate (E, N, W, S order, masked cells omitted).
struct RateRow {
  CellId from = kNoCell;
  NeighborList candidates;
  std::array<double, 4> rates{};
  double total_rate = 0.0;

  bool absorbing() const { return !(total_rate > 0.0); }
};

namespace detail {

inline void check_coefficients(const DesignContext& ctx, std::span<const double> beta) {
  if (static_cast<int>(beta.size()) != ctx.columns())
    throw std::invalid_argument("coefficient vector has length " + std::to_string(beta.size()) + ", model has " +
                                std::to_string(ctx.columns()) + " columns");
}

// Linear predictors x'beta for each candidate; scratch holds the design block.
inline NeighborList linear_predictors(const DesignContext& ctx, std::span<const double> beta, const MoveState& state,
                                      std::vector<double>& scratch, std::array<double, 4>& eta) {
  const auto cand = ctx.rows(state, scratch);
  const auto p = static_cast<std::size_t>(ctx.columns());
  for (int c = 0; c < cand.size(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += scratch[c * p + j] * beta[j];
    if (!std::isfinite(s)) throw NumericalError("non-finite linear predictor at cell " + std::to_string(state.cur));
    eta[c] = s;
  }
  return cand;
}

}  // namespace detail

/// alpha_ij = exp(x_ij' beta) for each rook neighbour j of state.cur.
inline RateRow transition_rates(const DesignContext& ctx, std::span<const double> beta, const MoveState& state) {
  detail::check_coefficients(ctx, beta);
  std::vector<double> scratch;
  std::array<double, 4> eta{};
  RateRow row;
  row.from = state.cur;
  row.candidates = detail::linear_predictors(ctx, beta, state, scratch, eta);
  for (int c = 0; c < row.candidates.size(); ++c) {
    row.rates[c] = std::exp(eta[c]);
    if (!std::isfinite(row.rates[c])) throw NumericalError("transition rate overflow at cell " + std::to_string(state.cur));
    row.total_rate += row.rates[c];
  }
  return row;
}

/// Jump probabilities alpha_ij / sum_k alpha_ik.
inline std::array<double, 4> transition_probabilities(const RateRow& row) {
  if (row.absorbing()) throw std::domain_error("cell " + std::to_string(row.from) + " is absorbing");
  std::array<double, 4> p{};
  for (int c = 0; c < row.candidates.size(); ++c) p[c] = row.rates[c] / row.total_rate;
  return p;
}

struct LikelihoodOptions {
  // Add the survival term of a known final (censored) residence.
  bool censor_final = true;
};

/**
 * Exact log-likelihood of a fully observed path:
 *   sum_t [ log alpha_{c_t c_{t+1}} - tau_t * sum_k alpha_{c_t k} ]
 * plus -tau_final * sum_k alpha_{c_T k} for a censored final residence.
 * A realised move with zero rate yields kNegInfLogLik.
 */
inline double path_log_likelihood(const CtmcPath& path, const DesignContext& ctx, std::span<const double> beta,
                                  const LikelihoodOptions& opt = {}) {
  detail::check_coefficients(ctx, beta);
  std::vector<double> scratch;
  std::array<double, 4> eta{};
  double ll = 0.0;
  double t = path.start_time;
  const std::size_t n = path.cells.size();
  for (std::size_t k = 0; k < n; ++k) {
    const bool last = k + 1 == n;
    double tau = 0.0;
    if (!last) {
      tau = path.residence_times[k];
    } else if (opt.censor_final && path.final_residence && *path.final_residence > 0.0) {
      tau = *path.final_residence;
    } else {
      break;
    }
    const MoveState state{path.cells[k], k ? path.cells[k - 1] : kNoCell, t};
    const auto cand = detail::linear_predictors(ctx, beta, state, scratch, eta);
    double total = 0.0;
    for (int c = 0; c < cand.size(); ++c) total += std::exp(eta[c]);
    ll -= tau * total;
    if (!last) {
      const int idx = cand.index_of(path.cells[k + 1]);
      if (idx < 0) return kNegInfLogLik;
      const double a = std::exp(eta[idx]);
      if (!(a > 0.0)) return kNegInfLogLik;
      ll += eta[idx];
      t += tau;
    }
  }
  return ll;
}

/// Analytic gradient of path_log_likelihood with respect to beta.
inline std::vector<double> path_log_likelihood_gradient(const CtmcPath& path, const DesignContext& ctx,
                                                        std::span<const double> beta,
                                                        const LikelihoodOptions& opt = {}) {
  detail::check_coefficients(ctx, beta);
  const auto p = static_cast<std::size_t>(ctx.columns());
  std::vector<double> grad(p, 0.0);
  std::vector<double> scratch;
  std::array<double, 4> eta{};
  double t = path.start_time;
  const std::size_t n = path.cells.size();
  for (std::size_t k = 0; k < n; ++k) {
    const bool last = k + 1 == n;
    double tau = 0.0;
    if (!last) {
      tau = path.residence_times[k];
    } else if (opt.censor_final && path.final_residence && *path.final_residence > 0.0) {
      tau = *path.final_residence;
    } else {
      break;
    }
    const MoveState state{path.cells[k], k ? path.cells[k - 1] : kNoCell, t};
    const auto cand = detail::linear_predictors(ctx, beta, state, scratch, eta);
    for (int c = 0; c < cand.size(); ++c) {
      const double w = tau * std::exp(eta[c]);
      for (std::size_t j = 0; j < p; ++j) grad[j] -= w * scratch[c * p + j];
    }
    if (!last) {
      const int idx = cand.index_of(path.cells[k + 1]);
      if (idx < 0) throw InputError("path step " + std::to_string(k) + " leaves the state space");
      for (std::size_t j = 0; j < p; ++j) grad[j] += scratch[idx * p + j];
      t += tau;
    }
  }
  return grad;
}

struct SimulationResult {
  CtmcPath path;
  bool absorbed = false;  // stopped early in a cell with no outgoing rate
};

/**
 * Gillespie simulation over [start_time, start_time + duration]. Rates are
 * re-evaluated at each jump and held constant through the sojourn. The time
 * between the last jump and the end of the window is stored as the
 * censored final residence.
 */
inline SimulationResult simulate_path(const DesignContext& ctx, std::span<const double> beta, CellId start_cell,
                                      double start_time, double duration, std::uint64_t seed) {
  detail::check_coefficients(ctx, beta);
  if (!ctx.grid().is_valid(start_cell)) throw InputError("start cell " + std::to_string(start_cell) + " is not in the state space");
  if (!(duration >= 0.0)) throw InputError("duration must be nonnegative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimulationResult out;
  out.path.start_time = start_time;
  out.path.cells.push_back(start_cell);
  const double end = start_time + duration;
  double t = start_time;
  CellId prev = kNoCell;
  std::vector<double> scratch;
  std::array<double, 4> eta{};
  for (;;) {
    const CellId cur = out.path.cells.back();
    const auto cand = detail::linear_predictors(ctx, beta, MoveState{cur, prev, t}, scratch, eta);
    std::array<double, 4> cum{};
    double total = 0.0;
    for (int c = 0; c < cand.size(); ++c) {
      total += std::exp(eta[c]);
      cum[c] = total;
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      if (out.path.cells.size() == 1 && cand.empty())
        throw InputError("start cell " + std::to_string(start_cell) + " is absorbing");
      out.absorbed = true;
      out.path.final_residence = end - t;
      break;
    }
    // 1 - U lies in (0, 1], so the log is finite.
    const double tau = -std::log(1.0 - unif(rng)) / total;
    if (t + tau > end) {
      out.path.final_residence = end - t;
      break;
    }
    const double u = unif(rng) * total;
    int pick = cand.size() - 1;
    for (int c = 0; c < cand.size(); ++c) {
      if (u < cum[c]) {
        pick = c;
        break;
      }
    }
    out.path.residence_times.push_back(tau);
    out.path.cells.push_back(cand[pick].cell);
    prev = cur;
    t += tau;
  }
  return out;
}

}  // namespace ctmcgrid
