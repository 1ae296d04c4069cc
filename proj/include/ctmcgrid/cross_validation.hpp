#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "ctmcgrid/glm.hpp"
#include "ctmcgrid/lasso.hpp"

namespace ctmcgrid {

/// Weighted Poisson deviance 2 sum w [z log(z/mu) - (z - mu)].
inline double poisson_deviance(const ExpandedData& d, const VectorXd& beta) {
  const auto X = design_matrix(d);
  const VectorXd xb = X * beta;
  double dev = 0.0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const double mu = std::exp(d.log_offset[r] + xb[static_cast<Eigen::Index>(r)]);
    const double z = d.z[r];
    const double term = z > 0.0 ? z * std::log(z / mu) - (z - mu) : mu;
    dev += 2.0 * d.weight[r] * term;
  }
  return dev;
}

/**
 * Blocked fold labels: sojourn blocks (consecutive rows sharing path, time
 * and origin cell) are ranked by time and cut into `folds` contiguous time
 * ranges shared by all paths. Folds without any transition are merged into
 * a neighbour, with a warning.
 */
inline std::vector<int> blocked_folds(const ExpandedData& d, int folds, std::vector<std::string>* warnings = nullptr) {
  if (folds < 2) throw InputError("cross-validation needs at least two folds");
  struct Block {
    double time;
    int path;
    std::size_t first;
    std::size_t last;
    double transitions;
  };
  std::vector<Block> blocks;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    if (!blocks.empty()) {
      auto& b = blocks.back();
      const std::size_t f = b.first;
      if (d.path_id[r] == d.path_id[f] && d.time[r] == d.time[f] && d.from[r] == d.from[f] && b.last + 1 == r) {
        b.last = r;
        b.transitions += d.z[r];
        continue;
      }
    }
    blocks.push_back({d.time[r], d.path_id[r], r, r, d.z[r]});
  }
  std::vector<std::size_t> order(blocks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(blocks[a].time, blocks[a].path) < std::tie(blocks[b].time, blocks[b].path);
  });
  std::vector<int> block_fold(blocks.size());
  const std::size_t nb = blocks.size();
  for (std::size_t rank = 0; rank < nb; ++rank)
    block_fold[order[rank]] = static_cast<int>(rank * static_cast<std::size_t>(folds) / std::max<std::size_t>(nb, 1));

  // Merge folds with no transitions into a neighbour, then renumber.
  std::vector<double> trans(static_cast<std::size_t>(folds), 0.0);
  for (std::size_t b = 0; b < nb; ++b) trans[block_fold[b]] += blocks[b].transitions;
  std::vector<int> remap(static_cast<std::size_t>(folds));
  std::iota(remap.begin(), remap.end(), 0);
  for (int f = 0; f < folds; ++f) {
    if (trans[f] > 0.0) continue;
    int target = f > 0 ? remap[f - 1] : -1;
    if (target < 0) {
      for (int g = f + 1; g < folds; ++g)
        if (trans[g] > 0.0) {
          target = g;
          break;
        }
    }
    if (target < 0) target = 0;
    if (warnings) warnings->push_back("fold " + std::to_string(f) + " has no transitions; merged into fold " + std::to_string(target));
    for (int& m : remap)
      if (m == f) m = target;
  }
  std::vector<int> uniq(remap);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<int> row_fold(d.rows());
  for (std::size_t b = 0; b < nb; ++b) {
    const int f = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), remap[block_fold[b]]) - uniq.begin());
    for (std::size_t r = blocks[b].first; r <= blocks[b].last; ++r) row_fold[r] = f;
  }
  return row_fold;
}

struct CvPoint {
  double lambda = 0.0;
  double mean_deviance = 0.0;
  std::vector<double> fold_deviance;
};

struct CvResult {
  double best_lambda = 0.0;
  std::vector<CvPoint> curve;
  int folds = 0;
  std::vector<std::string> warnings;
};

/**
 * Blocked cross-validation of the penalty weight. `family` supplies the
 * penalty kind and its Omega (quadratic) or mask (l1); its lambda is ignored.
 * Score is the held-out weighted deviance averaged over folds; ties go to
 * the larger lambda.
 */
inline CvResult cross_validate(const ExpandedData& d, const PenaltySpec& family, std::vector<double> lambdas, int folds,
                               const FitOptions& fit_opt = {}, const LassoOptions& lasso_opt = {}) {
  if (lambdas.empty()) throw InputError("lambda grid is empty");
  if (family.kind == PenaltyKind::none) throw InputError("cross-validation needs a penalty family");
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  CvResult res;
  const auto row_fold = blocked_folds(d, folds, &res.warnings);
  res.folds = row_fold.empty() ? 0 : *std::max_element(row_fold.begin(), row_fold.end()) + 1;
  res.curve.resize(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) res.curve[i].lambda = lambdas[i];

  for (int f = 0; f < res.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < d.rows(); ++r) (row_fold[r] == f ? test : train).push_back(r);
    const auto dtrain = d.subset(train);
    const auto dtest = d.subset(test);
    if (family.kind == PenaltyKind::quadratic) {
      std::optional<VectorXd> warm;
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        FitOptions o = fit_opt;
        if (warm) o.start = warm;
        const auto fit = fit_poisson_weighted(dtrain, PenaltySpec::quadratic(family.omega, lambdas[i]), o);
        const VectorXd beta = Eigen::Map<const VectorXd>(fit.coefficients.data(), d.columns());
        warm = beta;
        res.curve[i].fold_deviance.push_back(poisson_deviance(dtest, beta));
      }
    } else {
      const auto path = fit_lasso(dtrain, lambdas, family.penalized, lasso_opt);
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const VectorXd beta = Eigen::Map<const VectorXd>(path.fits[i].coefficients.data(), d.columns());
        res.curve[i].fold_deviance.push_back(poisson_deviance(dtest, beta));
      }
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (auto& pt : res.curve) {
    pt.mean_deviance = std::accumulate(pt.fold_deviance.begin(), pt.fold_deviance.end(), 0.0) /
                       static_cast<double>(pt.fold_deviance.size());
    // Curve is in decreasing lambda order, so strict < keeps the larger lambda on ties.
    if (pt.mean_deviance < best) {
      best = pt.mean_deviance;
      res.best_lambda = pt.lambda;
    }
  }
  return res;
}

}  // namespace ctmcgrid
