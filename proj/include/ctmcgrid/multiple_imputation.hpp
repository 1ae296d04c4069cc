#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "ctmcgrid/glm.hpp"

namespace ctmcgrid {

// Pooled multiple-imputation estimate: total = W + (1 + 1/P) B.
struct PooledEstimate {
  std::vector<std::string> labels;
  std::vector<double> mean;
  std::vector<double> within;   // W: mean within-fit variance
  std::vector<double> between;  // B: variance of the estimates across fits
  std::vector<double> total;

  std::vector<double> standard_errors() const {
    std::vector<double> se;
    for (double t : total) se.push_back(std::sqrt(t));
    return se;
  }
};

inline PooledEstimate rubin_combine(const std::vector<FitResult>& fits) {
  if (fits.size() < 2) throw InputError("Rubin's rules need at least two fits");
  const auto& labels = fits.front().labels;
  for (const auto& f : fits)
    if (f.labels != labels) throw InputError("fits to be pooled have different coefficient labels");
  const std::size_t p = labels.size();
  const double m = static_cast<double>(fits.size());
  PooledEstimate out;
  out.labels = labels;
  out.mean.assign(p, 0.0);
  out.within.assign(p, 0.0);
  out.between.assign(p, 0.0);
  out.total.assign(p, 0.0);
  for (const auto& f : fits)
    for (std::size_t j = 0; j < p; ++j) {
      out.mean[j] += f.coefficients[j] / m;
      out.within[j] += f.standard_errors[j] * f.standard_errors[j] / m;
    }
  for (const auto& f : fits)
    for (std::size_t j = 0; j < p; ++j) {
      const double dv = f.coefficients[j] - out.mean[j];
      out.between[j] += dv * dv / (m - 1.0);
    }
  for (std::size_t j = 0; j < p; ++j) out.total[j] = out.within[j] + (1.0 + 1.0 / m) * out.between[j];
  return out;
}

/// Splits stacked data by path_id and fits each imputation on its own (unit weights).
inline std::vector<FitResult> fit_each_imputation(const ExpandedData& stacked, const FitOptions& opt = {}) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < stacked.rows(); ++r) groups[stacked.path_id[r]].push_back(r);
  std::vector<FitResult> out;
  for (const auto& [id, rows] : groups) {
    auto part = stacked.subset(rows);
    std::fill(part.weight.begin(), part.weight.end(), 1.0);
    out.push_back(fit_poisson_weighted(part, PenaltySpec::none(), opt));
  }
  return out;
}

}  // namespace ctmcgrid
