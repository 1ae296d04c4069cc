#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <Eigen/Eigenvalues>

#include "support.hpp"

using namespace ctmcgrid;
using testsupport::unit_geometry;

namespace {

// Intercept plus `k` random directional layers on an n x n grid.
struct NoiseModel {
  ModelSpec spec;
  std::optional<DesignContext> ctx;

  NoiseModel(int n, int k, std::mt19937_64& rng) {
    const auto g = unit_geometry(n, n);
    std::map<std::string, RasterGrid> layers;
    for (int j = 0; j < k; ++j) {
      const std::string name = "d" + std::to_string(j);
      spec.directional.push_back({name, name});
      layers.emplace(name, testsupport::random_layer(g, rng));
    }
    ctx.emplace(spec, RasterGrid(g, 0.0), layers);
  }
};

VectorXd as_vector(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

ExpandedData duplicated_half_weights(const ExpandedData& d) {
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < d.rows(); ++r) idx.insert(idx.end(), {r, r});
  auto out = d.subset(idx);
  for (auto& w : out.weight) w *= 0.5;
  return out;
}

// Deviance written out term by term from the rows.
double reference_deviance(const ExpandedData& d, const std::vector<double>& beta) {
  double dev = 0.0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    double eta = d.log_offset[r];
    for (int j = 0; j < d.columns(); ++j) eta += d.row(r)[j] * beta[j];
    const double mu = std::exp(eta);
    dev += 2.0 * d.weight[r] * (d.z[r] == 1.0 ? -std::log(mu) - 1.0 + mu : mu);
  }
  return dev;
}

}  // namespace

// ---------------------------------------------------------------------------
// weighted Poisson IRLS

TEST(PoissonFit, InterceptOnlyMatchesClosedForm) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  ExpandedData d;
  d.labels = {"(intercept)"};
  double num = 0.0, den = 0.0;
  for (int r = 0; r < 200; ++r) {
    const double tau = u(rng), w = u(rng), z = r % 7 == 0 ? 1.0 : 0.0;
    d.z.push_back(z);
    d.log_offset.push_back(std::log(tau));
    d.weight.push_back(w);
    d.path_id.push_back(0);
    d.from.push_back({0, 0});
    d.to.push_back({0, 1});
    d.time.push_back(r);
    d.x.push_back(1.0);
    num += w * z;
    den += w * tau;
  }
  const auto fit = fit_poisson_weighted(d);
  ASSERT_TRUE(fit.converged());
  EXPECT_NEAR(fit.coefficients[0], std::log(num / den), 1e-10);
  EXPECT_NEAR(fit.standard_errors[0], 1.0 / std::sqrt(num), 1e-8);
  EXPECT_EQ(fit.edf, 1.0);
  EXPECT_NEAR(fit.aic, -2.0 * fit.log_likelihood + 2.0, 1e-12);
}

TEST(PoissonFit, NullCoefficientsRecoveredWithinThreeSE) {
  std::mt19937_64 rng(2);
  NoiseModel m(12, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {0.0, 0.0, 0.0}, 300.0, 99);
  const auto fit = fit_poisson_weighted(d);
  ASSERT_TRUE(fit.converged());
  for (int j = 0; j < 3; ++j) EXPECT_LT(std::abs(fit.coefficients[j]), 3.0 * fit.standard_errors[j]) << d.labels[j];
}

TEST(PoissonFit, DuplicatedRowsWithHalfWeightsGiveIdenticalFit) {
  std::mt19937_64 rng(3);
  NoiseModel m(10, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.5, 0.4, -0.3}, 200.0, 5);
  const auto a = fit_poisson_weighted(d);
  const auto b = fit_poisson_weighted(duplicated_half_weights(d));
  for (int j = 0; j < 3; ++j) {
    EXPECT_NEAR(a.coefficients[j], b.coefficients[j], 1e-10);
    EXPECT_NEAR(a.standard_errors[j], b.standard_errors[j], 1e-10);
  }
  EXPECT_NEAR(a.log_likelihood, b.log_likelihood, 1e-8);
}

TEST(PoissonFit, OptimumIsStationary) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    NoiseModel m(8, 3, rng);
    std::normal_distribution<double> nd(0.0, 0.3);
    const auto d = testsupport::simulated_expansion(*m.ctx, {nd(rng), nd(rng), nd(rng), nd(rng)}, 150.0, rng());
    const auto fit = fit_poisson_weighted(d);
    ASSERT_TRUE(fit.converged());
    EXPECT_LT(poisson_score(d, as_vector(fit.coefficients)).norm(), 1e-6);
    EXPECT_LT(fit.convergence.gradient_norm, 1e-6);
    for (double se : fit.standard_errors) EXPECT_GE(se, 0.0);
  }
}

TEST(PoissonFit, RandomStartsReachTheSameOptimum) {
  std::mt19937_64 rng(5);
  NoiseModel m(10, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.2, 0.5, 0.1}, 200.0, 17);
  const auto ref = fit_poisson_weighted(d);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int s = 0; s < 10; ++s) {
    FitOptions o;
    o.start = VectorXd::NullaryExpr(3, [&](Eigen::Index) { return u(rng); });
    const auto fit = fit_poisson_weighted(d, PenaltySpec::none(), o);
    ASSERT_TRUE(fit.converged());
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(fit.coefficients[j], ref.coefficients[j], 1e-6);
  }
}

TEST(PoissonFit, ScoreAndInformationMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  NoiseModel m(8, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {0.1, -0.3, 0.2}, 100.0, 8);
  MatrixXd omega = MatrixXd::Zero(3, 3);
  omega.bottomRightCorner(2, 2) << 2.0, -1.0, -1.0, 2.0;
  const auto pen = PenaltySpec::quadratic(omega, 0.7);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd b = VectorXd::NullaryExpr(3, [&](Eigen::Index) { return nd(rng); });
    const VectorXd g = poisson_score(d, b) - pen.lambda * omega * b;
    const MatrixXd h = poisson_information(d, b) + pen.lambda * omega;
    const double step = 1e-5;
    for (int j = 0; j < 3; ++j) {
      VectorXd hi = b, lo = b;
      hi[j] += step;
      lo[j] -= step;
      const double fd = (penalized_objective(d, hi, pen) - penalized_objective(d, lo, pen)) / (2 * step);
      EXPECT_NEAR(g[j], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      const VectorXd gh = poisson_score(d, hi) - pen.lambda * omega * hi;
      const VectorXd gl = poisson_score(d, lo) - pen.lambda * omega * lo;
      for (int k = 0; k < 3; ++k) {
        const double fdh = -(gh[k] - gl[k]) / (2 * step);
        EXPECT_NEAR(h(k, j), fdh, 1e-6 * std::max(1.0, std::abs(fdh)));
      }
    }
  }
}

TEST(PoissonFit, QuadraticPenaltyShrinksAndReducesEdf) {
  std::mt19937_64 rng(7);
  NoiseModel m(10, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {0.0, 0.6, -0.6}, 200.0, 21);
  MatrixXd omega = MatrixXd::Zero(3, 3);
  omega(1, 1) = omega(2, 2) = 1.0;
  const auto free = fit_poisson_weighted(d);
  const auto zero = fit_poisson_weighted(d, PenaltySpec::quadratic(omega, 0.0));
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(zero.coefficients[j], free.coefficients[j], 1e-10);
  EXPECT_NEAR(zero.edf, 3.0, 1e-12);
  double prev_norm = std::hypot(free.coefficients[1], free.coefficients[2]), prev_edf = 3.0;
  for (double lambda : {1.0, 10.0, 100.0, 1e4}) {
    const auto fit = fit_poisson_weighted(d, PenaltySpec::quadratic(omega, lambda));
    ASSERT_TRUE(fit.converged());
    const double norm = std::hypot(fit.coefficients[1], fit.coefficients[2]);
    EXPECT_LT(norm, prev_norm);
    EXPECT_LT(fit.edf, prev_edf);
    EXPECT_GT(fit.edf, 1.0);
    EXPECT_EQ(*fit.lambda, lambda);
    prev_norm = norm;
    prev_edf = fit.edf;
  }
}

TEST(PoissonFit, SeparationIsFlagged) {
  ExpandedData d;
  d.labels = {"(intercept)", "x"};
  for (int r = 0; r < 40; ++r) {
    // x = 1 only on rows without an event: the MLE for x is -infinity
    const bool hit = r % 4 == 0, marked = r % 4 == 1;
    d.z.push_back(hit ? 1.0 : 0.0);
    d.log_offset.push_back(0.0);
    d.weight.push_back(1.0);
    d.path_id.push_back(0);
    d.from.push_back({0, 0});
    d.to.push_back({0, 1});
    d.time.push_back(r);
    d.x.insert(d.x.end(), {1.0, marked ? 1.0 : 0.0});
  }
  FitOptions o;
  o.separation_bound = 8.0;
  const auto fit = fit_poisson_weighted(d, PenaltySpec::none(), o);
  EXPECT_EQ(fit.convergence.status, FitStatus::separation);
  EXPECT_LT(fit.coefficients[1], -8.0);
}

TEST(PoissonFit, RejectsInvalidInput) {
  ExpandedData d;
  d.labels = {"(intercept)"};
  d.z = {2.0};
  d.log_offset = {0.0};
  d.weight = {1.0};
  d.path_id = {0};
  d.from = {{0, 0}};
  d.to = {{0, 1}};
  d.time = {0.0};
  d.x = {1.0};
  EXPECT_THROW(fit_poisson_weighted(d), InputError);
  d.z = {1.0};
  d.weight = {0.0};
  EXPECT_THROW(fit_poisson_weighted(d), InputError);
  d.weight = {1.0};
  EXPECT_THROW(fit_poisson_weighted(d, PenaltySpec::quadratic(MatrixXd::Identity(2, 2), 1.0)), std::invalid_argument);
  EXPECT_THROW(fit_poisson_weighted(d, PenaltySpec::l1({true}, 1.0)), std::invalid_argument);
  EXPECT_THROW(fit_poisson_weighted(d.subset({})), InputError);
}

TEST(FitResult, JsonRoundTripAndCoefficientTable) {
  FitResult f;
  f.labels = {"(intercept)", "d"};
  f.coefficients = {-1.0, 0.0};
  f.standard_errors = {0.5, std::numeric_limits<double>::quiet_NaN()};
  f.log_likelihood = -12.5;
  f.edf = 2.0;
  f.convergence.status = FitStatus::converged;
  const auto back = fit_result_from_json(fit_result_to_json(f));
  EXPECT_EQ(back.labels, f.labels);
  EXPECT_EQ(back.coefficients, f.coefficients);
  EXPECT_EQ(back.standard_errors[0], 0.5);
  EXPECT_TRUE(std::isnan(back.standard_errors[1]));
  EXPECT_TRUE(back.converged());
  const auto table = coefficient_table_csv(f);
  EXPECT_EQ(table.substr(0, table.find('\n')), "label,estimate,std_error,z,p_value");
  EXPECT_NE(table.find("d,0,NA,NA,NA"), std::string::npos) << table;
}

// ---------------------------------------------------------------------------
// roughness penalty

TEST(PenaltyMatrix, LinearFunctionsAreInTheNullSpace) {
  for (int degree : {2, 3, 4}) {
    const auto basis = SplineBasis1D::uniform(-1.0, 4.0, 9, degree);
    const MatrixXd omega = penalty_matrix(basis);
    const VectorXd c = as_vector(testsupport::linear_coefficients(basis, 0.7, -2.3));
    // the representation itself is exact
    for (double t : {-1.0, 0.3, 2.2, 4.0}) {
      const auto phi = basis.evaluate(t);
      EXPECT_NEAR(as_vector(phi).dot(c), 0.7 - 2.3 * t, 1e-12);
    }
    EXPECT_NEAR(c.dot(omega * c), 0.0, 1e-10);
    EXPECT_NEAR((omega * VectorXd::Ones(basis.size())).norm(), 0.0, 1e-10);
  }
}

TEST(PenaltyMatrix, SymmetricPositiveSemidefinite) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> knots(4, 0.0);
    std::vector<double> inner(6);
    // keep spans apart so entries stay O(1e3) and rounding stays below the tolerance
    do {
      for (auto& v : inner) v = u(rng);
      std::sort(inner.begin(), inner.end());
    } while (std::adjacent_find(inner.begin(), inner.end(), [](double a, double b) { return b - a < 0.2; }) != inner.end() ||
             inner.front() < 0.2 || inner.back() > 4.8);
    knots.insert(knots.end(), inner.begin(), inner.end());
    knots.insert(knots.end(), 4, 5.0);
    const MatrixXd omega = penalty_matrix(SplineBasis1D(3, knots));
    EXPECT_EQ(omega, omega.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(omega);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(PenaltyMatrix, MatchesAdaptiveQuadratureOfReferenceDerivatives) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> inner(5);
  for (auto& v : inner) v = u(rng);
  std::sort(inner.begin(), inner.end());
  std::vector<double> knots(4, 0.0);
  knots.insert(knots.end(), inner.begin(), inner.end());
  knots.insert(knots.end(), 4, 3.0);
  const SplineBasis1D basis(3, knots);
  const MatrixXd omega = penalty_matrix(basis);
  std::vector<double> bp{0.0};
  bp.insert(bp.end(), inner.begin(), inner.end());
  bp.push_back(3.0);
  for (int i = 0; i < basis.size(); ++i)
    for (int j = 0; j < basis.size(); ++j) {
      double ref = 0.0;
      for (std::size_t s = 0; s + 1 < bp.size(); ++s) {
        if (!(bp[s + 1] > bp[s])) continue;
        // span by span; Kronrod nodes are interior so one-sided derivatives are never mixed
        const double lo = bp[s], hi = bp[s + 1];
        ref += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
            [&](double t) {
              return testsupport::naive_bspline_d(i, 3, t, knots, 3.0, 2) *
                     testsupport::naive_bspline_d(j, 3, t, knots, 3.0, 2);
            },
            lo, hi, 10, 1e-14);
      }
      EXPECT_NEAR(omega(i, j), ref, 1e-8) << i << "," << j;
    }
}

TEST(PenaltyMatrix, QuadraticFunctionHasKnownRoughness) {
  // f(t) = t^2 on [0, 2]: integral of (f'')^2 = 8
  const auto basis = SplineBasis1D::uniform(0.0, 2.0, 7, 3);
  const MatrixXd omega = penalty_matrix(basis);
  // least squares representation of t^2 (exact, since t^2 lies in the spline space)
  MatrixXd a(40, basis.size());
  VectorXd y(40);
  for (int r = 0; r < 40; ++r) {
    const double t = 2.0 * r / 39.0;
    a.row(r) = as_vector(basis.evaluate(t)).transpose();
    y[r] = t * t;
  }
  const VectorXd c = a.colPivHouseholderQr().solve(y);
  EXPECT_NEAR(c.dot(omega * c), 8.0, 1e-9);
}

TEST(PenaltyMatrix, RequiresDegreeTwo) {
  EXPECT_THROW(penalty_matrix(SplineBasis1D::uniform(0.0, 1.0, 5, 1)), InputError);
}

TEST(PenaltyMatrix, VaryingPenaltyPlacesBlocksAfterStaticColumns) {
  ModelSpec spec;
  spec.motility.push_back({"m", "m"});
  spec.autocovariate = "rho";
  const auto basis = SplineBasis1D::uniform(0.0, 10.0, 6);
  spec.varying.push_back({TermRole::directional, "d", "gamma", basis});
  const MatrixXd omega = varying_penalty(spec);
  ASSERT_EQ(omega.rows(), 9);
  EXPECT_EQ(omega.topLeftCorner(3, 3), MatrixXd::Zero(3, 3));
  EXPECT_EQ(omega.bottomRightCorner(6, 6), penalty_matrix(basis));
  EXPECT_EQ(omega.topRightCorner(3, 6), MatrixXd::Zero(3, 6));
}

// ---------------------------------------------------------------------------
// L1 path

TEST(Lasso, ZeroPenaltyMatchesUnpenalizedFit) {
  std::mt19937_64 rng(10);
  NoiseModel m(10, 3, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.3, 0.5, 0.0, -0.4}, 200.0, 3);
  const auto path = fit_lasso(d, {0.0}, {false, true, true, true});
  const auto ref = fit_poisson_weighted(d);
  ASSERT_TRUE(path.fits[0].converged());
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(path.fits[0].coefficients[j], ref.coefficients[j], 1e-6);
}

TEST(Lasso, LambdaMaxIsTheThresholdForAllZero) {
  std::mt19937_64 rng(11);
  NoiseModel m(10, 4, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.3, 0.5, 0.2, 0.0, -0.4}, 200.0, 4);
  // score of the standardized columns at the intercept-only fit
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    num += d.weight[r] * d.z[r];
    den += d.weight[r] * std::exp(d.log_offset[r]);
  }
  const double b0 = std::log(num / den);
  const MatrixXd xs = testsupport::standardized_design(d, true);
  double lmax = 0.0;
  for (int j = 1; j < 5; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < d.rows(); ++r)
      s += d.weight[r] * (d.z[r] - std::exp(d.log_offset[r] + b0)) * xs(static_cast<Eigen::Index>(r), j);
    lmax = std::max(lmax, std::abs(s));
  }
  const std::vector<bool> mask{false, true, true, true, true};
  const auto path = fit_lasso(d, {lmax * 1.5, lmax * 1.0001, lmax * 0.95}, mask);
  EXPECT_NEAR(path.lambda_max, lmax, 1e-6 * lmax);
  for (int i = 0; i < 2; ++i) {
    for (int j = 1; j < 5; ++j) EXPECT_EQ(path.fits[i].coefficients[j], 0.0);
    EXPECT_NEAR(path.fits[i].coefficients[0], b0, 1e-8);
  }
  int active = 0;
  for (int j = 1; j < 5; ++j) active += path.fits[2].coefficients[j] != 0.0;
  EXPECT_GE(active, 1);
}

TEST(Lasso, TwoColumnSolutionMatchesBruteForceGrid) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0), tau(0.2, 2.0);
  ExpandedData d;
  d.labels = {"a", "b"};
  for (int r = 0; r < 150; ++r) {
    const double x1 = u(rng), x2 = u(rng) + 0.5 * x1;
    const double mu = tau(rng) * std::exp(0.8 * x1 - 1.2 * x2 - 0.5);
    d.z.push_back(std::uniform_real_distribution<double>(0, 1)(rng) < 1 - std::exp(-mu) ? 1.0 : 0.0);
    d.log_offset.push_back(std::log(mu) - (0.8 * x1 - 1.2 * x2));
    d.weight.push_back(r % 3 ? 1.0 : 0.5);
    d.path_id.push_back(0);
    d.from.push_back({0, 0});
    d.to.push_back({0, 1});
    d.time.push_back(r);
    d.x.insert(d.x.end(), {x1, x2});
  }
  const MatrixXd xs = testsupport::standardized_design(d, false);
  const double s1 = d.x[0] / xs(0, 0), s2 = d.x[1] / xs(0, 1);
  for (double lambda : {0.5, 3.0, 8.0}) {
    auto objective = [&](double b1, double b2) {
      double v = 0.0;
      for (std::size_t r = 0; r < d.rows(); ++r) {
        const double eta = d.log_offset[r] + b1 * d.x[2 * r] + b2 * d.x[2 * r + 1];
        v -= d.weight[r] * (d.z[r] * eta - std::exp(eta));
      }
      return v + lambda * (s1 * std::abs(b1) + s2 * std::abs(b2));
    };
    // coarse scan over [-3, 3]^2, then a 1e-3 scan around the coarse minimum
    double best = std::numeric_limits<double>::infinity(), bx = 0, by = 0;
    for (int i = -300; i <= 300; ++i)
      for (int j = -300; j <= 300; ++j) {
        const double v = objective(i * 0.01, j * 0.01);
        if (v < best) std::tie(best, bx, by) = std::make_tuple(v, i * 0.01, j * 0.01);
      }
    const double cx = bx, cy = by;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j) {
        const double x = cx + i * 1e-3, y = cy + j * 1e-3;
        const double v = objective(x, y);
        if (v < best) std::tie(best, bx, by) = std::make_tuple(v, x, y);
      }
    const auto fit = fit_lasso(d, {lambda}, {true, true}).fits[0];
    ASSERT_TRUE(fit.converged());
    EXPECT_NEAR(fit.coefficients[0], bx, 2e-3) << "lambda " << lambda;
    EXPECT_NEAR(fit.coefficients[1], by, 2e-3) << "lambda " << lambda;
  }
}

TEST(Lasso, KktConditionsHoldAlongThePath) {
  std::mt19937_64 rng(13);
  NoiseModel m(12, 19, rng);
  std::vector<double> beta(20, 0.0);
  beta[0] = -0.5;
  beta[1] = 0.6;
  beta[5] = -0.4;
  beta[9] = 0.3;
  const auto d = testsupport::simulated_expansion(*m.ctx, beta, 300.0, 5);
  std::vector<bool> mask(20, true);
  mask[0] = false;
  const auto probe = fit_lasso(d, {1e6}, mask);
  const auto lambdas = lambda_grid(probe.lambda_max, 50, 1e-3);
  const auto path = fit_lasso(d, lambdas, mask);
  const MatrixXd xs = testsupport::standardized_design(d, true);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const auto& f = path.fits[i];
    ASSERT_TRUE(f.converged()) << i;
    EXPECT_LT(*f.kkt_residual, 1e-6);
    // independent check on the standardized scale
    VectorXd resid(static_cast<Eigen::Index>(d.rows()));
    for (std::size_t r = 0; r < d.rows(); ++r) {
      double eta = d.log_offset[r];
      for (int j = 0; j < 20; ++j) eta += d.row(r)[j] * f.coefficients[j];
      resid[static_cast<Eigen::Index>(r)] = d.weight[r] * (d.z[r] - std::exp(eta));
    }
    const VectorXd score = xs.transpose() * resid;
    EXPECT_NEAR(score[0], 0.0, 1e-6);
    for (int j = 1; j < 20; ++j) {
      const double b = f.coefficients[j];
      if (b == 0.0)
        EXPECT_LE(std::abs(score[j]), lambdas[i] + 1e-6);
      else
        EXPECT_NEAR(score[j], b > 0 ? lambdas[i] : -lambdas[i], 1e-6);
    }
  }
}

TEST(Lasso, NoSignFlipsBetweenAdjacentGridPoints) {
  std::mt19937_64 rng(14);
  NoiseModel m(12, 8, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.5, 0.5, -0.5, 0.3, 0, 0, 0.2, 0, -0.1}, 300.0, 6);
  std::vector<bool> mask(9, true);
  mask[0] = false;
  const auto lmax = fit_lasso(d, {1e6}, mask).lambda_max;
  const auto path = fit_lasso(d, lambda_grid(lmax, 60, 1e-3), mask);
  for (std::size_t i = 1; i < path.fits.size(); ++i)
    for (int j = 1; j < 9; ++j) EXPECT_GE(path.fits[i - 1].coefficients[j] * path.fits[i].coefficients[j], 0.0);
}

TEST(Lasso, GridValidationAndRelaxedRefit) {
  std::mt19937_64 rng(15);
  NoiseModel m(10, 3, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.3, 0.8, 0.0, 0.0}, 200.0, 7);
  const std::vector<bool> mask{false, true, true, true};
  EXPECT_THROW(fit_lasso(d, {0.1, 1.0}, mask), InputError);
  EXPECT_THROW(fit_lasso(d, {-1.0}, mask), InputError);
  EXPECT_THROW(fit_lasso(d, {1.0}, {true}), std::invalid_argument);
  const auto path = fit_lasso(d, lambda_grid(fit_lasso(d, {1e6}, mask).lambda_max, 20), mask);
  // pick a fit with a strict subset of the columns active
  const FitResult* sparse = nullptr;
  for (const auto& f : path.fits) {
    int nz = 0;
    for (int j = 1; j < 4; ++j) nz += f.coefficients[j] != 0.0;
    if (nz >= 1 && nz < 3) sparse = &f;
  }
  ASSERT_NE(sparse, nullptr);
  const auto relaxed = relaxed_refit(d, *sparse);
  std::vector<int> keep;
  for (int j = 0; j < 4; ++j)
    if (sparse->coefficients[j] != 0.0) keep.push_back(j);
  ExpandedData sub = d;
  sub.labels.clear();
  sub.x.clear();
  for (int j : keep) sub.labels.push_back(d.labels[j]);
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (int j : keep) sub.x.push_back(d.row(r)[j]);
  const auto direct = fit_poisson_weighted(sub);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    EXPECT_NEAR(relaxed.coefficients[keep[k]], direct.coefficients[k], 1e-10);
    EXPECT_NEAR(relaxed.standard_errors[keep[k]], direct.standard_errors[k], 1e-10);
  }
  for (int j = 0; j < 4; ++j)
    if (sparse->coefficients[j] == 0.0) {
      EXPECT_EQ(relaxed.coefficients[j], 0.0);
      EXPECT_TRUE(std::isnan(relaxed.standard_errors[j]));
    }
}

// ---------------------------------------------------------------------------
// cross-validation

TEST(CrossValidation, SingleLambdaIsReturned) {
  std::mt19937_64 rng(16);
  NoiseModel m(8, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {0.0, 0.3, 0.0}, 100.0, 8);
  const auto cv = cross_validate(d, PenaltySpec::l1({false, true, true}, 0.0), {0.37}, 4);
  EXPECT_EQ(cv.best_lambda, 0.37);
  ASSERT_EQ(cv.curve.size(), 1u);
  EXPECT_EQ(cv.curve[0].fold_deviance.size(), 4u);
}

TEST(CrossValidation, FoldsAreContiguousTimeBlocksSharedAcrossPaths) {
  std::mt19937_64 rng(17);
  NoiseModel m(8, 1, rng);
  auto a = testsupport::simulated_expansion(*m.ctx, {0.0, 0.0}, 100.0, 1);
  auto b = testsupport::simulated_expansion(*m.ctx, {0.0, 0.0}, 100.0, 2);
  std::fill(b.path_id.begin(), b.path_id.end(), 1);
  auto d = stack({a, b});
  for (std::size_t r = 0; r < d.rows(); ++r) d.path_id[r] = r < a.rows() ? 0 : 1;
  const auto folds = blocked_folds(d, 5);
  for (int f = 0; f + 1 < 5; ++f) {
    double hi = -1e300, lo = 1e300;
    for (std::size_t r = 0; r < d.rows(); ++r) {
      if (folds[r] == f) hi = std::max(hi, d.time[r]);
      if (folds[r] == f + 1) lo = std::min(lo, d.time[r]);
    }
    EXPECT_LE(hi, lo) << "fold " << f;
  }
  // every sojourn's rows share a fold
  for (std::size_t r = 1; r < d.rows(); ++r)
    if (d.time[r] == d.time[r - 1] && d.path_id[r] == d.path_id[r - 1]) {
      EXPECT_EQ(folds[r], folds[r - 1]);
    }
  EXPECT_THROW(blocked_folds(d, 1), InputError);
}

TEST(CrossValidation, FoldWithoutTransitionsIsMergedWithWarning) {
  ExpandedData d;
  d.labels = {"(intercept)"};
  for (int t = 0; t < 10; ++t)
    for (int c = 0; c < 4; ++c) {
      d.z.push_back(t < 8 && c == 0 ? 1.0 : 0.0);
      d.log_offset.push_back(0.0);
      d.weight.push_back(1.0);
      d.path_id.push_back(0);
      d.from.push_back({0, t});
      d.to.push_back({1, t});
      d.time.push_back(t);
      d.x.push_back(1.0);
    }
  std::vector<std::string> warnings;
  const auto folds = blocked_folds(d, 5, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("no transitions"), std::string::npos);
  EXPECT_EQ(*std::max_element(folds.begin(), folds.end()), 3);
  EXPECT_EQ(folds.back(), 3);
  EXPECT_EQ(folds[6 * 4], 3);
}

TEST(CrossValidation, CurveMatchesIndependentRefitAndScore) {
  std::mt19937_64 rng(18);
  NoiseModel m(10, 2, rng);
  const auto d = testsupport::simulated_expansion(*m.ctx, {-0.2, 0.5, -0.2}, 200.0, 9);
  MatrixXd omega = MatrixXd::Zero(3, 3);
  omega(1, 1) = omega(2, 2) = 1.0;
  omega(1, 2) = omega(2, 1) = -0.5;
  const std::vector<double> lambdas{50.0, 5.0, 0.5};
  const auto cv = cross_validate(d, PenaltySpec::quadratic(omega, 0.0), lambdas, 4);
  const auto folds = blocked_folds(d, 4);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    double mean = 0.0;
    for (int f = 0; f < 4; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t r = 0; r < d.rows(); ++r) (folds[r] == f ? test : train).push_back(r);
      const auto fit = fit_poisson_weighted(d.subset(train), PenaltySpec::quadratic(omega, lambdas[i]));
      const double dev = reference_deviance(d.subset(test), fit.coefficients);
      EXPECT_NEAR(cv.curve[i].fold_deviance[f], dev, 1e-9 * std::max(1.0, dev));
      mean += dev / 4;
    }
    EXPECT_NEAR(cv.curve[i].mean_deviance, mean, 1e-9 * mean);
  }
  double best = 1e300;
  for (const auto& pt : cv.curve) best = std::min(best, pt.mean_deviance);
  for (const auto& pt : cv.curve)
    if (pt.lambda == cv.best_lambda) {
      EXPECT_EQ(pt.mean_deviance, best);
    }
}

TEST(CrossValidation, PureNoiseSelectsLargePenalties) {
  int near_top = 0;
  for (int rep = 0; rep < 10; ++rep) {
    std::mt19937_64 rng(1000 + rep);
    NoiseModel m(12, 10, rng);
    std::vector<double> beta(11, 0.0);
    beta[0] = -0.5;
    const auto d = testsupport::simulated_expansion(*m.ctx, beta, 250.0, rng());
    std::vector<bool> mask(11, true);
    mask[0] = false;
    const auto grid = lambda_grid(fit_lasso(d, {1e6}, mask).lambda_max, 10, 1e-2);
    const auto cv = cross_validate(d, PenaltySpec::l1(mask, 0.0), grid, 5);
    // within the top three of the ten grid values
    if (cv.best_lambda >= grid[2]) ++near_top;
  }
  EXPECT_GE(near_top, 8);
}

// ---------------------------------------------------------------------------
// Wald tests

TEST(Wald, ReferenceValues) {
  FitResult f;
  f.labels = {"a", "b", "c", "d"};
  f.coefficients = {0.0, 1.96 * 0.3, -2.0, 1.0};
  f.standard_errors = {0.2, 0.3, 0.0, std::numeric_limits<double>::quiet_NaN()};
  const auto w = wald_tests(f);
  EXPECT_EQ(w[0].p_value, 1.0);
  EXPECT_NEAR(w[1].p_value, 0.05, 1e-3);
  EXPECT_NEAR(w[1].z, 1.96, 1e-12);
  EXPECT_FALSE(w[2].defined);
  EXPECT_TRUE(std::isnan(w[2].p_value));
  EXPECT_FALSE(w[3].defined);
}

TEST(Wald, TypeOneErrorIsCalibrated) {
  std::mt19937_64 rng(19);
  NoiseModel m(10, 1, rng);
  int rejections = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const auto d = testsupport::simulated_expansion(*m.ctx, {0.0, 0.0}, 80.0, 5000 + rep);
    const auto fit = fit_poisson_weighted(d);
    ASSERT_TRUE(fit.converged());
    rejections += wald_tests(fit)[1].p_value < 0.05;
  }
  const double rate = static_cast<double>(rejections) / reps;
  EXPECT_GE(rate, 0.02);
  EXPECT_LE(rate, 0.10);
}

// ---------------------------------------------------------------------------
// Rubin's rules

TEST(Rubin, IdenticalFitsHaveNoBetweenVariance) {
  FitResult f;
  f.labels = {"a", "b"};
  f.coefficients = {0.4, -1.2};
  f.standard_errors = {0.1, 0.3};
  const auto pooled = rubin_combine({f, f, f});
  for (int j = 0; j < 2; ++j) {
    EXPECT_DOUBLE_EQ(pooled.mean[j], f.coefficients[j]);
    EXPECT_EQ(pooled.between[j], 0.0);
    EXPECT_DOUBLE_EQ(pooled.total[j], f.standard_errors[j] * f.standard_errors[j]);
  }
}

TEST(Rubin, TwoFitExample) {
  FitResult a, b;
  a.labels = b.labels = {"x"};
  a.coefficients = {0.0};
  b.coefficients = {2.0};
  a.standard_errors = b.standard_errors = {1.0};
  const auto pooled = rubin_combine({a, b});
  EXPECT_EQ(pooled.mean[0], 1.0);
  EXPECT_EQ(pooled.within[0], 1.0);
  EXPECT_EQ(pooled.between[0], 2.0);
  EXPECT_EQ(pooled.total[0], 4.0);
  EXPECT_EQ(pooled.standard_errors()[0], 2.0);
}

TEST(Rubin, Preconditions) {
  FitResult a, b;
  a.labels = {"x"};
  b.labels = {"y"};
  a.coefficients = b.coefficients = {0.0};
  a.standard_errors = b.standard_errors = {1.0};
  EXPECT_THROW(rubin_combine({a}), InputError);
  EXPECT_THROW(rubin_combine({a, b}), InputError);
}

TEST(Rubin, PooledImputationsAgreeWithStackedFit) {
  std::mt19937_64 rng(20);
  const auto g = unit_geometry(30, 30);
  ModelSpec spec;
  spec.directional.push_back({"toward", "toward"});
  const auto centre = distance_to_point_layer(g, 15.0, 15.0);
  RasterGrid toward(g, 0.0);
  for (CellId c = 0; c < g.size(); ++c) toward.set(c, -centre.value(c));
  DesignContext ctx(spec, RasterGrid(g, 0.0), {{"toward", toward}});
  const auto sim = simulate_path(ctx, std::vector<double>{-1.0, 0.5}, g.cell(15, 15), 0.0, 1500.0, 77);
  const auto tel = testsupport::telemetry_every(sim.path, g, 10);
  const auto paths = impute_paths(tel, 10, 0.05, fit_bridge_sigma(tel), 123);
  std::vector<std::vector<CtmcPath>> runs;
  for (const auto& p : paths) runs.push_back(discretize(p, ctx.grid()));
  const auto stacked = expand_and_stack(runs, ctx);
  const auto swl = fit_poisson_weighted(stacked);
  const auto pooled = rubin_combine(fit_each_imputation(stacked));
  for (int j = 0; j < 2; ++j) {
    EXPECT_LT(std::abs(pooled.mean[j] - swl.coefficients[j]), 0.05 * swl.standard_errors[j]) << swl.labels[j];
  }
}
