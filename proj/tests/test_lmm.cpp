#include <doctest.h>

#include "lmm.hpp"
#include "sim.hpp"

#include <cmath>

using namespace latgraph;

namespace {

core::StudentRecord make_record(int i, int branch, bool male, bool age, double y) {
  core::StudentRecord r;
  r.student_id = "s" + std::to_string(i);
  r.branch = branch;
  r.male = male;
  r.age21plus = age;
  r.scores = {y, y, y, y, y, y, y};
  r.attempts = 1;
  r.passed = true;
  return r;
}

// Dense Henderson mixed-model equations for y = X beta + Z_U u + v + eps.
struct Henderson {
  num::Vector beta, u, v;
};

Henderson henderson_solve(const core::Cohort& cohort, const num::Vector& y,
                          const num::Matrix& x, double s2u, double s2v,
                          double s2e) {
  const int n = cohort.n();
  const int p = static_cast<int>(x.cols());
  num::Matrix zu = num::Matrix::Zero(n, core::kBranchCount);
  for (int i = 0; i < n; ++i) zu(i, cohort.records()[i].branch - 1) = 1.0;
  num::Matrix z(n, core::kBranchCount + n);
  z << zu, num::Matrix::Identity(n, n);

  const int q = core::kBranchCount + n;
  num::Matrix mme(p + q, p + q);
  mme.topLeftCorner(p, p) = x.transpose() * x / s2e;
  mme.topRightCorner(p, q) = x.transpose() * z / s2e;
  mme.bottomLeftCorner(q, p) = z.transpose() * x / s2e;
  num::Matrix ginv = num::Matrix::Zero(q, q);
  ginv.topLeftCorner(core::kBranchCount, core::kBranchCount) =
      num::Matrix::Identity(core::kBranchCount, core::kBranchCount) / s2u;
  ginv.bottomRightCorner(n, n) = num::Matrix::Identity(n, n) / s2v;
  mme.bottomRightCorner(q, q) = z.transpose() * z / s2e + ginv;
  num::Vector rhs(p + q);
  rhs.head(p) = x.transpose() * y / s2e;
  rhs.tail(q) = z.transpose() * y / s2e;
  const num::Vector sol = num::cholesky_solve(mme, rhs);
  Henderson out;
  out.beta = sol.head(p);
  out.u = sol.segment(p, core::kBranchCount);
  out.v = sol.tail(n);
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("lmm");

TEST_CASE("constant response collapses to the mean with zero variances") {
  std::vector<core::StudentRecord> records;
  for (int i = 0; i < 10; ++i) {
    records.push_back(make_record(i, i + 1, i % 2 == 0, i % 3 == 0, 2.5));
  }
  const core::Cohort cohort = core::Cohort::from_records(records);
  lmm::GaussianLmmSpec spec;
  spec.response_index = 1;
  const lmm::LmmFit fit = lmm::fit_lmm(cohort, spec);
  CHECK(fit.converged);
  CHECK(fit.beta[0] == doctest::Approx(2.5).epsilon(1e-8));
  CHECK(std::abs(fit.beta[1]) <= 1e-8);
  CHECK(std::abs(fit.beta[2]) <= 1e-8);
  CHECK(fit.sigma2_U == 0.0);
  CHECK(fit.sigma2_combined == 0.0);
  CHECK(fit.sigma2_U_at_zero);
  CHECK(fit.sigma2_combined_at_zero);
}

TEST_CASE("rejects the survival response and bad fractions") {
  std::vector<core::StudentRecord> records;
  for (int i = 0; i < 4; ++i) records.push_back(make_record(i, 1 + i, i % 2, false, i));
  const core::Cohort cohort = core::Cohort::from_records(records);
  lmm::GaussianLmmSpec spec;
  spec.response_index = 8;
  CHECK_THROWS_AS(lmm::fit_lmm(cohort, spec), std::invalid_argument);
  spec.response_index = 1;
  spec.residual_fraction = 0.0;
  CHECK_THROWS_AS(lmm::fit_lmm(cohort, spec), std::invalid_argument);
}

TEST_CASE("sigma_U = 0 simulations: beta within 3 SEs, variance near zero") {
  sim::SimScenario scenario = sim::preset("fig1b_bonus");
  scenario.n = 500;
  scenario.sigma2_U.fill(0.0);
  int variance_ok = 0;
  int beta_ok = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    scenario.seed = num::Rng::derive(1234, seed);
    const sim::SimResult sim_result = sim::simulate_cohort(scenario);
    lmm::GaussianLmmSpec spec;
    spec.response_index = 3;
    const lmm::LmmFit fit = lmm::fit_lmm(sim_result.cohort, spec);
    REQUIRE(fit.converged);
    if (fit.sigma2_U < 0.05 * fit.sigma2_combined) ++variance_ok;
    // truth: beta = (0, 0.2, -0.1)
    const num::Vector truth = scenario.beta[2];
    bool all = true;
    for (int j = 0; j < 3; ++j) {
      const double se = std::sqrt(fit.beta_cov(j, j));
      if (std::abs(fit.beta[j] - truth[j]) > 3.0 * se) all = false;
    }
    if (all) ++beta_ok;
  }
  CHECK(variance_ok >= 18);  // >= 90% of seeds
  CHECK(beta_ok >= 17);      // 3-sigma misses are rare but possible
}

TEST_CASE("balanced one-way layout matches the closed-form ML solution") {
  // 10 branches x 15 students, intercept-only design (constant covariates).
  num::Rng rng(5);
  std::vector<core::StudentRecord> records;
  const double mu = 1.0, sd_u = 0.6, sd_e = 0.9;
  int id = 0;
  for (int k = 1; k <= 10; ++k) {
    const double u = sd_u * rng.normal();
    for (int j = 0; j < 15; ++j) {
      records.push_back(make_record(id++, k, false, false, mu + u + sd_e * rng.normal()));
    }
  }
  const core::Cohort cohort = core::Cohort::from_records(records);
  lmm::GaussianLmmSpec spec;
  spec.response_index = 1;
  spec.optim.gradient_tolerance = 1e-10;
  const lmm::LmmFit fit = lmm::fit_lmm(cohort, spec);
  REQUIRE(fit.converged);

  // Closed form: sigma2_e = SSW / (a (m-1)), tau = SSB / a, sigma2_U = (tau - s2e)/m.
  const int a = 10, m = 15;
  const num::Vector y = lmm::response_vector(cohort, 1);
  const double ybar = y.mean();
  double ssw = 0.0, ssb = 0.0;
  for (int k = 0; k < a; ++k) {
    double gmean = 0.0;
    for (int j = 0; j < m; ++j) gmean += y[k * m + j];
    gmean /= m;
    ssb += m * (gmean - ybar) * (gmean - ybar);
    for (int j = 0; j < m; ++j) ssw += (y[k * m + j] - gmean) * (y[k * m + j] - gmean);
  }
  const double s2e_ml = ssw / (a * (m - 1));
  const double tau_ml = ssb / a;
  const double s2u_ml = (tau_ml - s2e_ml) / m;
  REQUIRE(s2u_ml > 0.0);  // interior solution for this draw
  CHECK(fit.sigma2_combined == doctest::Approx(s2e_ml).epsilon(1e-6));
  CHECK(fit.sigma2_U == doctest::Approx(s2u_ml).epsilon(1e-6));
  CHECK(fit.beta[0] == doctest::Approx(ybar).epsilon(1e-9));
}

TEST_CASE("likelihood at the estimate dominates the truth") {
  sim::SimScenario scenario = sim::preset("fig1b_bonus");
  scenario.n = 300;
  for (int seed = 0; seed < 5; ++seed) {
    scenario.seed = num::Rng::derive(88, seed);
    const sim::SimResult r = sim::simulate_cohort(scenario);
    lmm::GaussianLmmSpec spec;
    spec.response_index = 2;
    const lmm::LmmFit fit = lmm::fit_lmm(r.cohort, spec);
    REQUIRE(fit.converged);
    const num::Vector y = lmm::response_vector(r.cohort, 2);
    auto [x, labels] = lmm::reduced_design(r.cohort);
    lmm::LmmParams truth;
    truth.beta = scenario.beta[1];
    truth.sigma2_U = scenario.sigma2_U[1];
    truth.sigma2_V = scenario.sigma_v(1, 1);
    truth.sigma2_eps = 0.0;
    const double ll_truth = lmm::log_likelihood_at(r.cohort, y, x, truth);
    CHECK(fit.log_likelihood >= ll_truth - 1e-6);
  }
}

TEST_CASE("predicted_U is zero when the branch variance vanishes") {
  sim::SimScenario scenario = sim::preset("fig1b_bonus");
  scenario.n = 400;
  scenario.sigma2_U.fill(0.0);
  scenario.seed = 31;
  const sim::SimResult r = sim::simulate_cohort(scenario);
  lmm::GaussianLmmSpec spec;
  spec.response_index = 1;
  const lmm::LmmFit fit = lmm::fit_lmm(r.cohort, spec);
  if (fit.sigma2_U_at_zero) {
    CHECK(fit.predicted_U.cwiseAbs().maxCoeff() == 0.0);
  } else {
    CHECK(fit.sigma2_U < 0.05);
  }
}

TEST_CASE("single-branch shrinkage formula") {
  num::Rng rng(17);
  std::vector<core::StudentRecord> records;
  for (int i = 0; i < 40; ++i) {
    records.push_back(make_record(i, 3, false, false, 0.7 + rng.normal()));
  }
  const core::Cohort cohort = core::Cohort::from_records(records);
  const num::Vector y = lmm::response_vector(cohort, 1);
  auto [x, labels] = lmm::reduced_design(cohort);
  REQUIRE(labels.size() == 1);  // intercept only

  lmm::LmmParams params;
  params.beta = num::Vector::Constant(1, 0.7);
  params.sigma2_U = 0.5;
  params.sigma2_V = 0.8;
  params.sigma2_eps = 0.2;
  const auto [u_hat, v_hat] = lmm::predict_effects_at(cohort, y, x, params);

  const double m = 40.0;
  double residual_mean = 0.0;
  for (int i = 0; i < 40; ++i) residual_mean += y[i] - 0.7;
  residual_mean /= m;
  const double s2c = params.sigma2_V + params.sigma2_eps;
  const double expected_u =
      m * params.sigma2_U / (m * params.sigma2_U + s2c) * residual_mean;
  CHECK(u_hat[2] == doctest::Approx(expected_u).epsilon(1e-10));

  // Cross-check by the dense mixed-model equations.
  const Henderson mme = henderson_solve(cohort, y, x, 0.5, 0.8, 0.2);
  // Henderson solves beta jointly; rebuild predictions at the GLS beta.
  lmm::LmmParams at_gls = params;
  at_gls.beta = mme.beta;
  const auto [u2, v2] = lmm::predict_effects_at(cohort, y, x, at_gls);
  CHECK((u2 - mme.u).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((v2 - mme.v).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("blup matches dense mixed-model equations on random instances") {
  num::Rng rng(2026);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 20 + static_cast<int>(rng.uniform() * 31);  // 20..50
    std::vector<core::StudentRecord> records;
    for (int i = 0; i < n; ++i) {
      records.push_back(make_record(i, 1 + static_cast<int>(rng.uniform() * 10),
                                    rng.uniform() < 0.5, rng.uniform() < 0.5,
                                    rng.normal() * 2.0));
    }
    const core::Cohort cohort = core::Cohort::from_records(records);
    const num::Vector y = lmm::response_vector(cohort, 1);
    auto [x, labels] = lmm::reduced_design(cohort);
    const double s2u = 0.3 + rng.uniform();
    const double s2v = 0.4 + rng.uniform();
    const double s2e = 0.1 + 0.5 * rng.uniform();

    const Henderson mme = henderson_solve(cohort, y, x, s2u, s2v, s2e);
    lmm::LmmParams params{mme.beta, s2u, s2v, s2e};
    const auto [u_hat, v_hat] = lmm::predict_effects_at(cohort, y, x, params);
    CHECK((u_hat - mme.u).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((v_hat - mme.v).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("predicted_V is proportional to the conditional residual") {
  sim::SimScenario scenario = sim::preset("fig1b_bonus");
  scenario.n = 200;
  scenario.seed = 4;
  const sim::SimResult r = sim::simulate_cohort(scenario);
  lmm::GaussianLmmSpec spec;
  spec.response_index = 5;
  const lmm::LmmFit fit = lmm::fit_lmm(r.cohort, spec);
  REQUIRE(fit.converged);

  const num::Vector y = lmm::response_vector(r.cohort, 5);
  auto [x, labels] = lmm::reduced_design(r.cohort);
  num::Vector resid = y - x * fit.beta;
  for (int i = 0; i < r.cohort.n(); ++i) {
    resid[i] -= fit.predicted_U[r.cohort.records()[i].branch - 1];
  }
  const double corr = resid.dot(fit.predicted_V) /
                      (resid.norm() * fit.predicted_V.norm());
  CHECK(std::abs(corr) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("response rescaling scales the fit accordingly") {
  sim::SimScenario scenario = sim::preset("fig1b_bonus");
  scenario.n = 250;
  scenario.seed = 12;
  const sim::SimResult base = sim::simulate_cohort(scenario);
  lmm::GaussianLmmSpec spec;
  spec.response_index = 1;
  const lmm::LmmFit fit1 = lmm::fit_lmm(base.cohort, spec);

  const double c = -2.5;
  std::vector<core::StudentRecord> scaled = base.cohort.records();
  for (auto& rec : scaled) rec.scores[0] *= c;
  const lmm::LmmFit fit2 =
      lmm::fit_lmm(core::Cohort::from_records(scaled), spec);

  CHECK((fit2.beta - c * fit1.beta).cwiseAbs().maxCoeff() <= 1e-5);
  CHECK(fit2.sigma2_U == doctest::Approx(c * c * fit1.sigma2_U).epsilon(1e-4));
  CHECK(fit2.sigma2_combined ==
        doctest::Approx(c * c * fit1.sigma2_combined).epsilon(1e-4));
  CHECK((fit2.predicted_V - c * fit1.predicted_V).cwiseAbs().maxCoeff() <= 1e-4);

  // Standardized predictions are invariant up to the sign of c.
  const num::Vector z1 = fit1.predicted_V / std::sqrt(fit1.predicted_V.squaredNorm());
  const num::Vector z2 = fit2.predicted_V / std::sqrt(fit2.predicted_V.squaredNorm());
  CHECK((z2 + z1).cwiseAbs().maxCoeff() <= 1e-6);  // c < 0 flips the sign
}

TEST_CASE("residual_fraction changes predictions by a positive scalar only") {
  sim::SimScenario scenario = sim::preset("fig1b_bonus");
  scenario.n = 180;
  scenario.seed = 9;
  const sim::SimResult r = sim::simulate_cohort(scenario);
  lmm::GaussianLmmSpec a, b;
  a.response_index = b.response_index = 4;
  a.residual_fraction = 0.95;
  b.residual_fraction = 0.4;
  const lmm::LmmFit fa = lmm::fit_lmm(r.cohort, a);
  const lmm::LmmFit fb = lmm::fit_lmm(r.cohort, b);
  const double corr = fa.predicted_V.dot(fb.predicted_V) /
                      (fa.predicted_V.norm() * fb.predicted_V.norm());
  CHECK(corr == doctest::Approx(1.0).epsilon(1e-9));
  const double ratio = fb.predicted_V.norm() / fa.predicted_V.norm();
  CHECK(ratio == doctest::Approx(0.4 / 0.95).epsilon(1e-6));
}

TEST_SUITE_END();
