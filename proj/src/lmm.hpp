#pragma once

#include "core.hpp"
#include "numerics.hpp"

#include <string>
#include <utility>
#include <vector>

namespace latgraph::lmm {

struct GaussianLmmSpec {
  GaussianLmmSpec() { optim.gradient_tolerance = 1e-8; }
  int response_index = 1;           // 1..7, Geom is not a Gaussian response
  double residual_fraction = 0.95;  // share of the non-branch variance given to V
  num::OptimizerSettings optim;
};

struct LmmParams {
  num::Vector beta;       // aligned with the kept design columns
  double sigma2_U = 0.0;  // branch variance
  double sigma2_V = 0.0;  // individual variance
  double sigma2_eps = 0.0;
};

struct LmmFit {
  num::Vector beta;
  num::Matrix beta_cov;                 // GLS covariance of beta at the optimum
  std::vector<std::string> beta_labels;  // kept design columns
  double sigma2_U = 0.0;
  double sigma2_V = 0.0;
  double sigma2_eps = 0.0;
  double sigma2_combined = 0.0;  // sigma2_V + sigma2_eps, the estimated quantity
  double residual_fraction = 0.95;
  num::Vector predicted_U;  // length 10, zero for branches absent from the data
  num::Vector predicted_V;  // length n
  double log_likelihood = 0.0;
  bool converged = false;
  bool sigma2_U_at_zero = false;
  bool sigma2_combined_at_zero = false;
  int response_index = 0;
};

// Profile ML for y = X beta + U_{e(i)} + V_i + eps_i. Only sigma2_U and
// sigma2_combined = sigma2_V + sigma2_eps are identifiable with one score per
// student; the split is governed by residual_fraction.
LmmFit fit_lmm(const core::Cohort& cohort, const GaussianLmmSpec& spec);

// Marginal log-likelihood at arbitrary parameters (uses sigma2_V+sigma2_eps).
double log_likelihood_at(const core::Cohort& cohort, const num::Vector& y,
                         const num::Matrix& x, const LmmParams& params);

// BLUPs of (U, V) given data at the supplied parameters; identical to the
// dense mixed-model-equation solution.
std::pair<num::Vector, num::Vector> predict_effects_at(const core::Cohort& cohort,
                                                       const num::Vector& y,
                                                       const num::Matrix& x,
                                                       const LmmParams& params);

// BLUPs at the fitted parameters.
std::pair<num::Vector, num::Vector> predict_effects(const LmmFit& fit,
                                                    const core::Cohort& cohort);

// Response vector for a Gaussian response (1..7).
num::Vector response_vector(const core::Cohort& cohort, int response_index);

// Design actually used by the fit: degenerate indicator columns dropped.
std::pair<num::Matrix, std::vector<std::string>> reduced_design(
    const core::Cohort& cohort);

}  // namespace latgraph::lmm
