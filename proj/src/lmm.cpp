#include "lmm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latgraph::lmm {

namespace {

constexpr double kLogFloor = -30.0;  // variance parameters live on log scale
constexpr double kZeroReport = 1e-10;

struct BranchLayout {
  std::vector<std::vector<int>> members;  // branch (0-based) -> record rows
  std::vector<int> of_record;             // record row -> branch (0-based)
};

BranchLayout branch_layout(const core::Cohort& cohort) {
  BranchLayout layout;
  layout.members.resize(core::kBranchCount);
  layout.of_record.resize(cohort.n());
  for (int i = 0; i < cohort.n(); ++i) {
    const int k = cohort.records()[i].branch - 1;
    layout.members[k].push_back(i);
    layout.of_record[i] = k;
  }
  return layout;
}

// Marginal covariance pieces for V = sigma2_c I + sigma2_U Z Z^T, blockwise
// per branch via Woodbury.
struct ProfileEval {
  double log_likelihood;
  num::Vector beta;
  num::Matrix beta_cov;
};

ProfileEval profile_beta(const num::Vector& y, const num::Matrix& x,
                         const BranchLayout& layout, double sigma2_u,
                         double sigma2_c) {
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(x.cols());

  // V^{-1} w = (1/s2c) (w - sum_k c_k J_k w), c_k = s2U / (s2c + m_k s2U)
  auto vinv_apply = [&](const num::Vector& w) {
    num::Vector out = w;
    for (const auto& members : layout.members) {
      if (members.empty()) continue;
      const double m = static_cast<double>(members.size());
      const double c = sigma2_u / (sigma2_c + m * sigma2_u);
      double sum = 0.0;
      for (int i : members) sum += w[i];
      for (int i : members) out[i] -= c * sum;
    }
    return (out / sigma2_c).eval();
  };

  num::Matrix vinv_x(n, p);
  for (int j = 0; j < p; ++j) vinv_x.col(j) = vinv_apply(x.col(j));
  const num::Matrix xtvx = x.transpose() * vinv_x;
  const num::Vector xtvy = vinv_x.transpose() * y;
  const num::Matrix xtvx_l = num::cholesky_factor_jittered(xtvx);
  const num::Vector beta = num::solve_from_factor(xtvx_l, xtvy);

  const num::Vector resid = y - x * beta;
  const double quad = resid.dot(vinv_apply(resid));

  double logdet = 0.0;
  for (const auto& members : layout.members) {
    if (members.empty()) continue;
    const double m = static_cast<double>(members.size());
    logdet += (m - 1.0) * std::log(sigma2_c) + std::log(sigma2_c + m * sigma2_u);
  }

  ProfileEval eval;
  eval.log_likelihood =
      -0.5 * (logdet + quad + n * std::log(2.0 * M_PI));
  eval.beta = beta;
  const num::Matrix identity = num::Matrix::Identity(p, p);
  eval.beta_cov = num::solve_from_factor(xtvx_l, identity);
  return eval;
}

}  // namespace

num::Vector response_vector(const core::Cohort& cohort, int response_index) {
  if (response_index < 1 || response_index > core::kScoreCount) {
    throw std::invalid_argument(
        "response_vector: Gaussian responses are indexed 1..7");
  }
  num::Vector y(cohort.n());
  for (int i = 0; i < cohort.n(); ++i) {
    y[i] = cohort.records()[i].scores[response_index - 1];
  }
  return y;
}

std::pair<num::Matrix, std::vector<std::string>> reduced_design(
    const core::Cohort& cohort) {
  const core::DesignMatrix full = core::design_matrix(cohort);
  std::vector<int> keep;
  for (int j = 0; j < full.values.cols(); ++j) {
    if (std::find(full.degenerate.begin(), full.degenerate.end(), j) ==
        full.degenerate.end()) {
      keep.push_back(j);
    }
  }
  num::Matrix x(cohort.n(), keep.size());
  std::vector<std::string> labels;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    x.col(j) = full.values.col(keep[j]);
    labels.push_back(full.columns[keep[j]]);
  }
  return {x, labels};
}

double log_likelihood_at(const core::Cohort& cohort, const num::Vector& y,
                         const num::Matrix& x, const LmmParams& params) {
  const BranchLayout layout = branch_layout(cohort);
  const double sigma2_c = params.sigma2_V + params.sigma2_eps;
  const num::Vector resid = y - x * params.beta;

  double logdet = 0.0, quad = 0.0;
  for (const auto& members : layout.members) {
    if (members.empty()) continue;
    const double m = static_cast<double>(members.size());
    const double c = params.sigma2_U / (sigma2_c + m * params.sigma2_U);
    double sum = 0.0, sq = 0.0;
    for (int i : members) {
      sum += resid[i];
      sq += resid[i] * resid[i];
    }
    quad += (sq - c * sum * sum) / sigma2_c;
    logdet +=
        (m - 1.0) * std::log(sigma2_c) + std::log(sigma2_c + m * params.sigma2_U);
  }
  return -0.5 * (logdet + quad + cohort.n() * std::log(2.0 * M_PI));
}

LmmFit fit_lmm(const core::Cohort& cohort, const GaussianLmmSpec& spec) {
  if (spec.response_index < 1 || spec.response_index > core::kScoreCount) {
    throw std::invalid_argument("fit_lmm: response must be a Gaussian response (1..7)");
  }
  if (!(spec.residual_fraction > 0.0 && spec.residual_fraction <= 1.0)) {
    throw std::invalid_argument("fit_lmm: residual_fraction must be in (0,1]");
  }
  const num::Vector y = response_vector(cohort, spec.response_index);
  auto [x, labels] = reduced_design(cohort);
  const BranchLayout layout = branch_layout(cohort);

  // Moment-based starting values on the log scale.
  const double y_mean = y.mean();
  double total_var = 0.0;
  for (int i = 0; i < y.size(); ++i) total_var += (y[i] - y_mean) * (y[i] - y_mean);
  total_var = std::max(total_var / std::max(1, cohort.n()), 1e-8);
  num::Vector start(2);
  start[0] = std::log(std::max(total_var * 0.2, 1e-8));  // log sigma2_U
  start[1] = std::log(std::max(total_var * 0.8, 1e-8));  // log sigma2_combined

  // Profile objective over theta = (log s2U, log s2C); beta is profiled out,
  // so by the envelope theorem the gradient needs no beta derivative.
  auto objective = [&](const num::Vector& theta) {
    const double s2u = std::exp(theta[0]);
    const double s2c = std::exp(theta[1]);
    const ProfileEval eval = profile_beta(y, x, layout, s2u, s2c);
    const num::Vector resid = y - x * eval.beta;

    double d_logdet_u = 0.0, d_logdet_c = 0.0;
    double d_quad_u = 0.0, d_quad_c = 0.0;
    for (const auto& members : layout.members) {
      if (members.empty()) continue;
      const double m = static_cast<double>(members.size());
      const double t = s2c + m * s2u;
      double sum = 0.0;
      for (int i : members) sum += resid[i];
      d_logdet_u += m / t;
      d_logdet_c += (m - 1.0) / s2c + 1.0 / t;
      d_quad_u -= (sum / t) * (sum / t);
      const double c = s2u / t;
      for (int i : members) {
        const double vinv_r = (resid[i] - c * sum) / s2c;
        d_quad_c -= vinv_r * vinv_r;
      }
    }
    num::Objective obj;
    obj.value = eval.log_likelihood;
    obj.gradient.resize(2);
    obj.gradient[0] = -0.5 * (d_logdet_u + d_quad_u) * s2u;
    obj.gradient[1] = -0.5 * (d_logdet_c + d_quad_c) * s2c;
    return obj;
  };

  num::OptimizerSettings settings = spec.optim;
  num::Vector lb(2);
  lb << kLogFloor, kLogFloor;
  settings.parameter_lower_bounds = lb;

  const num::MaximizeResult opt = num::maximize(objective, start, settings);

  const double sigma2_u_raw = std::exp(opt.argmax[0]);
  const double sigma2_c_raw = std::exp(opt.argmax[1]);

  LmmFit fit;
  fit.response_index = spec.response_index;
  fit.residual_fraction = spec.residual_fraction;
  fit.converged = opt.converged;
  fit.sigma2_U_at_zero = sigma2_u_raw < kZeroReport;
  fit.sigma2_combined_at_zero = sigma2_c_raw < kZeroReport;
  fit.sigma2_U = fit.sigma2_U_at_zero ? 0.0 : sigma2_u_raw;
  fit.sigma2_combined = fit.sigma2_combined_at_zero ? 0.0 : sigma2_c_raw;
  fit.sigma2_V = spec.residual_fraction * fit.sigma2_combined;
  fit.sigma2_eps = fit.sigma2_combined - fit.sigma2_V;
  fit.log_likelihood = opt.value;
  fit.beta_labels = labels;

  const ProfileEval at_opt = profile_beta(y, x, layout, sigma2_u_raw, sigma2_c_raw);
  fit.beta = at_opt.beta;
  fit.beta_cov = at_opt.beta_cov;

  LmmParams params{fit.beta, sigma2_u_raw, spec.residual_fraction * sigma2_c_raw,
                   (1.0 - spec.residual_fraction) * sigma2_c_raw};
  auto [u_hat, v_hat] = predict_effects_at(cohort, y, x, params);
  fit.predicted_U = u_hat;
  fit.predicted_V = v_hat;
  if (fit.sigma2_U_at_zero) fit.predicted_U.setZero();
  return fit;
}

std::pair<num::Vector, num::Vector> predict_effects_at(const core::Cohort& cohort,
                                                       const num::Vector& y,
                                                       const num::Matrix& x,
                                                       const LmmParams& params) {
  const BranchLayout layout = branch_layout(cohort);
  const double sigma2_c = params.sigma2_V + params.sigma2_eps;
  if (!(sigma2_c > 0.0)) {
    // No individual-level variance: all effects collapse to zero.
    if (params.sigma2_U > 0.0) {
      throw std::invalid_argument(
          "predict_effects: zero total variance with positive branch variance");
    }
    return {num::Vector::Zero(core::kBranchCount), num::Vector::Zero(cohort.n())};
  }
  const num::Vector resid = y - x * params.beta;

  num::Vector u_hat = num::Vector::Zero(core::kBranchCount);
  for (int k = 0; k < core::kBranchCount; ++k) {
    const auto& members = layout.members[k];
    if (members.empty()) continue;
    const double m = static_cast<double>(members.size());
    double sum = 0.0;
    for (int i : members) sum += resid[i];
    u_hat[k] = params.sigma2_U * sum / (sigma2_c + m * params.sigma2_U);
  }

  const double shrink = params.sigma2_V / sigma2_c;
  num::Vector v_hat(cohort.n());
  for (int i = 0; i < cohort.n(); ++i) {
    v_hat[i] = shrink * (resid[i] - u_hat[layout.of_record[i]]);
  }
  return {u_hat, v_hat};
}

std::pair<num::Vector, num::Vector> predict_effects(const LmmFit& fit,
                                                    const core::Cohort& cohort) {
  if (!fit.converged) {
    throw num::ConvergenceError("predict_effects: fit did not converge");
  }
  const num::Vector y = response_vector(cohort, fit.response_index);
  auto [x, labels] = reduced_design(cohort);
  (void)labels;
  LmmParams params{fit.beta, fit.sigma2_U, fit.sigma2_V, fit.sigma2_eps};
  return predict_effects_at(cohort, y, x, params);
}

}  // namespace latgraph::lmm
