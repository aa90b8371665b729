#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace latgraph::num {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when a matrix that must be symmetric positive definite is not.
/// `pivot()` is the zero-based index of the first non-positive pivot.
class DefinitenessError : public std::runtime_error {
 public:
  DefinitenessError(int pivot, const std::string& what)
      : std::runtime_error(what), pivot_(pivot) {}
  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lower Cholesky factor of a symmetric positive definite matrix.
// Symmetry is required within 1e-10 relative; a non-positive pivot raises
// DefinitenessError naming the pivot index.
Matrix cholesky_factor(const Matrix& a);

// Like cholesky_factor, but retries once with 1e-8 * trace/p added to the
// diagonal when the plain factorization fails marginally.
Matrix cholesky_factor_jittered(const Matrix& a);

Vector solve_from_factor(const Matrix& lower, const Vector& b);
Matrix solve_from_factor(const Matrix& lower, const Matrix& b);
double logdet_from_factor(const Matrix& lower);

// Solves A x = b for symmetric positive definite A.
Vector cholesky_solve(const Matrix& a, const Vector& b);

// Inverse of a symmetric positive definite matrix.
Matrix spd_inverse(const Matrix& a);

struct OptimizerSettings {
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;  // infinity norm
  int step_halving_limit = 50;
  std::optional<Vector> parameter_lower_bounds;
  // Relative tolerance for treating a trial value as "not worse"; steps within
  // this slack are accepted only when they strictly reduce the gradient.
  // Raise it for objectives whose evaluation carries iterative-solver noise.
  double value_slack_relative = 0.0;
};

// Objective evaluation for maximize(). The Hessian is optional; when absent
// the optimizer differentiates the gradient numerically.
struct Objective {
  double value = 0.0;
  Vector gradient;
  std::optional<Matrix> hessian;
};

using ObjectiveFn = std::function<Objective(const Vector&)>;

struct MaximizeResult {
  Vector argmax;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<int> at_lower_bound;  // coordinates converged at their lower bound
  std::string message;
};

// Safeguarded Newton ascent: monotone over accepted steps (step halving),
// projects onto the optional per-coordinate lower bounds, and reports
// bound-active coordinates separately.
MaximizeResult maximize(const ObjectiveFn& f, const Vector& start,
                        const OptimizerSettings& settings = {});

// Central finite differences, coordinate-wise.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& x, double h);

// Symmetrized forward differences of an analytic gradient.
Matrix finite_difference_hessian(const std::function<Vector(const Vector&)>& grad,
                                 const Vector& x, double h);

// Deterministic random generator. The engine is the standard-specified
// mt19937_64; uniform and normal transforms are implemented here so the
// stream depends only on the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform draw in [0, 1).
  double uniform();
  // Standard normal via Box-Muller with a cached spare.
  double normal();
  Vector normal_vector(int n);
  // Multivariate normal with the given covariance (Cholesky internally).
  Vector mvnormal(const Matrix& covariance);
  Vector mvnormal_from_factor(const Matrix& chol_lower);
  // Index in [0, probs.size()) by cumulative inversion.
  int categorical(const std::vector<double>& probs);

  // Stream for an independent task: splitmix64 mix of (base, index).
  static std::uint64_t derive(std::uint64_t base, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Inverse standard normal CDF (Wichura AS241 style rational approximation).
double normal_quantile(double p);

}  // namespace latgraph::num
