#include "numerics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace latgraph::num {

namespace {

void check_square_symmetric(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("cholesky: matrix is not square");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale) {
    std::ostringstream msg;
    msg << "cholesky: matrix is not symmetric (max asymmetry " << asym << ")";
    throw std::invalid_argument(msg.str());
  }
}

// Plain in-place lower Cholesky so the failing pivot index is visible.
Matrix factor_or_throw(const Matrix& a) {
  const int p = static_cast<int>(a.rows());
  Matrix l = Matrix::Zero(p, p);
  for (int j = 0; j < p; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      std::ostringstream msg;
      msg << "matrix is not positive definite: pivot " << j << " = " << d;
      throw DefinitenessError(j, msg.str());
    }
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < p; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

}  // namespace

Matrix cholesky_factor(const Matrix& a) {
  check_square_symmetric(a);
  return factor_or_throw(a);
}

Matrix cholesky_factor_jittered(const Matrix& a) {
  check_square_symmetric(a);
  try {
    return factor_or_throw(a);
  } catch (const DefinitenessError&) {
    const int p = static_cast<int>(a.rows());
    const double jitter = 1e-8 * a.trace() / std::max(1, p);
    if (!(jitter > 0.0)) throw;
    Matrix aj = a;
    aj.diagonal().array() += jitter;
    return factor_or_throw(aj);
  }
}

Vector solve_from_factor(const Matrix& lower, const Vector& b) {
  Vector y = lower.triangularView<Eigen::Lower>().solve(b);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix solve_from_factor(const Matrix& lower, const Matrix& b) {
  Matrix y = lower.triangularView<Eigen::Lower>().solve(b);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

double logdet_from_factor(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

Vector cholesky_solve(const Matrix& a, const Vector& b) {
  return solve_from_factor(cholesky_factor(a), b);
}

Matrix spd_inverse(const Matrix& a) {
  const Matrix l = cholesky_factor(a);
  const Matrix identity = Matrix::Identity(a.rows(), a.cols());
  return solve_from_factor(l, identity);
}

namespace {

bool finite(const Vector& v) { return v.allFinite(); }

Vector project_to_bounds(Vector x, const std::optional<Vector>& lb) {
  if (lb) x = x.cwiseMax(*lb);
  return x;
}

}  // namespace

MaximizeResult maximize(const ObjectiveFn& f, const Vector& start,
                        const OptimizerSettings& settings) {
  if (settings.max_iterations < 1 || settings.gradient_tolerance <= 0.0) {
    throw std::invalid_argument("maximize: invalid optimizer settings");
  }
  const auto& lb = settings.parameter_lower_bounds;
  if (lb && lb->size() != start.size()) {
    throw std::invalid_argument("maximize: bound/start dimension mismatch");
  }

  MaximizeResult result;
  Vector x = project_to_bounds(start, lb);
  Objective cur = f(x);
  if (!std::isfinite(cur.value) || !finite(cur.gradient)) {
    throw std::invalid_argument("maximize: objective not finite at start");
  }

  const int n = static_cast<int>(x.size());
  const double bound_tol = 1e-12;

  auto active_at_bound = [&](const Vector& point, const Vector& grad, int i) {
    // At the lower bound with the gradient pushing outward.
    return lb && point[i] <= (*lb)[i] + bound_tol && grad[i] <= 0.0;
  };

  auto projected_gradient_norm = [&](const Vector& point, const Vector& grad) {
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      if (active_at_bound(point, grad, i)) continue;
      norm = std::max(norm, std::abs(grad[i]));
    }
    return norm;
  };

  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    result.iterations = iter;
    if (projected_gradient_norm(x, cur.gradient) <= settings.gradient_tolerance) {
      result.converged = true;
      break;
    }

    Matrix hess;
    if (cur.hessian) {
      hess = *cur.hessian;
    } else {
      hess = finite_difference_hessian(
          [&](const Vector& p) { return f(p).gradient; }, x, 1e-6);
    }

    // Freeze coordinates held at their lower bound.
    std::vector<int> free_idx;
    free_idx.reserve(n);
    for (int i = 0; i < n; ++i) {
      if (!active_at_bound(x, cur.gradient, i)) free_idx.push_back(i);
    }
    const int m = static_cast<int>(free_idx.size());
    if (m == 0) {
      result.converged = true;
      break;
    }
    Vector g(m);
    Matrix h(m, m);
    for (int i = 0; i < m; ++i) {
      g[i] = cur.gradient[free_idx[i]];
      for (int j = 0; j < m; ++j) h(i, j) = hess(free_idx[i], free_idx[j]);
    }

    // Newton direction on -H (expected SPD near a maximum). Indefinite or
    // near-singular curvature gets its eigenvalues clamped, which keeps long
    // steps along flat ridges instead of stalling.
    Vector step_free;
    bool have_newton = false;
    try {
      Matrix neg_h = -h;
      step_free = solve_from_factor(cholesky_factor(neg_h), g);
      have_newton = step_free.allFinite();
    } catch (const std::exception&) {
      have_newton = false;
    }
    if (!have_newton) {
      Eigen::SelfAdjointEigenSolver<Matrix> eigs(-h);
      if (eigs.info() == Eigen::Success) {
        const double lmax = eigs.eigenvalues().cwiseAbs().maxCoeff();
        const double floor_ev = std::max(1e-8 * lmax, 1e-12);
        Vector inv = eigs.eigenvalues().cwiseMax(floor_ev).cwiseInverse();
        step_free = eigs.eigenvectors() * inv.asDiagonal() *
                    (eigs.eigenvectors().transpose() * g);
        have_newton = step_free.allFinite();
      }
    }
    if (!have_newton) {
      const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
      step_free = g / scale;
    }

    Vector step = Vector::Zero(n);
    for (int i = 0; i < m; ++i) step[free_idx[i]] = step_free[i];

    // Near the optimum a Newton step may shrink the gradient by orders of
    // magnitude while moving the objective by less than one ulp, so steps
    // that hold the value within rounding and strictly reduce the projected
    // gradient are also accepted.
    const double slack =
        std::max(8.0 * std::numeric_limits<double>::epsilon(),
                 settings.value_slack_relative) *
        (1.0 + std::abs(cur.value));
    const double cur_gnorm = projected_gradient_norm(x, cur.gradient);
    auto line_search = [&](const Vector& direction) {
      double alpha = 1.0;
      for (int halving = 0; halving <= settings.step_halving_limit; ++halving) {
        Vector trial = project_to_bounds(x + alpha * direction, lb);
        Objective cand;
        bool usable = true;
        try {
          cand = f(trial);
        } catch (const std::exception&) {
          usable = false;
        }
        if (usable && std::isfinite(cand.value) && finite(cand.gradient)) {
          const bool better_value = cand.value > cur.value;
          const bool flat_but_sharper =
              cand.value >= cur.value - slack &&
              projected_gradient_norm(trial, cand.gradient) < cur_gnorm;
          if (better_value || flat_but_sharper) {
            x = trial;
            cur = std::move(cand);
            return true;
          }
        }
        alpha *= 0.5;
      }
      return false;
    };

    bool accepted = line_search(step);
    if (!accepted) {
      // Retry along the raw ascent direction; rescued iterations are common
      // when the curvature estimate is stale or nearly singular.
      Vector ascent = Vector::Zero(n);
      const double scale = std::max(1.0, cur.gradient.cwiseAbs().maxCoeff());
      for (int i = 0; i < m; ++i) {
        ascent[free_idx[i]] = cur.gradient[free_idx[i]] / scale;
      }
      accepted = line_search(ascent);
    }
    if (!accepted) {
      result.message = "step halving exhausted";
      break;
    }
  }

  if (!result.converged &&
      projected_gradient_norm(x, cur.gradient) <= settings.gradient_tolerance) {
    result.converged = true;
  }
  for (int i = 0; i < n; ++i) {
    if (active_at_bound(x, cur.gradient, i)) result.at_lower_bound.push_back(i);
  }
  result.argmax = x;
  result.value = cur.value;
  if (!result.converged && result.message.empty()) {
    result.message = "iteration cap reached";
  }
  return result;
}

Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite differences need h > 0");
  Vector g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vector hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    const double fhi = f(hi), flo = f(lo);
    if (!std::isfinite(fhi) || !std::isfinite(flo)) {
      throw std::domain_error("finite differences: non-finite evaluation");
    }
    g[i] = (fhi - flo) / (2.0 * h);
  }
  return g;
}

Matrix finite_difference_hessian(const std::function<Vector(const Vector&)>& grad,
                                 const Vector& x, double h) {
  const int n = static_cast<int>(x.size());
  Matrix hess(n, n);
  for (int i = 0; i < n; ++i) {
    const double hi = h * std::max(1.0, std::abs(x[i]));
    Vector up = x, dn = x;
    up[i] += hi;
    dn[i] -= hi;
    hess.col(i) = (grad(up) - grad(dn)) / (2.0 * hi);
  }
  return ((hess + hess.transpose()) / 2.0).eval();
}

double Rng::uniform() {
  // 53 random bits into [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

Vector Rng::normal_vector(int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Vector Rng::mvnormal(const Matrix& covariance) {
  return mvnormal_from_factor(cholesky_factor(covariance));
}

Vector Rng::mvnormal_from_factor(const Matrix& chol_lower) {
  return chol_lower * normal_vector(static_cast<int>(chol_lower.rows()));
}

int Rng::categorical(const std::vector<double>& probs) {
  const double u = uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

std::uint64_t Rng::derive(std::uint64_t base, std::uint64_t index) {
  // splitmix64 over the combined word.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("normal_quantile: p must be in (0,1)");
  }
  // Wichura's AS241 (PPND16).
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                  6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
              1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    value = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    value = num / den;
  }
  return (q < 0.0) ? -value : value;
}

}  // namespace latgraph::num
