#include <doctest.h>

#include "numerics.hpp"

#include <cmath>
#include <cstring>
#include <vector>

using namespace latgraph;

namespace {

// Independent dense solver: Gaussian elimination with partial pivoting.
num::Vector gauss_solve(num::Matrix a, num::Vector b) {
  const int n = static_cast<int>(a.rows());
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    a.row(col).swap(a.row(pivot));
    std::swap(b[col], b[pivot]);
    for (int r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      a.row(r) -= f * a.row(col);
      b[r] -= f * b[col];
    }
  }
  num::Vector x(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a(r, c) * x[c];
    x[r] = s / a(r, r);
  }
  return x;
}

}  // namespace

TEST_SUITE_BEGIN("numerics");

TEST_CASE("cholesky_solve identity returns rhs") {
  num::Matrix a = num::Matrix::Identity(4, 4);
  num::Vector b(4);
  b << 1.5, -2.0, 0.25, 7.0;
  CHECK((num::cholesky_solve(a, b) - b).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("cholesky_solve diagonal") {
  num::Matrix a = num::Matrix::Zero(2, 2);
  a(0, 0) = 4.0;
  a(1, 1) = 9.0;
  num::Vector b(2);
  b << 8.0, 27.0;
  const num::Vector x = num::cholesky_solve(a, b);
  CHECK(x[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("cholesky_solve matches Gaussian elimination on random SPD") {
  num::Rng rng(313);
  for (int rep = 0; rep < 10; ++rep) {
    num::Matrix g(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) g(i, j) = rng.normal();
    num::Matrix a = g * g.transpose() + 0.5 * num::Matrix::Identity(5, 5);
    num::Vector b = rng.normal_vector(5);
    const num::Vector x = num::cholesky_solve(a, b);
    const num::Vector y = gauss_solve(a, b);
    CHECK((x - y).norm() / y.norm() <= 1e-10);
    CHECK((a * x - b).norm() / b.norm() <= 1e-10);
  }
}

TEST_CASE("cholesky_solve recovers x from A*x up to condition 1e6") {
  num::Rng rng(141);
  for (int rep = 0; rep < 8; ++rep) {
    num::Matrix g(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) g(i, j) = rng.normal();
    num::Matrix q = g * g.transpose() + 6.0 * num::Matrix::Identity(6, 6);
    num::Vector scale(6);
    for (int i = 0; i < 6; ++i) scale[i] = std::pow(10.0, i);  // cond ~ 1e6 x base
    const num::Matrix a = scale.asDiagonal() * q * scale.asDiagonal();
    const num::Vector x = rng.normal_vector(6);
    const num::Vector b = a * x;
    const num::Vector solved = num::cholesky_solve(a, b);
    CHECK((solved - x).norm() / x.norm() <= 1e-9);
  }
}

TEST_CASE("cholesky reports the failing pivot") {
  num::Matrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;  // indefinite
  try {
    num::cholesky_factor(a);
    FAIL("expected DefinitenessError");
  } catch (const num::DefinitenessError& err) {
    CHECK(err.pivot() == 1);
  }
}

TEST_CASE("cholesky rejects asymmetric input") {
  num::Matrix a(2, 2);
  a << 1.0, 0.5, 0.2, 1.0;
  CHECK_THROWS_AS(num::cholesky_factor(a), std::invalid_argument);
}

TEST_CASE("jitter retry saves marginal matrices only") {
  num::Matrix singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  CHECK_THROWS_AS(num::cholesky_factor(singular), num::DefinitenessError);
  CHECK_NOTHROW(num::cholesky_factor_jittered(singular));

  num::Matrix indefinite(2, 2);
  indefinite << 1.0, 4.0, 4.0, 1.0;
  CHECK_THROWS_AS(num::cholesky_factor_jittered(indefinite), num::DefinitenessError);
}

TEST_CASE("maximize quadratic") {
  auto f = [](const num::Vector& x) {
    num::Objective obj;
    obj.value = -(x[0] - 3.0) * (x[0] - 3.0);
    obj.gradient.resize(1);
    obj.gradient[0] = -2.0 * (x[0] - 3.0);
    return obj;
  };
  num::Vector start(1);
  start[0] = 0.0;
  const auto res = num::maximize(f, start);
  CHECK(res.converged);
  CHECK(res.argmax[0] == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("maximize matches a grid-search oracle on a 2-d concave function") {
  auto value = [](double x, double y) {
    const double u = x - 1.2, v = y + 0.7;
    return -(u * u + 0.8 * v * v + 0.3 * u * v);
  };
  auto f = [&](const num::Vector& p) {
    num::Objective obj;
    obj.value = value(p[0], p[1]);
    obj.gradient.resize(2);
    const double u = p[0] - 1.2, v = p[1] + 0.7;
    obj.gradient[0] = -(2.0 * u + 0.3 * v);
    obj.gradient[1] = -(1.6 * v + 0.3 * u);
    return obj;
  };
  num::Vector start(2);
  start << -4.0, 4.0;
  const auto res = num::maximize(f, start);
  CHECK(res.converged);

  // Coarse-to-fine grid: 0.01 over [-5,5]^2, then 0.001 around the best cell.
  double best = -1e300, bx = 0, by = 0;
  for (int i = 0; i <= 1000; ++i) {
    for (int j = 0; j <= 1000; ++j) {
      const double x = -5.0 + i * 0.01, y = -5.0 + j * 0.01;
      const double v = value(x, y);
      if (v > best) best = v, bx = x, by = y;
    }
  }
  for (int i = -20; i <= 20; ++i) {
    for (int j = -20; j <= 20; ++j) {
      const double x = bx + i * 0.001, y = by + j * 0.001;
      const double v = value(x, y);
      if (v > best) best = v, bx = x, by = y;
    }
  }
  CHECK(std::abs(res.argmax[0] - bx) <= 2e-3);
  CHECK(std::abs(res.argmax[1] - by) <= 2e-3);
}

TEST_CASE("maximize reports convergence at a lower bound") {
  auto f = [](const num::Vector& x) {
    num::Objective obj;
    obj.value = -(x[0] + 1.0) * (x[0] + 1.0);
    obj.gradient.resize(1);
    obj.gradient[0] = -2.0 * (x[0] + 1.0);
    return obj;
  };
  num::Vector start(1), lb(1);
  start[0] = 2.0;
  lb[0] = 0.0;
  num::OptimizerSettings settings;
  settings.parameter_lower_bounds = lb;
  const auto res = num::maximize(f, start, settings);
  CHECK(res.converged);
  CHECK(res.argmax[0] == doctest::Approx(0.0));
  REQUIRE(res.at_lower_bound.size() == 1);
  CHECK(res.at_lower_bound[0] == 0);
}

TEST_CASE("maximize never ends below the starting value") {
  num::Rng rng(99);
  for (int rep = 0; rep < 5; ++rep) {
    num::Matrix g(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) g(i, j) = rng.normal();
    const num::Matrix a = g * g.transpose() + num::Matrix::Identity(3, 3);
    const num::Vector center = rng.normal_vector(3);
    auto f = [&](const num::Vector& x) {
      num::Objective obj;
      const num::Vector d = x - center;
      obj.value = -0.5 * d.dot(a * d);
      obj.gradient = -(a * d);
      return obj;
    };
    const num::Vector start = rng.normal_vector(3) * 3.0;
    const double v0 = f(start).value;
    const auto res = num::maximize(f, start);
    CHECK(res.value >= v0 - 1e-9 * (1.0 + std::abs(v0)));
    CHECK(res.converged);
  }
}

TEST_CASE("finite differences: analytic cases") {
  auto sq = [](const num::Vector& x) { return x[0] * x[0]; };
  num::Vector x(1);
  x[0] = 2.0;
  CHECK(num::finite_difference_gradient(sq, x, 1e-5)[0] ==
        doctest::Approx(4.0).epsilon(1e-6));

  auto lin = [](const num::Vector& p) { return 3.0 * p[0] - 7.0 * p[1]; };
  num::Vector x2(2);
  x2 << 0.3, -0.9;
  const num::Vector g = num::finite_difference_gradient(lin, x2, 1e-6);
  CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(g[1] == doctest::Approx(-7.0).epsilon(1e-9));
}

TEST_CASE("finite differences match 2Ax for a quadratic form") {
  num::Rng rng(7);
  num::Matrix g(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) g(i, j) = rng.normal();
  const num::Matrix a = g * g.transpose();
  auto f = [&](const num::Vector& p) { return p.dot(a * p); };
  const num::Vector x = rng.normal_vector(4);
  const num::Vector grad = num::finite_difference_gradient(f, x, 1e-6);
  const num::Vector expect = 2.0 * a * x;
  CHECK((grad - expect).norm() / expect.norm() <= 1e-5);
}

TEST_CASE("rng: identical seeds give identical streams") {
  num::Rng a(20260808), b(20260808);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform(), y = b.uniform();
    CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
  }
  num::Rng c(20260808), d(20260808);
  for (int i = 0; i < 100; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("rng: bivariate normal sample covariance") {
  num::Rng rng(5150);
  const num::Matrix cov = num::Matrix::Identity(2, 2);
  num::Matrix sum = num::Matrix::Zero(2, 2);
  const int draws = 100000;
  const num::Matrix chol = num::cholesky_factor(cov);
  for (int i = 0; i < draws; ++i) {
    const num::Vector z = rng.mvnormal_from_factor(chol);
    sum += z * z.transpose();
  }
  const num::Matrix s = sum / draws;
  CHECK(std::abs(s(0, 0) - 1.0) <= 0.05);
  CHECK(std::abs(s(1, 1) - 1.0) <= 0.05);
  CHECK(std::abs(s(0, 1)) <= 0.05);
}

TEST_CASE("rng: correlated pair hits the target correlation") {
  num::Rng rng(777);
  num::Matrix cov(2, 2);
  cov << 1.0, 0.9, 0.9, 1.0;
  const num::Matrix chol = num::cholesky_factor(cov);
  double sxy = 0, sxx = 0, syy = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const num::Vector z = rng.mvnormal_from_factor(chol);
    sxy += z[0] * z[1];
    sxx += z[0] * z[0];
    syy += z[1] * z[1];
  }
  const double corr = sxy / std::sqrt(sxx * syy);
  CHECK(std::abs(corr - 0.9) <= 0.02);
}

TEST_CASE("rng: non-SPD covariance is rejected") {
  num::Rng rng(1);
  num::Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(rng.mvnormal(bad), num::DefinitenessError);
}

TEST_CASE("normal quantile") {
  CHECK(num::normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(num::normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(num::normal_quantile(0.025) == doctest::Approx(-1.959964).epsilon(1e-6));
  CHECK_THROWS_AS(num::normal_quantile(0.0), std::domain_error);
}

TEST_SUITE_END();
