#include <doctest.h>

#include "ggm.hpp"
#include "sim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace latgraph;

namespace {

ggm::PredictedEffectsMatrix draws_from(const num::Matrix& sigma, int n,
                                       std::uint64_t seed,
                                       std::vector<std::string> labels) {
  ggm::PredictedEffectsMatrix m;
  m.labels = std::move(labels);
  m.values.resize(n, sigma.rows());
  num::Rng rng(seed);
  const num::Matrix chol = num::cholesky_factor(sigma);
  for (int i = 0; i < n; ++i) {
    m.values.row(i) = rng.mvnormal_from_factor(chol).transpose();
  }
  return m;
}

std::vector<std::string> letters(int p) {
  std::vector<std::string> out;
  for (int i = 0; i < p; ++i) out.push_back(std::string(1, static_cast<char>('a' + i)));
  return out;
}

std::set<std::pair<int, int>> edge_set(const graphs::UndirectedGraph& g) {
  const auto edges = g.edges();
  return {edges.begin(), edges.end()};
}

}  // namespace

TEST_SUITE_BEGIN("ggm");

TEST_CASE("sample covariance: duplicated rows equal weighted data") {
  num::Rng rng(11);
  ggm::PredictedEffectsMatrix base;
  base.labels = letters(3);
  base.values.resize(12, 3);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 3; ++j) base.values(i, j) = rng.normal();

  ggm::PredictedEffectsMatrix doubled;
  doubled.labels = base.labels;
  doubled.values.resize(24, 3);
  doubled.values << base.values, base.values;

  const num::Matrix s1 = ggm::sample_covariance(base).s;
  const num::Matrix s2 = ggm::sample_covariance(doubled).s;
  CHECK((s1 - s2).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("sample covariance flags degeneracy") {
  ggm::PredictedEffectsMatrix m;
  m.labels = letters(2);
  m.values.resize(10, 2);
  num::Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    m.values(i, 0) = rng.normal();
    m.values(i, 1) = 2.0 * m.values(i, 0);  // perfectly correlated
  }
  CHECK(ggm::sample_covariance(m).rank_deficient);

  ggm::PredictedEffectsMatrix small;
  small.labels = letters(8);
  small.values = num::Matrix::Random(5, 8);  // n < p + 1
  CHECK(ggm::sample_covariance(small).rank_deficient);
}

TEST_CASE("sample covariance concentrates at the delta-method rate") {
  const num::Matrix sigma = [] {
    num::Matrix s(3, 3);
    s << 1.0, 0.5, 0.2, 0.5, 2.0, -0.3, 0.2, -0.3, 1.5;
    return s;
  }();
  const int n = 200;
  int hits = 0;
  const int seeds = 40;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto m = draws_from(sigma, n, 1000 + seed, letters(3));
    const num::Matrix s = ggm::sample_covariance(m).s;
    const double bound = 5.0 * std::sqrt(sigma.cwiseAbs2().maxCoeff() / n);
    if ((s - sigma).cwiseAbs().maxCoeff() <= bound) ++hits;
  }
  CHECK(hits >= 38);  // >= 95% of seeds
}

TEST_CASE("ips: complete graph reproduces S exactly") {
  const auto m = draws_from(num::Matrix::Identity(4, 4), 50, 8, letters(4));
  const num::Matrix s = ggm::sample_covariance(m).s;
  graphs::UndirectedGraph complete(letters(4));
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) complete.add_edge(a, b);
  const ggm::IpsResult fit = ggm::ips_fit(s, complete, 1e-12);
  CHECK(fit.converged);
  CHECK((fit.sigma - s).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("ips: empty graph returns diag(S)") {
  const auto m = draws_from(num::Matrix::Identity(3, 3), 40, 9, letters(3));
  const num::Matrix s = ggm::sample_covariance(m).s;
  const ggm::IpsResult fit = ggm::ips_fit(s, graphs::UndirectedGraph(letters(3)), 1e-12);
  num::Matrix expect = num::Matrix::Zero(3, 3);
  expect.diagonal() = s.diagonal();
  CHECK((fit.sigma - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("ips: chain matches the decomposable closed form") {
  num::Matrix sigma(3, 3);
  sigma << 1.0, 0.6, 0.3, 0.6, 1.2, 0.5, 0.3, 0.5, 0.9;
  const auto m = draws_from(sigma, 80, 10, letters(3));
  const num::Matrix s = ggm::sample_covariance(m).s;
  graphs::UndirectedGraph chain(letters(3));
  chain.add_edge(0, 1);
  chain.add_edge(1, 2);
  const ggm::IpsResult fit = ggm::ips_fit(s, chain, 1e-12);

  // Closed form: K = pad(inv(S_ab)) + pad(inv(S_bc)) - pad(inv(S_b)).
  num::Matrix k = num::Matrix::Zero(3, 3);
  const num::Matrix s_ab = s.topLeftCorner(2, 2);
  const num::Matrix s_bc = s.bottomRightCorner(2, 2);
  k.topLeftCorner(2, 2) += num::spd_inverse(s_ab);
  k.bottomRightCorner(2, 2) += num::spd_inverse(s_bc);
  k(1, 1) -= 1.0 / s(1, 1);
  const num::Matrix sigma_closed = num::spd_inverse(k);
  CHECK((fit.sigma - sigma_closed).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(fit.precision(0, 2) == 0.0);
  CHECK(fit.precision(2, 0) == 0.0);
}

TEST_CASE("ips: clique marginals match S within tolerance") {
  num::Rng rng(77);
  num::Matrix g(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) g(i, j) = rng.normal();
  const num::Matrix s = g * g.transpose() / 5.0 + num::Matrix::Identity(5, 5);
  graphs::UndirectedGraph graph(letters(5));
  graph.add_edge(0, 1);
  graph.add_edge(1, 2);
  graph.add_edge(2, 3);
  graph.add_edge(3, 0);  // 4-cycle: non-decomposable
  graph.add_edge(2, 4);
  const double tol = 1e-11;
  const ggm::IpsResult fit = ggm::ips_fit(s, graph, tol);
  CHECK(fit.converged);
  for (const auto& clique : ggm::maximal_cliques(graph)) {
    for (int a : clique)
      for (int b : clique) CHECK(std::abs(fit.sigma(a, b) - s(a, b)) <= tol);
  }
  // Structural zeros are exact.
  CHECK(fit.precision(0, 2) == 0.0);
  CHECK(fit.precision(1, 3) == 0.0);
  CHECK(fit.precision(0, 4) == 0.0);
}

TEST_CASE("maximal cliques of a known graph") {
  graphs::UndirectedGraph g(letters(5));
  g.add_edge(0, 1);
  g.add_edge(1, 2);
  g.add_edge(0, 2);
  g.add_edge(2, 3);
  const auto cliques = ggm::maximal_cliques(g);
  const std::vector<std::vector<int>> expect = {{0, 1, 2}, {2, 3}, {4}};
  CHECK(cliques == expect);
}

TEST_CASE("bic: nesting is monotone in the likelihood") {
  const auto m = draws_from(num::Matrix::Identity(4, 4), 60, 21, letters(4));
  const num::Matrix s = ggm::sample_covariance(m).s;
  graphs::UndirectedGraph small(letters(4));
  small.add_edge(0, 1);
  graphs::UndirectedGraph big = small;
  big.add_edge(2, 3);
  big.add_edge(0, 2);
  const ggm::IpsResult f_small = ggm::ips_fit(s, small, 1e-11);
  const ggm::IpsResult f_big = ggm::ips_fit(s, big, 1e-11);
  const double ll_small = ggm::gaussian_log_likelihood(f_small.sigma, f_small.precision, s, 60);
  const double ll_big = ggm::gaussian_log_likelihood(f_big.sigma, f_big.precision, s, 60);
  CHECK(ll_big >= ll_small - 1e-9);
}

TEST_CASE("bic: trace term equals p at the constrained optimum") {
  const auto m = draws_from(num::Matrix::Identity(8, 8), 100, 5, letters(8));
  const num::Matrix s = ggm::sample_covariance(m).s;
  graphs::UndirectedGraph complete(letters(8));
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b) complete.add_edge(a, b);
  const ggm::IpsResult fit = ggm::ips_fit(s, complete, 1e-12);
  CHECK((fit.precision * s).trace() == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("bic: empty graph wins on independent data") {
  const auto m = draws_from(num::Matrix::Identity(3, 3), 5000, 303, letters(3));
  const num::Matrix s = ggm::sample_covariance(m).s;
  double best = 1e300;
  int best_mask = -1;
  const std::vector<std::pair<int, int>> pairs = {{0, 1}, {0, 2}, {1, 2}};
  for (int mask = 0; mask < 8; ++mask) {
    graphs::UndirectedGraph g(letters(3));
    for (int e = 0; e < 3; ++e) {
      if (mask & (1 << e)) g.add_edge(pairs[e].first, pairs[e].second);
    }
    const double value = ggm::bic(g, s, 5000);
    if (value < best) {
      best = value;
      best_mask = mask;
    }
  }
  CHECK(best_mask == 0);
}

TEST_CASE("bic: an edge pays off iff the likelihood gain beats (log n)/2") {
  const num::Matrix sigma = [] {
    num::Matrix s = num::Matrix::Identity(3, 3);
    s(0, 1) = s(1, 0) = 0.25;
    return s;
  }();
  const auto m = draws_from(sigma, 400, 17, letters(3));
  const num::Matrix s = ggm::sample_covariance(m).s;
  const int n = 400;
  graphs::UndirectedGraph empty(letters(3));
  graphs::UndirectedGraph with_edge = empty;
  with_edge.add_edge(0, 1);
  const ggm::IpsResult f0 = ggm::ips_fit(s, empty, 1e-11);
  const ggm::IpsResult f1 = ggm::ips_fit(s, with_edge, 1e-11);
  const double gain =
      ggm::gaussian_log_likelihood(f1.sigma, f1.precision, s, n) -
      ggm::gaussian_log_likelihood(f0.sigma, f0.precision, s, n);
  const double bic_drop = ggm::bic(empty, s, n) - ggm::bic(with_edge, s, n);
  CHECK((bic_drop > 0) == (gain > 0.5 * std::log(n)));
  CHECK(bic_drop == doctest::Approx(2.0 * gain - std::log(n)).epsilon(1e-9));
}

TEST_CASE("select_graph: independent columns give the empty graph") {
  const auto m = draws_from(num::Matrix::Identity(5, 5), 4000, 99, letters(5));
  const ggm::GgmFit fit = ggm::select_graph(m, ggm::SelectionMethod::stepwise);
  CHECK(fit.graph.edge_count() == 0);
  CHECK(ggm::partial_correlation_table(fit).empty());
}

TEST_CASE("select_graph: stepwise tracks the exhaustive optimum on chains") {
  graphs::UndirectedGraph chain(letters(4));
  chain.add_edge(0, 1);
  chain.add_edge(1, 2);
  chain.add_edge(2, 3);
  std::vector<graphs::LabeledEdge> labels = {
      {"a", "b", 0.35}, {"b", "c", 0.3}, {"c", "d", 0.4}};
  const num::Matrix sigma =
      sim::scenario_from_graph(chain, labels, num::Vector::Ones(4));
  int agree = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const auto m = draws_from(sigma, 2000, 7000 + seed, letters(4));
    const ggm::GgmFit step = ggm::select_graph(m, ggm::SelectionMethod::stepwise);
    const ggm::GgmFit exact = ggm::select_graph(m, ggm::SelectionMethod::exhaustive);
    CHECK(exact.bic <= step.bic + 1e-9);
    if (edge_set(step.graph) == edge_set(exact.graph)) ++agree;
  }
  CHECK(agree >= 16);
}

TEST_CASE("select_graph: exhaustive refuses more than 5 vertices") {
  const auto m = draws_from(num::Matrix::Identity(6, 6), 100, 1, letters(6));
  CHECK_THROWS_WITH_AS(ggm::select_graph(m, ggm::SelectionMethod::exhaustive),
                       doctest::Contains("5 vertices"), std::invalid_argument);
}

TEST_CASE("select_graph: recovers the bonus structure from direct draws") {
  const graphs::UndirectedGraph truth = graphs::fig1b_bonus();
  const num::Matrix sigma = sim::scenario_from_graph(
      truth, graphs::fig1b_edge_labels(), num::Vector::Ones(8));
  const auto truth_edges = edge_set(truth);
  int close = 0;
  std::vector<std::string> labels(truth.labels());
  for (int seed = 0; seed < 20; ++seed) {
    const auto m = draws_from(sigma, 1000, 52000 + seed, labels);
    const ggm::GgmFit fit = ggm::select_graph(m, ggm::SelectionMethod::stepwise);
    const auto selected = edge_set(fit.graph);
    int common = 0;
    for (const auto& e : selected) common += truth_edges.count(e) ? 1 : 0;
    const int shd =
        static_cast<int>(selected.size() + truth_edges.size()) - 2 * common;
    if (shd <= 2) ++close;
  }
  CHECK(close >= 16);
}

TEST_CASE("selection is invariant under positive column rescaling") {
  num::Matrix sigma(4, 4);
  sigma << 1.0, 0.4, 0.0, 0.0, 0.4, 1.0, 0.35, 0.0, 0.0, 0.35, 1.0, 0.3, 0.0,
      0.0, 0.3, 1.0;
  const auto base = draws_from(sigma, 500, 2024, letters(4));
  const auto baseline = edge_set(ggm::select_graph(base, ggm::SelectionMethod::stepwise).graph);
  num::Rng rng(4711);
  for (int rep = 0; rep < 10; ++rep) {
    ggm::PredictedEffectsMatrix scaled = base;
    for (int c = 0; c < 4; ++c) {
      scaled.values.col(c) *= std::exp(2.0 * rng.normal());
    }
    const auto edges = edge_set(ggm::select_graph(scaled, ggm::SelectionMethod::stepwise).graph);
    CHECK(edges == baseline);
  }
}

TEST_CASE("selection is permutation equivariant") {
  num::Matrix sigma(4, 4);
  sigma << 1.0, 0.45, 0.0, 0.0, 0.45, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.4, 0.0,
      0.0, 0.4, 1.0;
  const auto base = draws_from(sigma, 800, 5, letters(4));
  const auto base_edges = edge_set(ggm::select_graph(base, ggm::SelectionMethod::stepwise).graph);

  const std::vector<int> perm = {2, 0, 3, 1};  // column c of permuted = base perm[c]
  ggm::PredictedEffectsMatrix permuted;
  permuted.values.resize(base.values.rows(), 4);
  permuted.labels.resize(4);
  for (int c = 0; c < 4; ++c) {
    permuted.values.col(c) = base.values.col(perm[c]);
    permuted.labels[c] = base.labels[perm[c]];
  }
  const auto perm_fit = ggm::select_graph(permuted, ggm::SelectionMethod::stepwise);
  std::set<std::pair<int, int>> mapped;
  for (const auto& [a, b] : perm_fit.graph.edges()) {
    int pa = perm[a], pb = perm[b];
    mapped.insert({std::min(pa, pb), std::max(pa, pb)});
  }
  CHECK(mapped == base_edges);
}

TEST_CASE("partial correlations from a hand precision matrix") {
  ggm::PredictedEffectsMatrix m = draws_from(num::Matrix::Identity(3, 3), 50, 2, letters(3));
  graphs::UndirectedGraph g(letters(3));
  g.add_edge(0, 1);
  ggm::GgmFit fit;
  fit.graph = g;
  fit.precision.resize(3, 3);
  fit.precision << 1.0, -0.5, 0.0, -0.5, 1.0, 0.0, 0.0, 0.0, 1.0;
  fit.partial_correlations = {{0, 1, 0.5}};
  const auto table = ggm::partial_correlation_table(fit);
  REQUIRE(table.size() == 1);
  CHECK(table[0].a == "a");
  CHECK(table[0].b == "b");
  CHECK(table[0].value == doctest::Approx(0.5));
  // -omega_ab / sqrt(omega_aa omega_bb) with the hand matrix
  CHECK(-fit.precision(0, 1) / std::sqrt(fit.precision(0, 0) * fit.precision(1, 1)) ==
        doctest::Approx(0.5));
}

TEST_SUITE_END();
