#pragma once

#include "graphs.hpp"
#include "numerics.hpp"

#include <string>
#include <tuple>
#include <vector>

namespace latgraph::ggm {

// Predicted individual components, one column per response.
struct PredictedEffectsMatrix {
  num::Matrix values;               // n x p
  std::vector<std::string> labels;  // column labels, canonical order by default
  std::string stratum;

  int n() const { return static_cast<int>(values.rows()); }
  int p() const { return static_cast<int>(values.cols()); }
};

struct CovarianceResult {
  num::Matrix s;        // ML covariance, divisor n
  bool rank_deficient = false;
};

// Column-centered ML covariance; flags n < p+1 or numerically singular input.
CovarianceResult sample_covariance(const PredictedEffectsMatrix& effects);

struct IpsResult {
  num::Matrix sigma;      // graph-constrained covariance estimate
  num::Matrix precision;  // exact structural zeros off-graph
  bool converged = false;
  int sweeps = 0;
  double max_clique_gap = 0.0;
};

// Iterative proportional scaling over the maximal cliques of the graph,
// until every clique marginal of sigma matches s within tolerance.
IpsResult ips_fit(const num::Matrix& s, const graphs::UndirectedGraph& graph,
                  double tolerance = 1e-10, int max_sweeps = 10000);

// Maximal cliques via Bron-Kerbosch with pivoting; singletons included for
// isolated vertices. Deterministic order.
std::vector<std::vector<int>> maximal_cliques(const graphs::UndirectedGraph& graph);

// Gaussian profile log-likelihood of the constrained estimate:
// -(n/2) (logdet(sigma) + trace(sigma^{-1} s) + p log 2pi).
double gaussian_log_likelihood(const num::Matrix& sigma_hat,
                               const num::Matrix& precision,
                               const num::Matrix& s, int n);

// BIC = -2 loglik + k log n with k = 2p + |E|.
double bic(const graphs::UndirectedGraph& graph, const num::Matrix& s, int n,
           double ips_tolerance = 1e-10);

struct GgmFit {
  graphs::UndirectedGraph graph;
  num::Matrix sigma_hat;
  num::Matrix precision;
  // (a, b, partial correlation) per edge, lexicographic edge order.
  std::vector<std::tuple<int, int, double>> partial_correlations;
  double bic = 0.0;
  double log_likelihood = 0.0;
  int n = 0;
  std::string stratum;
};

enum class SelectionMethod { stepwise, exhaustive };
SelectionMethod selection_method_from_string(const std::string& name);
std::string to_string(SelectionMethod method);

// Full constrained fit for a fixed graph.
GgmFit fit_graph(const PredictedEffectsMatrix& effects,
                 const graphs::UndirectedGraph& graph,
                 double ips_tolerance = 1e-10);

// Stepwise: greedy single-edge additions/removals from the empty graph,
// applying the best strict BIC decrease, lexicographic tie-breaks.
// Exhaustive: global BIC minimum, only for p <= 5.
GgmFit select_graph(const PredictedEffectsMatrix& effects, SelectionMethod method);

// Labeled edge list with the conditional correlations of the fitted model.
std::vector<graphs::LabeledEdge> partial_correlation_table(const GgmFit& fit);

}  // namespace latgraph::ggm
