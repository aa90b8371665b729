#include "ggm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace latgraph::ggm {

CovarianceResult sample_covariance(const PredictedEffectsMatrix& effects) {
  const int n = effects.n();
  const int p = effects.p();
  if (n < 1) throw std::invalid_argument("sample_covariance: no rows");
  if (!effects.values.allFinite()) {
    throw std::invalid_argument("sample_covariance: non-finite entries");
  }
  CovarianceResult out;
  const num::Vector mean = effects.values.colwise().mean();
  num::Matrix centered = effects.values.rowwise() - mean.transpose();
  out.s = (centered.transpose() * centered) / static_cast<double>(n);
  out.rank_deficient = n < p + 1;
  if (!out.rank_deficient) {
    try {
      num::cholesky_factor(out.s);
    } catch (const num::DefinitenessError&) {
      out.rank_deficient = true;
    }
  }
  return out;
}

std::vector<std::vector<int>> maximal_cliques(const graphs::UndirectedGraph& graph) {
  const int p = graph.vertex_count();
  std::vector<std::vector<bool>> adj(p, std::vector<bool>(p, false));
  for (const auto& [a, b] : graph.edges()) adj[a][b] = adj[b][a] = true;

  std::vector<std::vector<int>> cliques;
  std::vector<int> r;

  // Bron-Kerbosch with a degree pivot; P and X as sorted vectors.
  std::function<void(std::vector<int>, std::vector<int>)> expand =
      [&](std::vector<int> pset, std::vector<int> xset) {
        if (pset.empty() && xset.empty()) {
          cliques.push_back(r);
          return;
        }
        int pivot = -1, best = -1;
        for (int v : pset) {
          int deg = 0;
          for (int w : pset) deg += adj[v][w] ? 1 : 0;
          if (deg > best) best = deg, pivot = v;
        }
        for (int v : xset) {
          int deg = 0;
          for (int w : pset) deg += adj[v][w] ? 1 : 0;
          if (deg > best) best = deg, pivot = v;
        }
        std::vector<int> candidates;
        for (int v : pset) {
          if (pivot < 0 || !adj[pivot][v]) candidates.push_back(v);
        }
        for (int v : candidates) {
          std::vector<int> p2, x2;
          for (int w : pset) {
            if (adj[v][w]) p2.push_back(w);
          }
          for (int w : xset) {
            if (adj[v][w]) x2.push_back(w);
          }
          r.push_back(v);
          expand(std::move(p2), std::move(x2));
          r.pop_back();
          std::erase(pset, v);
          xset.insert(std::lower_bound(xset.begin(), xset.end(), v), v);
        }
      };

  std::vector<int> all(p);
  for (int v = 0; v < p; ++v) all[v] = v;
  expand(all, {});
  for (auto& c : cliques) std::sort(c.begin(), c.end());
  std::sort(cliques.begin(), cliques.end());
  return cliques;
}

IpsResult ips_fit(const num::Matrix& s, const graphs::UndirectedGraph& graph,
                  double tolerance, int max_sweeps) {
  const int p = graph.vertex_count();
  if (s.rows() != p || s.cols() != p) {
    throw std::invalid_argument("ips_fit: covariance/graph dimension mismatch");
  }
  if (!(tolerance > 0.0)) throw std::invalid_argument("ips_fit: tolerance must be > 0");
  num::cholesky_factor(s);  // S must be SPD

  const std::vector<std::vector<int>> cliques = maximal_cliques(graph);

  // Start from the independence model; updates touch only clique entries so
  // off-graph precision entries stay exactly zero.
  num::Matrix k = num::Matrix::Zero(p, p);
  for (int v = 0; v < p; ++v) k(v, v) = 1.0 / s(v, v);

  IpsResult out;
  num::Matrix sigma = num::spd_inverse(k);
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    for (const std::vector<int>& c : cliques) {
      const int m = static_cast<int>(c.size());
      num::Matrix s_cc(m, m), sig_cc(m, m);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          s_cc(i, j) = s(c[i], c[j]);
          sig_cc(i, j) = sigma(c[i], c[j]);
        }
      }
      const num::Matrix delta = num::spd_inverse(s_cc) - num::spd_inverse(sig_cc);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) k(c[i], c[j]) += delta(i, j);
      }
      sigma = num::spd_inverse(k);
    }
    double gap = 0.0;
    for (const std::vector<int>& c : cliques) {
      for (int i : c) {
        for (int j : c) gap = std::max(gap, std::abs(sigma(i, j) - s(i, j)));
      }
    }
    out.sweeps = sweep;
    out.max_clique_gap = gap;
    if (gap <= tolerance) {
      out.converged = true;
      break;
    }
  }
  out.sigma = std::move(sigma);
  out.precision = std::move(k);
  if (!out.converged) {
    throw num::ConvergenceError("ips_fit: sweep cap reached (gap " +
                                std::to_string(out.max_clique_gap) + ")");
  }
  return out;
}

double gaussian_log_likelihood(const num::Matrix& sigma_hat,
                               const num::Matrix& precision,
                               const num::Matrix& s, int n) {
  const int p = static_cast<int>(sigma_hat.rows());
  const double logdet =
      num::logdet_from_factor(num::cholesky_factor(sigma_hat));
  const double trace = (precision * s).trace();
  return -0.5 * n * (logdet + trace + p * std::log(2.0 * M_PI));
}

double bic(const graphs::UndirectedGraph& graph, const num::Matrix& s, int n,
           double ips_tolerance) {
  const IpsResult fit = ips_fit(s, graph, ips_tolerance);
  const double loglik = gaussian_log_likelihood(fit.sigma, fit.precision, s, n);
  const int p = graph.vertex_count();
  const int k = 2 * p + graph.edge_count();
  return -2.0 * loglik + k * std::log(static_cast<double>(n));
}

namespace {

std::vector<std::tuple<int, int, double>> edge_partial_correlations(
    const graphs::UndirectedGraph& graph, const num::Matrix& precision) {
  std::vector<std::tuple<int, int, double>> out;
  for (const auto& [a, b] : graph.edges()) {
    const double rho =
        -precision(a, b) / std::sqrt(precision(a, a) * precision(b, b));
    out.emplace_back(a, b, rho);
  }
  return out;
}

GgmFit assemble_fit(const PredictedEffectsMatrix& effects,
                    const graphs::UndirectedGraph& graph, const num::Matrix& s,
                    double ips_tolerance) {
  const IpsResult ips = ips_fit(s, graph, ips_tolerance);
  GgmFit fit;
  fit.graph = graph;
  fit.sigma_hat = ips.sigma;
  fit.precision = ips.precision;
  fit.partial_correlations = edge_partial_correlations(graph, ips.precision);
  fit.n = effects.n();
  fit.log_likelihood =
      gaussian_log_likelihood(ips.sigma, ips.precision, s, fit.n);
  const int p = graph.vertex_count();
  fit.bic = -2.0 * fit.log_likelihood +
            (2 * p + graph.edge_count()) * std::log(static_cast<double>(fit.n));
  fit.stratum = effects.stratum;
  return fit;
}

graphs::UndirectedGraph stepwise_search(const num::Matrix& s, int n,
                                        const std::vector<std::string>& labels,
                                        double ips_tolerance) {
  const int p = static_cast<int>(labels.size());
  graphs::UndirectedGraph current(labels);
  double current_bic = bic(current, s, n, ips_tolerance);

  const int max_steps = p * (p - 1) + 8;
  for (int step = 0; step < max_steps; ++step) {
    double best_bic = current_bic;
    std::pair<int, int> best_edge{-1, -1};
    bool best_is_add = false;
    for (int a = 0; a < p; ++a) {
      for (int b = a + 1; b < p; ++b) {
        graphs::UndirectedGraph candidate = current;
        const bool adding = !current.has_edge(a, b);
        if (adding) {
          candidate.add_edge(a, b);
        } else {
          candidate.remove_edge(a, b);
        }
        const double candidate_bic = bic(candidate, s, n, ips_tolerance);
        // Strict improvement; ties go to the lexicographically lowest edge,
        // which the scan order delivers.
        if (candidate_bic < best_bic) {
          best_bic = candidate_bic;
          best_edge = {a, b};
          best_is_add = adding;
        }
      }
    }
    if (best_edge.first < 0) break;
    if (best_is_add) {
      current.add_edge(best_edge.first, best_edge.second);
    } else {
      current.remove_edge(best_edge.first, best_edge.second);
    }
    current_bic = best_bic;
  }
  return current;
}

graphs::UndirectedGraph exhaustive_search(const num::Matrix& s, int n,
                                          const std::vector<std::string>& labels,
                                          double ips_tolerance) {
  const int p = static_cast<int>(labels.size());
  if (p > 5) {
    throw std::invalid_argument(
        "exhaustive selection is limited to 5 vertices (1024 graphs)");
  }
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < p; ++a) {
    for (int b = a + 1; b < p; ++b) pairs.emplace_back(a, b);
  }
  const std::size_t count = std::size_t{1} << pairs.size();

  double best_bic = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, int>> best_edges;
  bool have_best = false;
  for (std::size_t mask = 0; mask < count; ++mask) {
    graphs::UndirectedGraph g(labels);
    std::vector<std::pair<int, int>> edges;
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      if (mask & (std::size_t{1} << e)) {
        g.add_edge(pairs[e].first, pairs[e].second);
        edges.push_back(pairs[e]);
      }
    }
    const double candidate_bic = bic(g, s, n, ips_tolerance);
    if (!have_best || candidate_bic < best_bic ||
        (candidate_bic == best_bic && edges < best_edges)) {
      best_bic = candidate_bic;
      best_edges = edges;
      have_best = true;
    }
  }
  graphs::UndirectedGraph best(labels);
  for (const auto& [a, b] : best_edges) best.add_edge(a, b);
  return best;
}

}  // namespace

SelectionMethod selection_method_from_string(const std::string& name) {
  if (name == "stepwise") return SelectionMethod::stepwise;
  if (name == "exhaustive") return SelectionMethod::exhaustive;
  throw std::invalid_argument("unknown selection method '" + name +
                              "' (expected stepwise or exhaustive)");
}

std::string to_string(SelectionMethod method) {
  return method == SelectionMethod::stepwise ? "stepwise" : "exhaustive";
}

GgmFit fit_graph(const PredictedEffectsMatrix& effects,
                 const graphs::UndirectedGraph& graph, double ips_tolerance) {
  const CovarianceResult cov = sample_covariance(effects);
  if (cov.rank_deficient) {
    throw std::invalid_argument(
        "predicted effects covariance is rank deficient; need n > p "
        "independent rows");
  }
  return assemble_fit(effects, graph, cov.s, ips_tolerance);
}

GgmFit select_graph(const PredictedEffectsMatrix& effects, SelectionMethod method) {
  const CovarianceResult cov = sample_covariance(effects);
  if (cov.rank_deficient) {
    throw std::invalid_argument(
        "predicted effects covariance is rank deficient; need n > p "
        "independent rows");
  }
  const double ips_tolerance = 1e-10;
  const graphs::UndirectedGraph selected =
      method == SelectionMethod::stepwise
          ? stepwise_search(cov.s, effects.n(), effects.labels, ips_tolerance)
          : exhaustive_search(cov.s, effects.n(), effects.labels, ips_tolerance);
  return assemble_fit(effects, selected, cov.s, ips_tolerance);
}

std::vector<graphs::LabeledEdge> partial_correlation_table(const GgmFit& fit) {
  std::vector<graphs::LabeledEdge> out;
  for (const auto& [a, b, rho] : fit.partial_correlations) {
    out.push_back({fit.graph.label(a), fit.graph.label(b), rho});
  }
  return out;
}

}  // namespace latgraph::ggm
