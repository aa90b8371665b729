#pragma once

#include "core.hpp"
#include "ggm.hpp"
#include "graphs.hpp"
#include "numerics.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace latgraph::sim {

struct SimScenario {
  int n = 299;
  int branch_count = core::kBranchCount;
  std::vector<double> branch_probabilities;  // empty = uniform
  // Fixed effects: (intercept, male, age21plus) for the seven scores,
  // (male, age21plus) for Geom, whose intercept lives in the baseline.
  std::array<num::Vector, core::kResponseCount> beta;
  std::array<double, core::kResponseCount> sigma2_U{};
  num::Matrix sigma_v;                      // 8x8 SPD
  std::vector<double> baseline_hazards;     // per period, in (0,1)
  int admin_censor_period = 8;              // horizon C
  double p_male = 0.5;
  double p_age21plus = 0.5;
  double p_bonus = 0.0;
  std::uint64_t seed = 0;
  // Edge set of the precision structure when sigma_v was built from a graph.
  std::optional<graphs::UndirectedGraph> truth_graph;

  void validate() const;
};

// Covariance with the requested partial correlations on the edges, exact
// zeros in the precision off the edges, and diag(Sigma) matched to the
// requested variances by a fixed-point diagonal adjustment (within 1e-6).
num::Matrix scenario_from_graph(const graphs::UndirectedGraph& graph,
                                const std::vector<graphs::LabeledEdge>& partial_correlations,
                                const num::Vector& variances);

struct SimTruth {
  num::Matrix u;                    // 10 x 8 branch components
  num::Matrix v;                    // n x 8 individual components
  std::vector<int> t_uncensored;    // latent event time, capped
  std::vector<bool> t_capped;
  double censoring_fraction = 0.0;
};

struct SimResult {
  core::Cohort cohort;
  SimTruth truth;
};

SimResult simulate_cohort(const SimScenario& scenario);

// Named built-in scenarios: fig1a_no_bonus, fig1b_bonus, paper_like.
SimScenario preset(const std::string& name);
bool is_preset_name(const std::string& name);

SimScenario scenario_from_json(const std::string& text);
std::string scenario_to_json(const SimScenario& scenario);
std::string scenario_schema_json();

struct ReplicateOutcome {
  bool ok = false;
  std::string error;
  int shd = 0;           // structural Hamming distance to the truth edges
  double edge_precision = 1.0;
  double edge_recall = 1.0;
  std::vector<std::pair<std::string, std::string>> selected_edges;
};

struct RecoveryReport {
  std::vector<ReplicateOutcome> replicates;
  double mean_shd = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  int failures = 0;
};

// Simulate -> fit all eight marginals -> predict V -> select graph -> compare
// with the scenario's truth edges. Per-replicate seeds derive from the
// scenario seed, so the report does not depend on scheduling.
RecoveryReport end_to_end_recovery(const SimScenario& scenario, int replicates,
                                   ggm::SelectionMethod method = ggm::SelectionMethod::stepwise);

std::string recovery_report_json(const RecoveryReport& report);

}  // namespace latgraph::sim
