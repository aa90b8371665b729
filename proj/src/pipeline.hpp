#pragma once

#include "core.hpp"
#include "dtcox.hpp"
#include "ggm.hpp"
#include "graphs.hpp"
#include "lmm.hpp"
#include "sim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace latgraph::pipeline {

inline constexpr const char* kArtifactName = "latgraph";
inline constexpr const char* kArtifactVersion = "0.1.0";

struct AnalysisConfig {
  std::string stratify_by = "bonus";  // "bonus" or "none"
  std::vector<std::string> responses;  // default: the canonical eight
  std::string survival_response = "Geom";
  std::string selection_method = "stepwise";
  double residual_fraction = 0.95;
  std::uint64_t seed = 0;
  // CLI conveniences, not part of the config echo.
  std::string data_path;
  std::string out_dir;

  void validate() const;
  std::vector<std::string> effective_responses() const;
};

AnalysisConfig config_from_json(const std::string& text);
std::string config_schema_json();

struct QqSeries {
  std::string response;
  std::vector<double> theoretical;
  std::vector<double> sample;  // sorted standardized residuals
};

struct EventCell {
  bool male = false;
  bool age21plus = false;
  std::vector<double> expected;
  std::vector<int> observed;
  std::vector<bool> empty;
};

struct Diagnostics {
  std::vector<QqSeries> qq;
  std::vector<EventCell> events;
};

struct StratumFits {
  std::string stratum;
  int n = 0;
  std::vector<std::string> student_ids;
  std::vector<lmm::LmmFit> gaussian;          // per configured Gaussian response
  std::vector<std::string> gaussian_labels;
  dtcox::DtCoxFit survival;
  ggm::PredictedEffectsMatrix effects;
  Diagnostics diagnostics;
  std::string person_period_csv;
};

struct FitBundle {
  AnalysisConfig config;
  std::string data_digest;
  std::string run_id;
  std::vector<StratumFits> strata;
};

// Runs the per-stratum marginal fits and assembles the predicted-effects
// matrices. Throws when a stratum cannot produce a usable matrix.
FitBundle run_fit(const core::Cohort& cohort, const AnalysisConfig& config);

std::string fit_to_json(const FitBundle& bundle);
// Reconstructs what graph selection needs (config, digests, effects);
// marginal fit details are not round-tripped.
FitBundle fit_from_json(const std::string& text);

struct GraphBundle {
  std::string fit_checksum;
  std::string method;
  std::vector<ggm::GgmFit> graphs;  // one per stratum
};

GraphBundle select_graphs(const FitBundle& bundle, ggm::SelectionMethod method,
                          const std::string& fit_checksum);
std::string graphs_to_json(const GraphBundle& bundle);
GraphBundle graphs_from_json(const std::string& text);

// Figure-1 style undirected DOT with 3-decimal edge labels.
std::string graph_dot(const ggm::GgmFit& fit);
// Figures 3-4 style: latent circles, observable boxes, arrows.
std::string extended_graph_dot(const ggm::GgmFit& fit);

// Assembles the analysis report from the two serialized inputs; verifies the
// embedded fit checksum. Pure function of its inputs.
std::string build_report(const std::string& fit_json_text,
                         const std::string& graphs_json_text);

struct QueryRequest {
  std::vector<std::string> a;
  std::vector<std::string> b;  // the single label "rest" expands to the complement
  std::vector<std::string> given;
  bool extended = false;
};

struct QueryResult {
  bool separated = false;
  std::vector<std::string> witness;  // labels along one violating path
};

// Source is a built-in fixture name or serialized graph JSON.
graphs::UndirectedGraph graph_from_source(const std::string& json_or_fixture,
                                          const std::string& stratum);
QueryResult run_query(const graphs::UndirectedGraph& graph, const QueryRequest& request);

// FNV-1a 64-bit, hex encoded.
std::string checksum_hex(std::string_view bytes);
// Checksum of the canonical serialization (parse + sorted-key dump).
std::string canonical_checksum(const std::string& json_text);

void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace latgraph::pipeline
