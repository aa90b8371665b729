#include "pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>

namespace latgraph::pipeline {

using nlohmann::json;

void AnalysisConfig::validate() const {
  if (stratify_by != "bonus" && stratify_by != "none") {
    throw core::ValidationError(0, "stratify_by",
                                "config: stratify_by must be 'bonus' or 'none'");
  }
  if (survival_response != "Geom") {
    throw core::ValidationError(0, "survival_response",
                                "config: Geom is the only survival-type response");
  }
  const auto effective = effective_responses();
  std::set<std::string> seen;
  int survival_count = 0;
  for (const std::string& label : effective) {
    if (!core::response_from_label(label)) {
      throw core::ValidationError(0, "responses",
                                  "config: unknown response '" + label + "'");
    }
    if (!seen.insert(label).second) {
      throw core::ValidationError(0, "responses",
                                  "config: duplicate response '" + label + "'");
    }
    if (label == survival_response) ++survival_count;
  }
  if (survival_count != 1) {
    throw core::ValidationError(
        0, "responses",
        "config: the survival response must appear in responses exactly once");
  }
  if (effective.size() < 2) {
    throw core::ValidationError(0, "responses",
                                "config: need at least two responses");
  }
  if (!(residual_fraction > 0.0 && residual_fraction <= 1.0)) {
    throw core::ValidationError(0, "residual_fraction",
                                "config: residual_fraction must be in (0,1]");
  }
  try {
    ggm::selection_method_from_string(selection_method);
  } catch (const std::invalid_argument& err) {
    throw core::ValidationError(0, "selection_method", err.what());
  }
}

std::vector<std::string> AnalysisConfig::effective_responses() const {
  if (!responses.empty()) return responses;
  return std::vector<std::string>(core::response_labels().begin(),
                                  core::response_labels().end());
}

AnalysisConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    throw core::ValidationError(0, "", std::string("config: invalid JSON: ") + err.what());
  }
  AnalysisConfig c;
  try {
    if (j.contains("stratify_by")) c.stratify_by = j.at("stratify_by").get<std::string>();
    if (j.contains("responses")) c.responses = j.at("responses").get<std::vector<std::string>>();
    if (j.contains("survival_response")) {
      c.survival_response = j.at("survival_response").get<std::string>();
    }
    if (j.contains("selection_method")) {
      c.selection_method = j.at("selection_method").get<std::string>();
    }
    if (j.contains("residual_fraction")) {
      c.residual_fraction = j.at("residual_fraction").get<double>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("data")) c.data_path = j.at("data").get<std::string>();
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
  } catch (const json::exception& err) {
    throw core::ValidationError(0, "", std::string("config: ") + err.what());
  }
  c.validate();
  return c;
}

std::string config_schema_json() {
  json j;
  j["title"] = "latgraph analysis config";
  j["type"] = "object";
  j["properties"] = {
      {"stratify_by",
       {{"type", "string"}, {"enum", {"bonus", "none"}}, {"default", "bonus"}}},
      {"responses",
       {{"type", "array"},
        {"items", {{"type", "string"}}},
        {"description", "ordered subset of Math,Phys,Chem,Bio,His,Geo,Port,Geom; "
                        "must contain Geom exactly once"},
        {"default", {"Math", "Phys", "Chem", "Bio", "His", "Geo", "Port", "Geom"}}}},
      {"survival_response", {{"type", "string"}, {"const", "Geom"}}},
      {"selection_method",
       {{"type", "string"}, {"enum", {"stepwise", "exhaustive"}}, {"default", "stepwise"}}},
      {"residual_fraction",
       {{"type", "number"}, {"exclusiveMinimum", 0}, {"maximum", 1}, {"default", 0.95}}},
      {"seed", {{"type", "integer"}, {"minimum", 0}, {"default", 0}}},
      {"data", {{"type", "string"}, {"description", "cohort CSV path (CLI convenience)"}}},
      {"out", {{"type", "string"}, {"description", "output directory (CLI convenience)"}}}};
  return j.dump(2) + "\n";
}

namespace {

json config_echo(const AnalysisConfig& c) {
  json j;
  j["stratify_by"] = c.stratify_by;
  j["responses"] = c.effective_responses();
  j["survival_response"] = c.survival_response;
  j["selection_method"] = c.selection_method;
  j["residual_fraction"] = c.residual_fraction;
  j["seed"] = c.seed;
  return j;
}

Diagnostics compute_diagnostics(const core::Cohort& cohort,
                                const std::vector<lmm::LmmFit>& gaussian,
                                const std::vector<std::string>& gaussian_labels,
                                const dtcox::DtCoxFit& survival,
                                const dtcox::PersonPeriodTable& table) {
  Diagnostics d;
  const int n = cohort.n();
  for (std::size_t g = 0; g < gaussian.size(); ++g) {
    const lmm::LmmFit& fit = gaussian[g];
    const num::Vector y = lmm::response_vector(cohort, fit.response_index);
    auto [x, labels] = lmm::reduced_design(cohort);
    (void)labels;
    num::Vector resid = y - x * fit.beta;
    for (int i = 0; i < n; ++i) {
      resid[i] -= fit.predicted_U[cohort.records()[i].branch - 1];
    }
    const double mean = resid.mean();
    double ss = 0.0;
    for (int i = 0; i < n; ++i) ss += (resid[i] - mean) * (resid[i] - mean);
    const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 1.0;

    QqSeries series;
    series.response = gaussian_labels[g];
    series.sample.resize(n);
    for (int i = 0; i < n; ++i) {
      series.sample[i] = sd > 0.0 ? (resid[i] - mean) / sd : 0.0;
    }
    std::sort(series.sample.begin(), series.sample.end());
    series.theoretical.resize(n);
    for (int i = 0; i < n; ++i) {
      series.theoretical[i] = num::normal_quantile((i + 0.5) / n);
    }
    d.qq.push_back(std::move(series));
  }

  for (const bool male : {false, true}) {
    for (const bool age : {false, true}) {
      dtcox::CellFilter filter;
      filter.male = male;
      filter.age21plus = age;
      const dtcox::ExpectedEvents ev = dtcox::expected_events(survival, table, filter);
      EventCell cell;
      cell.male = male;
      cell.age21plus = age;
      cell.expected = ev.expected;
      cell.observed = ev.observed;
      cell.empty = ev.empty_cell;
      d.events.push_back(std::move(cell));
    }
  }
  return d;
}

StratumFits fit_stratum(const core::Cohort& cohort, const std::string& name,
                        const AnalysisConfig& config) {
  StratumFits out;
  out.stratum = name;
  out.n = cohort.n();
  for (const core::StudentRecord& r : cohort.records()) {
    out.student_ids.push_back(r.student_id);
  }

  const std::vector<std::string> responses = config.effective_responses();
  out.effects.labels = responses;
  out.effects.stratum = name;
  out.effects.values.resize(cohort.n(), static_cast<int>(responses.size()));

  const dtcox::PersonPeriodTable table = dtcox::expand_risk_sets(cohort);
  out.person_period_csv = dtcox::person_period_csv(table);

  for (std::size_t c = 0; c < responses.size(); ++c) {
    const std::string& label = responses[c];
    if (label == config.survival_response) {
      try {
        out.survival = dtcox::fit_dtcox_table(table);
      } catch (const std::exception& err) {
        throw num::ConvergenceError("stratum '" + name + "', response " + label +
                                    ": " + err.what());
      }
      out.effects.values.col(c) = out.survival.predicted_V;
    } else {
      lmm::GaussianLmmSpec spec;
      spec.response_index = *core::response_from_label(label);
      spec.residual_fraction = config.residual_fraction;
      lmm::LmmFit fit;
      try {
        fit = lmm::fit_lmm(cohort, spec);
      } catch (const std::exception& err) {
        throw num::ConvergenceError("stratum '" + name + "', response " + label +
                                    ": " + err.what());
      }
      out.effects.values.col(c) = fit.predicted_V;
      out.gaussian.push_back(std::move(fit));
      out.gaussian_labels.push_back(label);
    }
  }
  out.diagnostics = compute_diagnostics(cohort, out.gaussian, out.gaussian_labels,
                                        out.survival, table);
  return out;
}

std::vector<double> to_std(const num::Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}


}  // namespace

FitBundle run_fit(const core::Cohort& cohort, const AnalysisConfig& config) {
  config.validate();
  if (cohort.n() == 0) {
    throw core::ValidationError(0, "", "fit: empty cohort");
  }

  FitBundle bundle;
  bundle.config = config;
  bundle.data_digest = checksum_hex(core::write_cohort_csv(cohort));

  if (config.stratify_by == "none") {
    bundle.strata.push_back(fit_stratum(cohort, "all", config));
  } else {
    auto [bonus, no_bonus] = core::stratify(cohort);
    std::vector<std::pair<const core::Cohort*, const char*>> jobs;
    if (bonus.n() > 0) jobs.push_back({&bonus, "bonus"});
    if (no_bonus.n() > 0) jobs.push_back({&no_bonus, "no_bonus"});
    if (jobs.size() == 2) {
      // Strata are independent; fit them concurrently and keep the order.
      std::future<StratumFits> second =
          std::async(std::launch::async, [&] {
            return fit_stratum(*jobs[1].first, jobs[1].second, config);
          });
      bundle.strata.push_back(fit_stratum(*jobs[0].first, jobs[0].second, config));
      bundle.strata.push_back(second.get());
    } else {
      for (const auto& [stratum_cohort, name] : jobs) {
        bundle.strata.push_back(fit_stratum(*stratum_cohort, name, config));
      }
    }
  }

  bundle.run_id = checksum_hex(config_echo(config).dump() + "|" +
                               bundle.data_digest + "|" + kArtifactVersion);
  return bundle;
}

namespace {

json marginal_gaussian_json(const lmm::LmmFit& fit, const std::string& label) {
  json j;
  j["response"] = label;
  j["model"] = "gaussian";
  j["converged"] = fit.converged;
  j["beta"] = to_std(fit.beta);
  j["beta_labels"] = fit.beta_labels;
  j["sigma2_u"] = fit.sigma2_U;
  j["sigma2_combined"] = fit.sigma2_combined;
  j["sigma2_v"] = fit.sigma2_V;
  j["sigma2_eps"] = fit.sigma2_eps;
  j["residual_fraction"] = fit.residual_fraction;
  j["sigma2_u_at_zero"] = fit.sigma2_U_at_zero;
  j["sigma2_combined_at_zero"] = fit.sigma2_combined_at_zero;
  j["log_likelihood"] = fit.log_likelihood;
  j["predicted_u"] = to_std(fit.predicted_U);
  j["predicted_v"] = to_std(fit.predicted_V);
  return j;
}

json marginal_survival_json(const dtcox::DtCoxFit& fit, const std::string& label) {
  json j;
  j["response"] = label;
  j["model"] = "discrete_hazard";
  j["converged"] = fit.converged;
  j["beta"] = to_std(fit.beta);
  j["beta_labels"] = fit.beta_labels;
  j["active_periods"] = fit.active_periods;
  std::vector<double> active_baseline;
  for (int t : fit.active_periods) active_baseline.push_back(fit.log_baseline[t - 1]);
  j["log_baseline"] = active_baseline;
  j["period_count"] = static_cast<int>(fit.log_baseline.size());
  j["sigma2_u"] = fit.sigma2_U;
  j["sigma2_v"] = fit.sigma2_V;
  j["sigma2_u_at_zero"] = fit.sigma2_U_at_zero;
  j["sigma2_v_at_zero"] = fit.sigma2_V_at_zero;
  j["log_likelihood"] = fit.log_likelihood;
  j["separation_flag"] = fit.separation_flag;
  if (!fit.message.empty()) j["message"] = fit.message;
  j["predicted_u"] = to_std(fit.predicted_U);
  j["predicted_v"] = to_std(fit.predicted_V);
  return j;
}

json diagnostics_json(const Diagnostics& d) {
  json out;
  json qq = json::array();
  for (const QqSeries& s : d.qq) {
    qq.push_back({{"response", s.response},
                  {"theoretical", s.theoretical},
                  {"sample", s.sample}});
  }
  out["qq"] = qq;
  json events = json::array();
  for (const EventCell& c : d.events) {
    events.push_back({{"male", c.male},
                      {"age21plus", c.age21plus},
                      {"expected", c.expected},
                      {"observed", c.observed},
                      {"empty", c.empty}});
  }
  out["events"] = events;
  return out;
}

json effects_json(const ggm::PredictedEffectsMatrix& effects) {
  json out;
  out["labels"] = effects.labels;
  json rows = json::array();
  for (int i = 0; i < effects.n(); ++i) {
    json row = json::array();
    for (int c = 0; c < effects.p(); ++c) row.push_back(effects.values(i, c));
    rows.push_back(row);
  }
  out["values"] = rows;
  return out;
}

}  // namespace

std::string fit_to_json(const FitBundle& bundle) {
  json j;
  j["artifact"] = kArtifactName;
  j["version"] = kArtifactVersion;
  j["run_id"] = bundle.run_id;
  j["seed"] = bundle.config.seed;
  j["config"] = config_echo(bundle.config);
  j["data_digest"] = bundle.data_digest;
  json strata = json::array();
  for (const StratumFits& s : bundle.strata) {
    json js;
    js["stratum"] = s.stratum;
    js["n"] = s.n;
    js["student_ids"] = s.student_ids;
    json marginals = json::array();
    const std::vector<std::string> responses = bundle.config.effective_responses();
    std::size_t g = 0;
    for (const std::string& label : responses) {
      if (label == bundle.config.survival_response) {
        marginals.push_back(marginal_survival_json(s.survival, label));
      } else {
        marginals.push_back(marginal_gaussian_json(s.gaussian[g], label));
        ++g;
      }
    }
    js["marginals"] = marginals;
    js["predicted_effects"] = effects_json(s.effects);
    js["diagnostics"] = diagnostics_json(s.diagnostics);
    strata.push_back(js);
  }
  j["strata"] = strata;
  return j.dump(2) + "\n";
}

FitBundle fit_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    throw core::ValidationError(0, "", std::string("fit JSON: ") + err.what());
  }
  FitBundle bundle;
  try {
    if (j.at("artifact").get<std::string>() != kArtifactName) {
      throw core::ValidationError(0, "artifact", "fit JSON: wrong artifact");
    }
    bundle.run_id = j.at("run_id").get<std::string>();
    bundle.data_digest = j.at("data_digest").get<std::string>();
    const json& cfg = j.at("config");
    bundle.config.stratify_by = cfg.at("stratify_by").get<std::string>();
    bundle.config.responses = cfg.at("responses").get<std::vector<std::string>>();
    bundle.config.survival_response = cfg.at("survival_response").get<std::string>();
    bundle.config.selection_method = cfg.at("selection_method").get<std::string>();
    bundle.config.residual_fraction = cfg.at("residual_fraction").get<double>();
    bundle.config.seed = cfg.at("seed").get<std::uint64_t>();
    for (const json& js : j.at("strata")) {
      StratumFits s;
      s.stratum = js.at("stratum").get<std::string>();
      s.n = js.at("n").get<int>();
      s.student_ids = js.at("student_ids").get<std::vector<std::string>>();
      const json& eff = js.at("predicted_effects");
      s.effects.labels = eff.at("labels").get<std::vector<std::string>>();
      s.effects.stratum = s.stratum;
      const auto rows = eff.at("values").get<std::vector<std::vector<double>>>();
      if (static_cast<int>(rows.size()) != s.n) {
        throw core::ValidationError(0, "predicted_effects",
                                    "fit JSON: effects row count mismatch");
      }
      s.effects.values.resize(s.n, static_cast<int>(s.effects.labels.size()));
      for (int i = 0; i < s.n; ++i) {
        if (rows[i].size() != s.effects.labels.size()) {
          throw core::ValidationError(0, "predicted_effects",
                                      "fit JSON: effects column count mismatch");
        }
        for (std::size_t c = 0; c < rows[i].size(); ++c) {
          s.effects.values(i, static_cast<int>(c)) = rows[i][c];
        }
      }
      bundle.strata.push_back(std::move(s));
    }
  } catch (const json::exception& err) {
    throw core::ValidationError(0, "", std::string("fit JSON: ") + err.what());
  }
  return bundle;
}

GraphBundle select_graphs(const FitBundle& bundle, ggm::SelectionMethod method,
                          const std::string& fit_checksum) {
  GraphBundle out;
  out.fit_checksum = fit_checksum;
  out.method = ggm::to_string(method);
  for (const StratumFits& s : bundle.strata) {
    out.graphs.push_back(ggm::select_graph(s.effects, method));
  }
  return out;
}

std::string graphs_to_json(const GraphBundle& bundle) {
  json j;
  j["artifact"] = kArtifactName;
  j["version"] = kArtifactVersion;
  j["method"] = bundle.method;
  j["fit_checksum"] = bundle.fit_checksum;
  json graphs = json::array();
  for (const ggm::GgmFit& fit : bundle.graphs) {
    json g;
    g["stratum"] = fit.stratum;
    g["n"] = fit.n;
    g["vertices"] = fit.graph.labels();
    json edges = json::array();
    for (const auto& [a, b, rho] : fit.partial_correlations) {
      edges.push_back({{"a", fit.graph.label(a)},
                       {"b", fit.graph.label(b)},
                       {"partial_correlation", rho}});
    }
    g["edges"] = edges;
    g["bic"] = fit.bic;
    g["log_likelihood"] = fit.log_likelihood;
    graphs.push_back(g);
  }
  j["graphs"] = graphs;
  return j.dump(2) + "\n";
}

GraphBundle graphs_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    throw core::ValidationError(0, "", std::string("graph JSON: ") + err.what());
  }
  GraphBundle out;
  try {
    out.fit_checksum = j.at("fit_checksum").get<std::string>();
    out.method = j.at("method").get<std::string>();
    for (const json& g : j.at("graphs")) {
      ggm::GgmFit fit;
      fit.stratum = g.at("stratum").get<std::string>();
      fit.n = g.at("n").get<int>();
      fit.graph = graphs::UndirectedGraph(g.at("vertices").get<std::vector<std::string>>());
      for (const json& e : g.at("edges")) {
        const int a = fit.graph.index_of(e.at("a").get<std::string>());
        const int b = fit.graph.index_of(e.at("b").get<std::string>());
        fit.graph.add_edge(a, b);
        fit.partial_correlations.emplace_back(
            std::min(a, b), std::max(a, b),
            e.at("partial_correlation").get<double>());
      }
      std::sort(fit.partial_correlations.begin(), fit.partial_correlations.end());
      fit.bic = g.at("bic").get<double>();
      fit.log_likelihood = g.at("log_likelihood").get<double>();
      out.graphs.push_back(std::move(fit));
    }
  } catch (const json::exception& err) {
    throw core::ValidationError(0, "", std::string("graph JSON: ") + err.what());
  }
  return out;
}

namespace {

std::string format_rho(double value) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << value;
  return out.str();
}

}  // namespace

std::string graph_dot(const ggm::GgmFit& fit) {
  std::ostringstream out;
  out << "graph \"" << (fit.stratum.empty() ? "components" : fit.stratum) << "\" {\n";
  out << "  node [shape=circle];\n";
  for (const std::string& label : fit.graph.labels()) {
    out << "  \"" << label << "\";\n";
  }
  for (const auto& [a, b, rho] : fit.partial_correlations) {
    out << "  \"" << fit.graph.label(a) << "\" -- \"" << fit.graph.label(b)
        << "\" [label=\"" << format_rho(rho) << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

std::string extended_graph_dot(const ggm::GgmFit& fit) {
  const graphs::ExtendedGraph ext = graphs::build_extended_graph(fit.graph);
  std::ostringstream out;
  out << "digraph \"" << (fit.stratum.empty() ? "components" : fit.stratum)
      << "_extended\" {\n";
  out << "  node [shape=circle];\n";
  for (int v = 0; v < ext.latent_count; ++v) {
    out << "  \"" << ext.vertex_labels[v] << "\";\n";
  }
  out << "  node [shape=box];\n";
  for (std::size_t v = ext.latent_count; v < ext.vertex_labels.size(); ++v) {
    out << "  \"" << ext.vertex_labels[v] << "\";\n";
  }
  for (const auto& [a, b, rho] : fit.partial_correlations) {
    out << "  \"" << ext.vertex_labels[a] << "\" -> \"" << ext.vertex_labels[b]
        << "\" [dir=none, label=\"" << format_rho(rho) << "\"];\n";
  }
  for (const auto& [parent, child] : ext.arrows) {
    out << "  \"" << ext.vertex_labels[parent] << "\" -> \""
        << ext.vertex_labels[child] << "\";\n";
  }
  out << "}\n";
  return out.str();
}

std::string build_report(const std::string& fit_json_text,
                         const std::string& graphs_json_text) {
  json fit_json, graphs_json;
  try {
    fit_json = json::parse(fit_json_text);
    graphs_json = json::parse(graphs_json_text);
  } catch (const json::parse_error& err) {
    throw core::ValidationError(0, "", std::string("report inputs: ") + err.what());
  }
  const std::string expected = canonical_checksum(fit_json_text);
  const std::string embedded = graphs_json.value("fit_checksum", "");
  if (expected != embedded) {
    throw core::ValidationError(
        0, "fit_checksum",
        "report: graph JSON was produced from a different fit (checksum " +
            embedded + ", expected " + expected + ")");
  }

  json report;
  try {
    report["artifact"] = kArtifactName;
    report["version"] = kArtifactVersion;
    report["run_id"] = fit_json.at("run_id");
    report["seed"] = fit_json.at("seed");
    report["config"] = fit_json.at("config");
    report["data_digest"] = fit_json.at("data_digest");
    report["selection_method"] = graphs_json.at("method");

    std::map<std::string, json> graph_by_stratum;
    for (const json& g : graphs_json.at("graphs")) {
      graph_by_stratum[g.at("stratum").get<std::string>()] = g;
    }

    std::map<std::string, std::map<std::string, double>> variances;
    std::set<std::string> degenerate;  // components with a collapsed V variance
    json strata = json::array();
    for (const json& s : fit_json.at("strata")) {
      const std::string stratum = s.at("stratum").get<std::string>();
      json rs;
      rs["stratum"] = stratum;
      rs["n"] = s.at("n");
      json marginals = json::array();
      for (const json& m : s.at("marginals")) {
        json condensed = m;
        condensed.erase("predicted_u");
        condensed.erase("predicted_v");
        marginals.push_back(condensed);
        // A collapsed individual variance makes the prediction scale an
        // optimizer artifact; frailty variances below 1e-6 count as collapsed.
        bool collapsed = m.value("sigma2_combined_at_zero", false) ||
                         m.value("sigma2_v_at_zero", false);
        if (m.at("model").get<std::string>() == "discrete_hazard" &&
            m.value("sigma2_v", 0.0) < 1e-6) {
          collapsed = true;
        }
        if (collapsed) degenerate.insert(m.at("response").get<std::string>());
      }
      rs["marginals"] = marginals;
      const auto it = graph_by_stratum.find(stratum);
      if (it == graph_by_stratum.end()) {
        throw core::ValidationError(0, "graphs",
                                    "report: no graph for stratum '" + stratum + "'");
      }
      rs["graph"] = it->second;
      rs["diagnostics"] = s.at("diagnostics");

      // Per-component variances of the predicted effects, for the
      // cross-stratum comparison.
      const json& eff = s.at("predicted_effects");
      const auto labels = eff.at("labels").get<std::vector<std::string>>();
      const auto rows = eff.at("values").get<std::vector<std::vector<double>>>();
      json vars;
      for (std::size_t c = 0; c < labels.size(); ++c) {
        double mean = 0.0;
        for (const auto& row : rows) mean += row[c];
        mean /= std::max<std::size_t>(rows.size(), 1);
        double ss = 0.0;
        for (const auto& row : rows) ss += (row[c] - mean) * (row[c] - mean);
        const double var = rows.size() > 1 ? ss / (rows.size() - 1) : 0.0;
        vars[labels[c]] = var;
        variances[stratum][labels[c]] = var;
      }
      rs["component_variances"] = vars;
      strata.push_back(rs);
    }
    report["strata"] = strata;

    json cross;
    if (variances.count("bonus") && variances.count("no_bonus")) {
      // Ratios are only meaningful for components whose individual variance
      // did not collapse to the boundary in either stratum.
      json ratios;
      json excluded = json::array();
      for (const auto& [label, var_bonus] : variances.at("bonus")) {
        const auto& others = variances.at("no_bonus");
        const auto it = others.find(label);
        if (it == others.end()) continue;
        if (degenerate.count(label) || !(it->second > 0.0)) {
          excluded.push_back(label);
          continue;
        }
        ratios[label] = var_bonus / it->second;
      }
      cross["variance_ratio"] = {{"numerator", "bonus"},
                                 {"denominator", "no_bonus"},
                                 {"ratios", ratios},
                                 {"excluded", excluded}};
    } else {
      cross["variance_ratio"] = nullptr;
    }
    report["cross_stratum"] = cross;
  } catch (const json::exception& err) {
    throw core::ValidationError(0, "", std::string("report inputs: ") + err.what());
  }
  return report.dump(2) + "\n";
}

graphs::UndirectedGraph graph_from_source(const std::string& json_or_fixture,
                                          const std::string& stratum) {
  if (auto fixture = graphs::fixture_by_name(json_or_fixture)) {
    return *fixture;
  }
  const GraphBundle bundle = graphs_from_json(json_or_fixture);
  if (bundle.graphs.empty()) {
    throw core::ValidationError(0, "graphs", "query: no graphs in input");
  }
  if (!stratum.empty()) {
    for (const ggm::GgmFit& fit : bundle.graphs) {
      if (fit.stratum == stratum) return fit.graph;
    }
    throw core::ValidationError(0, "stratum",
                                "query: no graph for stratum '" + stratum + "'");
  }
  if (bundle.graphs.size() > 1) {
    throw core::ValidationError(
        0, "stratum", "query: multiple strata in input; pick one with --stratum");
  }
  return bundle.graphs.front().graph;
}

namespace {

std::vector<int> resolve_plain(const graphs::UndirectedGraph& graph,
                               const std::vector<std::string>& labels) {
  std::vector<int> out;
  for (const std::string& label : labels) out.push_back(graph.index_of(label));
  return out;
}

std::vector<int> resolve_observables(const graphs::ExtendedGraph& ext,
                                     const std::vector<std::string>& labels) {
  std::vector<int> out;
  for (const std::string& label : labels) {
    int found = -1;
    for (const std::string& candidate : {label, "Y_" + label, "T_" + label}) {
      for (std::size_t v = 0; v < ext.vertex_labels.size(); ++v) {
        if (ext.vertex_labels[v] == candidate) {
          found = static_cast<int>(v);
          break;
        }
      }
      if (found >= 0) break;
    }
    if (found < 0) {
      throw graphs::GraphError("unknown observable label '" + label + "'");
    }
    out.push_back(found);
  }
  return out;
}

std::vector<int> resolve_latent(const graphs::ExtendedGraph& ext,
                                const std::vector<std::string>& labels) {
  std::vector<int> out;
  for (const std::string& label : labels) {
    bool found = false;
    for (const std::string& candidate : {label, "V_" + label}) {
      for (int v = 0; v < static_cast<int>(ext.vertex_labels.size()); ++v) {
        if (ext.vertex_labels[v] == candidate) {
          out.push_back(v);
          found = true;
          break;
        }
      }
      if (found) break;
    }
    if (!found) throw graphs::GraphError("unknown latent label '" + label + "'");
  }
  return out;
}

}  // namespace

QueryResult run_query(const graphs::UndirectedGraph& graph, const QueryRequest& request) {
  QueryResult result;
  if (!request.extended) {
    std::vector<std::string> b_labels = request.b;
    if (b_labels.size() == 1 && b_labels[0] == "rest") {
      std::set<std::string> excluded(request.a.begin(), request.a.end());
      excluded.insert(request.given.begin(), request.given.end());
      b_labels.clear();
      for (const std::string& label : graph.labels()) {
        if (!excluded.count(label)) b_labels.push_back(label);
      }
    }
    const auto a = resolve_plain(graph, request.a);
    const auto b = resolve_plain(graph, b_labels);
    const auto s = resolve_plain(graph, request.given);
    const auto path = graphs::connecting_path(graph, a, b, s);
    result.separated = !path.has_value();
    if (path) {
      for (int v : *path) result.witness.push_back(graph.label(v));
    }
    return result;
  }

  const graphs::ExtendedGraph ext = graphs::build_extended_graph(graph);
  std::vector<std::string> b_labels = request.b;
  if (b_labels.size() == 1 && b_labels[0] == "rest") {
    // Complement among observables, excluding A and the observables of the
    // conditioning components.
    std::set<int> excluded;
    for (int v : resolve_observables(ext, request.a)) excluded.insert(v);
    for (int v : resolve_latent(ext, request.given)) {
      for (const auto& [parent, child] : ext.arrows) {
        if (parent == v) excluded.insert(child);
      }
    }
    b_labels.clear();
    for (std::size_t v = ext.latent_count; v < ext.vertex_labels.size(); ++v) {
      if (!excluded.count(static_cast<int>(v))) {
        b_labels.push_back(ext.vertex_labels[v]);
      }
    }
  }
  const auto a = resolve_observables(ext, request.a);
  const auto b = resolve_observables(ext, b_labels);
  const auto s = resolve_latent(ext, request.given);
  result.separated = graphs::extended_separates(ext, a, b, s);
  if (!result.separated) {
    const auto path = graphs::connecting_path(ext.moral_graph, a, b, s);
    if (path) {
      for (int v : *path) result.witness.push_back(ext.vertex_labels[v]);
    }
  }
  return result;
}

std::string checksum_hex(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << hash;
  return out.str();
}

std::string canonical_checksum(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw core::ValidationError(0, "", std::string("checksum input: ") + err.what());
  }
  return checksum_hex(j.dump());
}

void write_text_atomic(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write to " + tmp.string());
    }
    out << text;
    out.flush();
    if (!out) {
      throw std::runtime_error("short write to " + tmp.string());
    }
  }
  fs::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw core::ValidationError(0, "", "cannot open file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace latgraph::pipeline
