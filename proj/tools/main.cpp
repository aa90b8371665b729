// Batch front end over the latgraph C API: simulate cohorts, run the
// stratified marginal fits, select graphical models, answer separation
// queries, and assemble reports.

#include <latgraph.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

namespace {

// Wraps C-API strings so every exit path frees them.
struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { lg_free_string(ptr); }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

int fail(lg_status status, const OwnedString& error) {
  std::cerr << "error: " << (error.ptr ? error.ptr : "unknown failure") << "\n";
  return status == LG_OK ? 1 : static_cast<int>(status);
}

std::string read_file(const std::string& path, bool& ok) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ok = false;
    return {};
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  ok = true;
  return buf.str();
}

int write_output(const std::string& path, const std::string& text) {
  OwnedString error;
  const lg_status status = lg_write_text_atomic(path.c_str(), text.c_str(), &error.ptr);
  if (status != LG_OK) return fail(status, error);
  return 0;
}

struct CohortHandle {
  lg_cohort* ptr = nullptr;
  ~CohortHandle() { lg_cohort_free(ptr); }
};
struct ScenarioHandle {
  lg_scenario* ptr = nullptr;
  ~ScenarioHandle() { lg_scenario_free(ptr); }
};
struct FitHandle {
  lg_fit* ptr = nullptr;
  ~FitHandle() { lg_fit_free(ptr); }
};
struct GraphsHandle {
  lg_graphs* ptr = nullptr;
  ~GraphsHandle() { lg_graphs_free(ptr); }
};

int cmd_simulate(const std::string& config, std::int64_t seed, const std::string& out_dir) {
  ScenarioHandle scenario;
  OwnedString error;
  lg_status status = lg_scenario_load(config.c_str(), &scenario.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  CohortHandle cohort;
  OwnedString truth;
  status = lg_simulate(scenario.ptr, seed, &cohort.ptr, &truth.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  OwnedString csv;
  status = lg_cohort_to_csv(cohort.ptr, &csv.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  if (int rc = write_output(out_dir + "/cohort.csv", csv.str())) return rc;
  if (int rc = write_output(out_dir + "/truth.json", truth.str())) return rc;
  std::cout << "wrote " << out_dir << "/cohort.csv (" << lg_cohort_size(cohort.ptr)
            << " records) and " << out_dir << "/truth.json\n";
  return 0;
}

int cmd_fit(const std::string& data_flag, const std::string& config_path,
            const std::string& stratify, std::int64_t seed, std::string out_dir,
            bool out_given) {
  // Flags override the config file's fields where given.
  nlohmann::json config_doc = nlohmann::json::object();
  if (!config_path.empty()) {
    bool ok = true;
    const std::string text = read_file(config_path, ok);
    if (!ok) {
      std::cerr << "error: cannot open config " << config_path << "\n";
      return 2;
    }
    try {
      config_doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& err) {
      std::cerr << "error: config is not valid JSON: " << err.what() << "\n";
      return 2;
    }
    if (!config_doc.is_object()) {
      std::cerr << "error: config must be a JSON object\n";
      return 2;
    }
  }
  std::string data = data_flag;
  try {
    if (data.empty() && config_doc.contains("data")) {
      data = config_doc["data"].get<std::string>();
    }
    if (!out_given && config_doc.contains("out")) {
      out_dir = config_doc["out"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: config: " << err.what() << "\n";
    return 2;
  }
  if (data.empty()) {
    std::cerr << "error: no cohort CSV (pass --data or set \"data\" in the config)\n";
    return 2;
  }
  if (!stratify.empty()) config_doc["stratify_by"] = stratify;
  if (seed >= 0) config_doc["seed"] = seed;
  const std::string config_json = config_doc.dump();

  CohortHandle cohort;
  OwnedString error;
  lg_status status = lg_cohort_load_csv(data.c_str(), &cohort.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  FitHandle fit;
  status = lg_fit_run(cohort.ptr, config_json.c_str(), &fit.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  OwnedString fit_json;
  status = lg_fit_to_json(fit.ptr, &fit_json.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);
  if (int rc = write_output(out_dir + "/fit.json", fit_json.str())) return rc;

  for (int s = 0; s < lg_fit_stratum_count(fit.ptr); ++s) {
    OwnedString name, csv;
    if (lg_fit_stratum_name(fit.ptr, s, &name.ptr, &error.ptr) != LG_OK) continue;
    if (lg_fit_person_period_csv(fit.ptr, s, &csv.ptr, &error.ptr) != LG_OK) continue;
    if (int rc = write_output(out_dir + "/person_period_" + name.str() + ".csv",
                              csv.str())) {
      return rc;
    }
  }
  std::cout << "wrote " << out_dir << "/fit.json ("
            << lg_fit_stratum_count(fit.ptr) << " strata)\n";
  return 0;
}

int cmd_graph(const std::string& data, const std::string& method, bool extended,
              const std::string& out_dir) {
  bool ok = true;
  const std::string fit_json = read_file(data, ok);
  if (!ok) {
    std::cerr << "error: cannot open fit JSON " << data << "\n";
    return 2;
  }
  OwnedString error;
  FitHandle fit;
  lg_status status = lg_fit_parse(fit_json.c_str(), &fit.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  OwnedString checksum;
  status = lg_json_checksum(fit_json.c_str(), &checksum.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  GraphsHandle graphs;
  status = lg_graphs_select(fit.ptr, method.empty() ? nullptr : method.c_str(),
                            checksum.ptr, &graphs.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);

  OwnedString graphs_json;
  status = lg_graphs_to_json(graphs.ptr, &graphs_json.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);
  if (int rc = write_output(out_dir + "/graph.json", graphs_json.str())) return rc;

  for (int g = 0; g < lg_graphs_count(graphs.ptr); ++g) {
    OwnedString name, dot;
    if (lg_graphs_stratum_name(graphs.ptr, g, &name.ptr, &error.ptr) != LG_OK) continue;
    status = lg_graphs_to_dot(graphs.ptr, g, 0, &dot.ptr, &error.ptr);
    if (status != LG_OK) return fail(status, error);
    if (int rc = write_output(out_dir + "/graph_" + name.str() + ".dot", dot.str())) {
      return rc;
    }
    if (extended) {
      OwnedString ext;
      status = lg_graphs_to_dot(graphs.ptr, g, 1, &ext.ptr, &error.ptr);
      if (status != LG_OK) return fail(status, error);
      if (int rc = write_output(out_dir + "/extended_" + name.str() + ".dot",
                                ext.str())) {
        return rc;
      }
    }
  }
  std::cout << "wrote " << out_dir << "/graph.json ("
            << lg_graphs_count(graphs.ptr) << " strata)\n";
  return 0;
}

int cmd_query(const std::string& data, const std::string& stratum,
              const std::string& a, const std::string& b, const std::string& given,
              bool extended) {
  // --data accepts a fixture name or a graph JSON path.
  std::string source = data;
  {
    bool ok = true;
    const std::string text = read_file(data, ok);
    if (ok) source = text;
  }
  OwnedString error, witness;
  int separated = 0;
  const lg_status status =
      lg_query(source.c_str(), stratum.empty() ? nullptr : stratum.c_str(),
               a.c_str(), b.c_str(), given.empty() ? nullptr : given.c_str(),
               extended ? 1 : 0, &separated, &witness.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);
  std::cout << "separated: " << (separated ? "true" : "false") << "\n";
  if (!separated && witness.ptr && *witness.ptr) {
    std::cout << "witness: " << witness.str() << "\n";
  }
  return 0;
}

int cmd_report(const std::string& data, const std::string& graph_path,
               const std::string& out_dir) {
  bool ok_fit = true, ok_graph = true;
  const std::string fit_json = read_file(data, ok_fit);
  const std::string graphs_json = read_file(graph_path, ok_graph);
  if (!ok_fit || !ok_graph) {
    std::cerr << "error: cannot open " << (ok_fit ? graph_path : data) << "\n";
    return 2;
  }
  OwnedString error, report;
  const lg_status status =
      lg_report_build(fit_json.c_str(), graphs_json.c_str(), &report.ptr, &error.ptr);
  if (status != LG_OK) return fail(status, error);
  if (int rc = write_output(out_dir + "/report.json", report.str())) return rc;
  std::cout << "wrote " << out_dir << "/report.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latgraph: mixed-model and graphical-model analysis of admission "
               "scores and time-to-pass outcomes"};
  app.require_subcommand(0, 1);

  bool print_config_schema = false;
  bool print_scenario_schema = false;
  app.add_flag("--print-config-schema", print_config_schema,
               "print the analysis config JSON schema and exit");
  app.add_flag("--print-scenario-schema", print_scenario_schema,
               "print the simulation scenario JSON schema and exit");

  std::string data, config, out = ".", method, stratify, stratum, graph_path;
  std::string a_labels, b_labels, given_labels;
  std::int64_t seed = -1;
  bool extended = false;

  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic cohort");
  simulate->add_option("--config", config,
                       "scenario JSON path or preset (fig1a_no_bonus, "
                       "fig1b_bonus, paper_like)")
      ->required();
  simulate->add_option("--seed", seed, "override the scenario seed");
  simulate->add_option("--out", out, "output directory");

  CLI::App* fit = app.add_subcommand("fit", "fit all marginal models per stratum");
  fit->add_option("--data", data, "cohort CSV (or \"data\" in the config)");
  fit->add_option("--config", config, "analysis config JSON");
  fit->add_option("--stratify", stratify, "bonus (default) or none");
  fit->add_option("--seed", seed, "seed recorded in the run id");
  fit->add_option("--out", out, "output directory");

  CLI::App* graph = app.add_subcommand("graph", "select graphical models from a fit");
  graph->add_option("--data", data, "fit JSON")->required();
  graph->add_option("--method", method, "stepwise (default) or exhaustive");
  graph->add_flag("--extended", extended, "also write the extended-graph DOT");
  graph->add_option("--out", out, "output directory");

  CLI::App* query = app.add_subcommand("query", "separation query on a graph");
  query->add_option("--data", data, "graph JSON path or fixture name")->required();
  query->add_option("--stratum", stratum, "stratum to query in a multi-strata file");
  query->add_option("--a", a_labels, "comma-separated labels")->required();
  query->add_option("--b", b_labels, "comma-separated labels, or 'rest'")->required();
  query->add_option("--given", given_labels, "comma-separated conditioning labels");
  query->add_flag("--extended", extended,
                  "query observable responses given latent components");

  CLI::App* report = app.add_subcommand("report", "assemble the analysis report");
  report->add_option("--data", data, "fit JSON")->required();
  report->add_option("--graph", graph_path, "graph JSON")->required();
  report->add_option("--out", out, "output directory");

  CLI::App* diagnose = app.add_subcommand("diagnose", "alias of report");
  diagnose->add_option("--data", data, "fit JSON")->required();
  diagnose->add_option("--graph", graph_path, "graph JSON")->required();
  diagnose->add_option("--out", out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (print_config_schema) {
    std::cout << lg_analysis_config_schema();
    return 0;
  }
  if (print_scenario_schema) {
    std::cout << lg_scenario_schema();
    return 0;
  }

  if (simulate->parsed()) return cmd_simulate(config, seed, out);
  if (fit->parsed()) {
    return cmd_fit(data, config, stratify, seed, out, fit->count("--out") > 0);
  }
  if (graph->parsed()) return cmd_graph(data, method, extended, out);
  if (query->parsed()) return cmd_query(data, stratum, a_labels, b_labels, given_labels, extended);
  if (report->parsed()) return cmd_report(data, graph_path, out);
  if (diagnose->parsed()) return cmd_report(data, graph_path, out);

  std::cout << app.help();
  return 0;
}
