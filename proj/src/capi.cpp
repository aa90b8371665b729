#include "latgraph.h"

#include "core.hpp"
#include "dtcox.hpp"
#include "ggm.hpp"
#include "pipeline.hpp"
#include "sim.hpp"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

using namespace latgraph;

struct lg_cohort {
  core::Cohort cohort;
};

struct lg_scenario {
  sim::SimScenario scenario;
};

struct lg_fit {
  pipeline::FitBundle bundle;
};

struct lg_graphs {
  pipeline::GraphBundle bundle;
};

namespace {

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_error(char** error, const std::string& message) {
  if (error) *error = dup_string(message);
}

// Maps the C++ error taxonomy onto status codes.
template <typename Fn>
lg_status guarded(char** error, Fn&& fn) {
  try {
    fn();
    return LG_OK;
  } catch (const core::ValidationError& err) {
    set_error(error, err.what());
    return LG_ERROR_VALIDATION;
  } catch (const graphs::GraphError& err) {
    set_error(error, err.what());
    return LG_ERROR_VALIDATION;
  } catch (const num::DefinitenessError& err) {
    set_error(error, err.what());
    return LG_ERROR_VALIDATION;
  } catch (const num::ConvergenceError& err) {
    set_error(error, err.what());
    return LG_ERROR_CONVERGENCE;
  } catch (const std::invalid_argument& err) {
    set_error(error, err.what());
    return LG_ERROR_VALIDATION;
  } catch (const std::domain_error& err) {
    set_error(error, err.what());
    return LG_ERROR_VALIDATION;
  } catch (const std::exception& err) {
    set_error(error, err.what());
    return LG_ERROR_INTERNAL;
  }
}

std::vector<std::string> split_labels(const char* csv) {
  std::vector<std::string> out;
  if (!csv) return out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto begin = item.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    const auto end = item.find_last_not_of(" \t");
    out.push_back(item.substr(begin, end - begin + 1));
  }
  return out;
}

}  // namespace

extern "C" {

const char* lg_version(void) { return pipeline::kArtifactVersion; }

void lg_free_string(char* s) { std::free(s); }

lg_status lg_cohort_load_csv(const char* path, lg_cohort** out, char** error) {
  if (!path || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out = new lg_cohort{core::load_cohort(path)};
  });
}

lg_status lg_cohort_parse_csv(const char* text, lg_cohort** out, char** error) {
  if (!text || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out = new lg_cohort{core::parse_cohort_csv(text)};
  });
}

int lg_cohort_size(const lg_cohort* cohort) {
  return cohort ? cohort->cohort.n() : 0;
}

lg_status lg_cohort_to_csv(const lg_cohort* cohort, char** out_text, char** error) {
  if (!cohort || !out_text) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_text = dup_string(core::write_cohort_csv(cohort->cohort));
  });
}

lg_status lg_cohort_person_period_csv(const lg_cohort* cohort, char** out_text,
                                      char** error) {
  if (!cohort || !out_text) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_text = dup_string(
        dtcox::person_period_csv(dtcox::expand_risk_sets(cohort->cohort)));
  });
}

void lg_cohort_free(lg_cohort* cohort) { delete cohort; }

lg_status lg_scenario_load(const char* path_or_preset, lg_scenario** out,
                           char** error) {
  if (!path_or_preset || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    const std::string name(path_or_preset);
    if (sim::is_preset_name(name)) {
      *out = new lg_scenario{sim::preset(name)};
      return;
    }
    if (!std::filesystem::exists(name)) {
      throw core::ValidationError(
          0, "", "scenario: '" + name + "' is neither a preset name nor a file");
    }
    *out = new lg_scenario{
        sim::scenario_from_json(pipeline::read_text_file(name))};
  });
}

lg_status lg_scenario_parse(const char* json_text, lg_scenario** out, char** error) {
  if (!json_text || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out = new lg_scenario{sim::scenario_from_json(json_text)};
  });
}

lg_status lg_scenario_to_json(const lg_scenario* scenario, char** out_json,
                              char** error) {
  if (!scenario || !out_json) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_json = dup_string(sim::scenario_to_json(scenario->scenario));
  });
}

lg_status lg_simulate(const lg_scenario* scenario, int64_t seed_override,
                      lg_cohort** out_cohort, char** out_truth_json, char** error) {
  if (!scenario || !out_cohort) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    sim::SimScenario s = scenario->scenario;
    if (seed_override >= 0) s.seed = static_cast<std::uint64_t>(seed_override);
    sim::SimResult result = sim::simulate_cohort(s);
    if (out_truth_json) {
      nlohmann::json truth;
      truth["scenario"] = nlohmann::json::parse(sim::scenario_to_json(s));
      truth["seed"] = s.seed;
      truth["n"] = s.n;
      truth["censoring_fraction"] = result.truth.censoring_fraction;
      nlohmann::json u;
      for (int j = 0; j < core::kResponseCount; ++j) {
        std::vector<double> col(core::kBranchCount);
        for (int k = 0; k < core::kBranchCount; ++k) col[k] = result.truth.u(k, j);
        u[core::response_labels()[j]] = col;
      }
      truth["u"] = u;
      nlohmann::json v = nlohmann::json::array();
      for (int i = 0; i < s.n; ++i) {
        std::vector<double> row(core::kResponseCount);
        for (int j = 0; j < core::kResponseCount; ++j) row[j] = result.truth.v(i, j);
        v.push_back(row);
      }
      truth["v"] = v;
      truth["t_uncensored"] = result.truth.t_uncensored;
      truth["t_capped"] = result.truth.t_capped;
      *out_truth_json = dup_string(truth.dump(2) + "\n");
    }
    *out_cohort = new lg_cohort{std::move(result.cohort)};
  });
}

void lg_scenario_free(lg_scenario* scenario) { delete scenario; }

lg_status lg_fit_run(const lg_cohort* cohort, const char* config_json,
                     lg_fit** out, char** error) {
  if (!cohort || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    pipeline::AnalysisConfig config;
    if (config_json && *config_json) {
      config = pipeline::config_from_json(config_json);
    }
    *out = new lg_fit{pipeline::run_fit(cohort->cohort, config)};
  });
}

lg_status lg_fit_to_json(const lg_fit* fit, char** out_json, char** error) {
  if (!fit || !out_json) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_json = dup_string(pipeline::fit_to_json(fit->bundle));
  });
}

lg_status lg_fit_parse(const char* json_text, lg_fit** out, char** error) {
  if (!json_text || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out = new lg_fit{pipeline::fit_from_json(json_text)};
  });
}

int lg_fit_stratum_count(const lg_fit* fit) {
  return fit ? static_cast<int>(fit->bundle.strata.size()) : 0;
}

lg_status lg_fit_stratum_name(const lg_fit* fit, int index, char** out_name,
                              char** error) {
  if (!fit || !out_name || index < 0 ||
      index >= static_cast<int>(fit->bundle.strata.size())) {
    set_error(error, "bad stratum index");
    return LG_ERROR_VALIDATION;
  }
  *out_name = dup_string(fit->bundle.strata[index].stratum);
  return LG_OK;
}

lg_status lg_fit_person_period_csv(const lg_fit* fit, int index, char** out_text,
                                   char** error) {
  if (!fit || !out_text || index < 0 ||
      index >= static_cast<int>(fit->bundle.strata.size())) {
    set_error(error, "bad stratum index");
    return LG_ERROR_VALIDATION;
  }
  *out_text = dup_string(fit->bundle.strata[index].person_period_csv);
  return LG_OK;
}

void lg_fit_free(lg_fit* fit) { delete fit; }

lg_status lg_graphs_select(const lg_fit* fit, const char* method,
                           const char* fit_json_checksum, lg_graphs** out,
                           char** error) {
  if (!fit || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    const ggm::SelectionMethod m = ggm::selection_method_from_string(
        method && *method ? method : "stepwise");
    *out = new lg_graphs{pipeline::select_graphs(
        fit->bundle, m, fit_json_checksum ? fit_json_checksum : "")};
  });
}

lg_status lg_graphs_to_json(const lg_graphs* graphs, char** out_json, char** error) {
  if (!graphs || !out_json) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_json = dup_string(pipeline::graphs_to_json(graphs->bundle));
  });
}

lg_status lg_graphs_parse(const char* json_text, lg_graphs** out, char** error) {
  if (!json_text || !out) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out = new lg_graphs{pipeline::graphs_from_json(json_text)};
  });
}

int lg_graphs_count(const lg_graphs* graphs) {
  return graphs ? static_cast<int>(graphs->bundle.graphs.size()) : 0;
}

lg_status lg_graphs_stratum_name(const lg_graphs* graphs, int index,
                                 char** out_name, char** error) {
  if (!graphs || !out_name || index < 0 ||
      index >= static_cast<int>(graphs->bundle.graphs.size())) {
    set_error(error, "bad graph index");
    return LG_ERROR_VALIDATION;
  }
  *out_name = dup_string(graphs->bundle.graphs[index].stratum);
  return LG_OK;
}

lg_status lg_graphs_to_dot(const lg_graphs* graphs, int index, int extended,
                           char** out_dot, char** error) {
  if (!graphs || !out_dot || index < 0 ||
      index >= static_cast<int>(graphs->bundle.graphs.size())) {
    set_error(error, "bad graph index");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    const ggm::GgmFit& fit = graphs->bundle.graphs[index];
    *out_dot = dup_string(extended ? pipeline::extended_graph_dot(fit)
                                   : pipeline::graph_dot(fit));
  });
}

void lg_graphs_free(lg_graphs* graphs) { delete graphs; }

lg_status lg_json_checksum(const char* json_text, char** out_hex, char** error) {
  if (!json_text || !out_hex) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_hex = dup_string(pipeline::canonical_checksum(json_text));
  });
}

lg_status lg_query(const char* graph_source, const char* stratum, const char* a,
                   const char* b, const char* given, int extended,
                   int* out_separated, char** out_witness, char** error) {
  if (!graph_source || !a || !b || !out_separated) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    const graphs::UndirectedGraph graph =
        pipeline::graph_from_source(graph_source, stratum ? stratum : "");
    pipeline::QueryRequest request;
    request.a = split_labels(a);
    request.b = split_labels(b);
    request.given = split_labels(given);
    request.extended = extended != 0;
    const pipeline::QueryResult result = pipeline::run_query(graph, request);
    *out_separated = result.separated ? 1 : 0;
    if (out_witness) {
      std::string witness;
      for (std::size_t i = 0; i < result.witness.size(); ++i) {
        if (i) witness += " -- ";
        witness += result.witness[i];
      }
      *out_witness = dup_string(witness);
    }
  });
}

lg_status lg_report_build(const char* fit_json, const char* graphs_json,
                          char** out_report_json, char** error) {
  if (!fit_json || !graphs_json || !out_report_json) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] {
    *out_report_json = dup_string(pipeline::build_report(fit_json, graphs_json));
  });
}

const char* lg_analysis_config_schema(void) {
  static const std::string schema = pipeline::config_schema_json();
  return schema.c_str();
}

const char* lg_scenario_schema(void) {
  static const std::string schema = sim::scenario_schema_json();
  return schema.c_str();
}

lg_status lg_write_text_atomic(const char* path, const char* text, char** error) {
  if (!path || !text) {
    set_error(error, "null argument");
    return LG_ERROR_VALIDATION;
  }
  return guarded(error, [&] { pipeline::write_text_atomic(path, text); });
}

}  // extern "C"
