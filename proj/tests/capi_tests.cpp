// Exercises the shared-library C surface end to end.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <latgraph.h>

#include <string>

namespace {

struct Str {
  char* ptr = nullptr;
  ~Str() { lg_free_string(ptr); }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

const char* kTinyCsv =
    "student_id,branch,gender,age_group,bonus,math,phys,chem,bio,his,geo,port,"
    "attempts,passed\n"
    "a,Mathematics,F,under21,0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,1,1\n"
    "b,Physics,M,21plus,1,-0.1,-0.2,-0.3,-0.4,-0.5,-0.6,-0.7,3,0\n";

}  // namespace

TEST_CASE("version and schemas are exposed") {
  CHECK(std::string(lg_version()) == "0.1.0");
  CHECK(std::string(lg_analysis_config_schema()).find("stratify_by") != std::string::npos);
  CHECK(std::string(lg_scenario_schema()).find("baseline_hazards") != std::string::npos);
}

TEST_CASE("cohort parse, serialize, and expand") {
  lg_cohort* cohort = nullptr;
  Str error;
  REQUIRE(lg_cohort_parse_csv(kTinyCsv, &cohort, &error.ptr) == LG_OK);
  CHECK(lg_cohort_size(cohort) == 2);

  Str csv;
  REQUIRE(lg_cohort_to_csv(cohort, &csv.ptr, &error.ptr) == LG_OK);
  CHECK(csv.str().find("Mathematics") != std::string::npos);

  Str pp;
  REQUIRE(lg_cohort_person_period_csv(cohort, &pp.ptr, &error.ptr) == LG_OK);
  CHECK(pp.str().find("student_id,t,event") == 0);
  lg_cohort_free(cohort);
}

TEST_CASE("validation failures carry status 2 and a message") {
  lg_cohort* cohort = nullptr;
  Str error;
  const std::string bad =
      std::string(kTinyCsv) + "c,Alchemy,F,under21,0,0,0,0,0,0,0,0,1,1\n";
  CHECK(lg_cohort_parse_csv(bad.c_str(), &cohort, &error.ptr) == LG_ERROR_VALIDATION);
  CHECK(error.str().find("unknown branch") != std::string::npos);

  CHECK(lg_cohort_parse_csv(nullptr, &cohort, nullptr) == LG_ERROR_VALIDATION);
}

TEST_CASE("full pipeline through the C API") {
  Str error;
  lg_scenario* scenario = nullptr;
  REQUIRE(lg_scenario_load("fig1b_bonus", &scenario, &error.ptr) == LG_OK);

  Str scenario_json;
  REQUIRE(lg_scenario_to_json(scenario, &scenario_json.ptr, &error.ptr) == LG_OK);
  lg_scenario* parsed = nullptr;
  REQUIRE(lg_scenario_parse(scenario_json.str().c_str(), &parsed, &error.ptr) == LG_OK);
  lg_scenario_free(parsed);

  lg_cohort* cohort = nullptr;
  Str truth;
  REQUIRE(lg_simulate(scenario, 140, &cohort, &truth.ptr, &error.ptr) == LG_OK);
  CHECK(lg_cohort_size(cohort) == 299);
  CHECK(truth.str().find("censoring_fraction") != std::string::npos);

  lg_fit* fit = nullptr;
  REQUIRE(lg_fit_run(cohort, nullptr, &fit, &error.ptr) == LG_OK);
  CHECK(lg_fit_stratum_count(fit) == 1);
  Str name;
  REQUIRE(lg_fit_stratum_name(fit, 0, &name.ptr, &error.ptr) == LG_OK);
  CHECK(name.str() == "bonus");

  Str fit_json;
  REQUIRE(lg_fit_to_json(fit, &fit_json.ptr, &error.ptr) == LG_OK);
  Str checksum;
  REQUIRE(lg_json_checksum(fit_json.str().c_str(), &checksum.ptr, &error.ptr) == LG_OK);

  lg_fit* reparsed = nullptr;
  REQUIRE(lg_fit_parse(fit_json.str().c_str(), &reparsed, &error.ptr) == LG_OK);

  lg_graphs* graphs = nullptr;
  REQUIRE(lg_graphs_select(reparsed, "stepwise", checksum.ptr, &graphs, &error.ptr) ==
          LG_OK);
  CHECK(lg_graphs_count(graphs) == 1);

  Str graphs_json, dot, ext_dot;
  REQUIRE(lg_graphs_to_json(graphs, &graphs_json.ptr, &error.ptr) == LG_OK);
  REQUIRE(lg_graphs_to_dot(graphs, 0, 0, &dot.ptr, &error.ptr) == LG_OK);
  REQUIRE(lg_graphs_to_dot(graphs, 0, 1, &ext_dot.ptr, &error.ptr) == LG_OK);
  CHECK(dot.str().find("graph \"bonus\"") == 0);
  CHECK(ext_dot.str().find("digraph") == 0);

  Str report;
  REQUIRE(lg_report_build(fit_json.str().c_str(), graphs_json.str().c_str(),
                          &report.ptr, &error.ptr) == LG_OK);
  CHECK(report.str().find("cross_stratum") != std::string::npos);

  // Mismatched inputs are a validation error.
  Str report2, error2;
  std::string other = fit_json.str();
  other.replace(other.find("\"run_id\""), 8, "\"run_xx\"");
  CHECK(lg_report_build(other.c_str(), graphs_json.str().c_str(), &report2.ptr,
                        &error2.ptr) == LG_ERROR_VALIDATION);

  lg_graphs_free(graphs);
  lg_fit_free(reparsed);
  lg_fit_free(fit);
  lg_cohort_free(cohort);
  lg_scenario_free(scenario);
}

TEST_CASE("fit honors an explicit analysis config") {
  Str error;
  lg_scenario* scenario = nullptr;
  REQUIRE(lg_scenario_load("fig1b_bonus", &scenario, &error.ptr) == LG_OK);
  lg_cohort* cohort = nullptr;
  REQUIRE(lg_simulate(scenario, 33, &cohort, nullptr, &error.ptr) == LG_OK);

  const char* config =
      "{\"responses\":[\"Math\",\"Phys\",\"Geom\"],"
      "\"selection_method\":\"exhaustive\",\"stratify_by\":\"none\"}";
  lg_fit* fit = nullptr;
  REQUIRE(lg_fit_run(cohort, config, &fit, &error.ptr) == LG_OK);
  Str fit_json, checksum;
  REQUIRE(lg_fit_to_json(fit, &fit_json.ptr, &error.ptr) == LG_OK);
  REQUIRE(lg_json_checksum(fit_json.str().c_str(), &checksum.ptr, &error.ptr) == LG_OK);
  CHECK(fit_json.str().find("\"responses\"") != std::string::npos);

  // Exhaustive selection is fine with three vertices.
  lg_graphs* graphs = nullptr;
  REQUIRE(lg_graphs_select(fit, "exhaustive", checksum.ptr, &graphs, &error.ptr) == LG_OK);
  Str graphs_json;
  REQUIRE(lg_graphs_to_json(graphs, &graphs_json.ptr, &error.ptr) == LG_OK);
  CHECK(graphs_json.str().find("exhaustive") != std::string::npos);

  // A bad config is a validation error.
  lg_fit* bad = nullptr;
  Str bad_error;
  CHECK(lg_fit_run(cohort, "{\"stratify_by\":\"age\"}", &bad, &bad_error.ptr) ==
        LG_ERROR_VALIDATION);

  lg_graphs_free(graphs);
  lg_fit_free(fit);
  lg_cohort_free(cohort);
  lg_scenario_free(scenario);
}

TEST_CASE("queries against fixtures") {
  Str error, witness;
  int separated = -1;
  REQUIRE(lg_query("fig1b_bonus", nullptr, "Geom", "rest", "Math", 0, &separated,
                   &witness.ptr, &error.ptr) == LG_OK);
  CHECK(separated == 1);

  Str witness2;
  REQUIRE(lg_query("fig1b_bonus", nullptr, "Geom", "Phys", nullptr, 0, &separated,
                   &witness2.ptr, &error.ptr) == LG_OK);
  CHECK(separated == 0);
  CHECK(witness2.str() == "Geom -- Math -- Phys");

  REQUIRE(lg_query("fig1b_bonus", nullptr, "T_Geom", "rest", "Math", 1, &separated,
                   nullptr, &error.ptr) == LG_OK);
  CHECK(separated == 1);

  Str error2;
  CHECK(lg_query("no_such_fixture", nullptr, "a", "b", nullptr, 0, &separated,
                 nullptr, &error2.ptr) == LG_ERROR_VALIDATION);
}

TEST_CASE("zero-event cohorts are a convergence failure") {
  std::string csv =
      "student_id,branch,gender,age_group,bonus,math,phys,chem,bio,his,geo,port,"
      "attempts,passed\n";
  for (int i = 0; i < 12; ++i) {
    csv += "s" + std::to_string(i) + ",Mathematics," + (i % 2 ? "M" : "F") +
           ",under21,0,0,0,0,0,0,0,0,3,0\n";
  }
  Str error;
  lg_cohort* cohort = nullptr;
  REQUIRE(lg_cohort_parse_csv(csv.c_str(), &cohort, &error.ptr) == LG_OK);
  lg_fit* fit = nullptr;
  Str fit_error;
  CHECK(lg_fit_run(cohort, nullptr, &fit, &fit_error.ptr) == LG_ERROR_CONVERGENCE);
  CHECK(fit_error.str().find("no events") != std::string::npos);
  lg_cohort_free(cohort);
}
