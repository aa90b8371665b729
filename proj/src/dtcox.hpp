#pragma once

#include "core.hpp"
#include "numerics.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace latgraph::dtcox {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Risk-set expansion: one row per (student, period at risk).
struct PersonPeriodTable {
  struct Row {
    int student = 0;  // index into the per-student arrays
    int period = 0;   // 1-based attempt index
    int event = 0;    // 1 only on a student's last row and only if passed
  };
  std::vector<Row> rows;
  int period_count = 0;              // T_max
  std::vector<int> risk_set_sizes;   // |R_t| for t = 1..T_max
  std::vector<int> event_counts;     // d_t for t = 1..T_max

  std::vector<std::string> student_ids;
  std::vector<int> branch;               // 1..10 per student
  std::vector<std::uint8_t> male;        // per student
  std::vector<std::uint8_t> age21plus;   // per student

  int n() const { return static_cast<int>(student_ids.size()); }
};

PersonPeriodTable expand_risk_sets(const core::Cohort& cohort);

// CSV export: student_id,t,event,gender,age_group,branch
std::string person_period_csv(const PersonPeriodTable& table);

enum class LikelihoodForm { binomial, poisson };

struct SurvivalParams {
  std::vector<double> log_baseline;  // per period, kNegInf allowed
  num::Vector beta;                  // (male, age21plus)
};

struct Frailties {
  num::Vector u;  // length 10, branch frailty on the log scale
  num::Vector v;  // length n, individual frailty on the log scale
};

// Conditional log-likelihood of the expanded table given parameters and
// frailties. Binomial form requires every hazard < 1 and raises a domain
// error naming the row otherwise; the Poisson form replaces log(1-h) by -h.
double survival_log_likelihood(const PersonPeriodTable& table,
                               const SurvivalParams& params,
                               const Frailties& frailties, LikelihoodForm form);

struct DtCoxOptions {
  bool include_covariates = true;
  std::optional<double> fix_sigma2_U;  // 0 drops the branch frailty
  std::optional<double> fix_sigma2_V;  // 0 drops the individual frailty
  double inner_tolerance = 1e-9;       // infinity norm of the mode gradient
  double outer_tolerance = 1e-7;       // infinity norm of the Laplace gradient
  int max_inner_iterations = 200;
  int max_outer_iterations = 200;
};

struct DtCoxFit {
  std::vector<double> log_baseline;   // length T_max, kNegInf on zero-event periods
  std::vector<int> active_periods;    // 1-based periods carrying a parameter
  num::Vector beta;
  std::vector<std::string> beta_labels;
  double sigma2_U = 0.0;
  double sigma2_V = 0.0;
  bool sigma2_U_at_zero = false;
  bool sigma2_V_at_zero = false;
  num::Vector predicted_U;  // length 10, conditional modes, 0 for absent branches
  num::Vector predicted_V;  // length n
  double log_likelihood = 0.0;  // Laplace-approximate marginal log-likelihood
  bool converged = false;
  bool separation_flag = false;  // ||beta||_inf > 50
  std::string message;
};

// Laplace objective for the Poisson-form GLMM, exposed for gradient checks.
// The packed parameter vector is [log_baseline over active periods, beta over
// kept covariate columns, log sigma2_U, log sigma2_V], with fixed variance
// components omitted from the packing.
class LaplaceModel {
 public:
  LaplaceModel(const PersonPeriodTable& table, const DtCoxOptions& options);

  int parameter_count() const { return dim_; }
  const std::vector<std::string>& parameter_labels() const { return labels_; }
  num::Vector default_start() const;

  double value(const num::Vector& psi) const;
  num::Vector gradient(const num::Vector& psi) const;

  struct Evaluation {
    double value = 0.0;
    num::Vector gradient;
  };
  // Value and gradient from one conditional-mode solve.
  Evaluation evaluate(const num::Vector& psi) const;

  // Warm-starting the inner Newton from the previous mode is on by default;
  // disable it for history-independent evaluations (finite differences).
  void set_warm_start(bool enabled) const;

  struct ModeResult {
    num::Vector u;  // active branches
    num::Vector v;  // active students
    bool converged = false;
    int iterations = 0;
  };
  ModeResult conditional_modes(const num::Vector& psi) const;

  // Mapping of the packed vector back to interpretable pieces.
  const std::vector<int>& active_periods() const { return active_periods_; }
  const std::vector<std::string>& covariate_labels() const { return covariate_labels_; }
  bool free_sigma2_u() const { return free_sigma2_u_; }
  bool free_sigma2_v() const { return free_sigma2_v_; }
  int active_branch_count() const { return static_cast<int>(branch_of_.size()); }
  int active_student_count() const { return static_cast<int>(student_of_.size()); }
  const std::vector<int>& active_branches() const { return branch_of_; }
  const std::vector<int>& active_students() const { return student_of_; }

 private:
  struct Parts;
  Parts unpack(const num::Vector& psi) const;
  ModeResult solve_modes(const Parts& parts) const;
  Evaluation evaluate_impl(const num::Vector& psi, bool want_gradient) const;

  mutable bool warm_enabled_ = true;
  mutable bool has_warm_ = false;
  mutable num::Vector warm_u_, warm_v_;

  int dim_ = 0;
  std::vector<std::string> labels_;
  std::vector<int> active_periods_;       // 1-based
  std::vector<int> period_param_;         // period -> packed index, -1 if excluded
  std::vector<std::string> covariate_labels_;
  bool free_sigma2_u_ = true;
  bool free_sigma2_v_ = true;
  double fixed_sigma2_u_ = 0.0;
  double fixed_sigma2_v_ = 0.0;
  bool has_u_ = true;  // branch frailty present (free or fixed > 0)
  bool has_v_ = true;

  // Active rows only (periods with at least one event).
  struct ModelRow {
    int period_param;  // index into the baseline block
    int student;       // active-student index
    int branch;        // active-branch index, -1 when frailty disabled
    int event;
    double x[2];       // covariate values for the kept columns
  };
  std::vector<ModelRow> rows_;
  int n_covariates_ = 0;
  std::vector<int> student_of_;  // active-student index -> table student
  std::vector<int> branch_of_;   // active-branch index -> branch 1..10
  std::vector<int> rows_of_student_begin_;  // CSR layout over rows_
  double inner_tolerance_;
  int max_inner_iterations_;
};

DtCoxFit fit_dtcox(const core::Cohort& cohort, const DtCoxOptions& options = {});
DtCoxFit fit_dtcox_table(const PersonPeriodTable& table,
                         const DtCoxOptions& options = {});

// Zero-event-period aware life-table estimator: exp(log_baseline[t]) = d_t/|R_t|.
std::vector<double> life_table_log_hazard(const PersonPeriodTable& table);

struct CellFilter {
  std::optional<bool> male;
  std::optional<bool> age21plus;
};

struct ExpectedEvents {
  std::vector<double> expected;  // n(t) for t = 1..T_max
  std::vector<int> observed;     // d_t restricted to the cell
  std::vector<bool> empty_cell;  // no one at risk in the cell at t
};

// n(t) = sum over the cell's risk set of the fitted hazard at t.
ExpectedEvents expected_events(const DtCoxFit& fit, const PersonPeriodTable& table,
                               const CellFilter& filter = {});

}  // namespace latgraph::dtcox
