#include "dtcox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace latgraph::dtcox {

PersonPeriodTable expand_risk_sets(const core::Cohort& cohort) {
  PersonPeriodTable table;
  table.student_ids.reserve(cohort.n());
  for (const core::StudentRecord& r : cohort.records()) {
    table.student_ids.push_back(r.student_id);
    table.branch.push_back(r.branch);
    table.male.push_back(r.male ? 1 : 0);
    table.age21plus.push_back(r.age21plus ? 1 : 0);
    table.period_count = std::max(table.period_count, r.attempts);
  }
  table.risk_set_sizes.assign(table.period_count, 0);
  table.event_counts.assign(table.period_count, 0);
  for (int i = 0; i < cohort.n(); ++i) {
    const core::StudentRecord& r = cohort.records()[i];
    for (int t = 1; t <= r.attempts; ++t) {
      const int event = (r.passed && t == r.attempts) ? 1 : 0;
      table.rows.push_back({i, t, event});
      table.risk_set_sizes[t - 1] += 1;
      table.event_counts[t - 1] += event;
    }
  }
  return table;
}

std::string person_period_csv(const PersonPeriodTable& table) {
  std::ostringstream out;
  out << "student_id,t,event,gender,age_group,branch\n";
  for (const auto& row : table.rows) {
    const int i = row.student;
    out << table.student_ids[i] << ',' << row.period << ',' << row.event << ','
        << (table.male[i] ? 'M' : 'F') << ','
        << (table.age21plus[i] ? "21plus" : "under21") << ','
        << core::branch_labels()[table.branch[i] - 1] << '\n';
  }
  return out.str();
}

double survival_log_likelihood(const PersonPeriodTable& table,
                               const SurvivalParams& params,
                               const Frailties& frailties, LikelihoodForm form) {
  if (static_cast<int>(params.log_baseline.size()) < table.period_count) {
    throw std::invalid_argument("survival_log_likelihood: baseline too short");
  }
  if (params.beta.size() != 2 || frailties.u.size() != core::kBranchCount ||
      frailties.v.size() != table.n()) {
    throw std::invalid_argument(
        "survival_log_likelihood: beta needs (male, age21plus) and frailties "
        "must cover all branches and students");
  }
  double loglik = 0.0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const int i = row.student;
    const double eta = params.log_baseline[row.period - 1] +
                       params.beta[0] * (table.male[i] ? 1.0 : 0.0) +
                       params.beta[1] * (table.age21plus[i] ? 1.0 : 0.0) +
                       frailties.u[table.branch[i] - 1] + frailties.v[i];
    const double h = std::exp(eta);
    if (form == LikelihoodForm::binomial) {
      if (h >= 1.0) {
        throw std::domain_error(
            "binomial form needs hazard < 1; violated at table row " +
            std::to_string(r) + " (student " + table.student_ids[i] +
            ", period " + std::to_string(row.period) + ")");
      }
      loglik += row.event ? std::log(h) : std::log1p(-h);
    } else {
      // Poisson form: log(1-h) on censored rows is replaced by -h.
      loglik += row.event ? eta : -h;
    }
  }
  return loglik;
}

std::vector<double> life_table_log_hazard(const PersonPeriodTable& table) {
  std::vector<double> out(table.period_count, kNegInf);
  for (int t = 0; t < table.period_count; ++t) {
    if (table.event_counts[t] > 0) {
      out[t] = std::log(static_cast<double>(table.event_counts[t]) /
                        static_cast<double>(table.risk_set_sizes[t]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Laplace model
// ---------------------------------------------------------------------------

struct LaplaceModel::Parts {
  num::Vector log_baseline;  // per active period
  num::Vector beta;          // per kept covariate
  double sigma2_u = 0.0;
  double sigma2_v = 0.0;
};

LaplaceModel::LaplaceModel(const PersonPeriodTable& table,
                           const DtCoxOptions& options)
    : inner_tolerance_(options.inner_tolerance),
      max_inner_iterations_(options.max_inner_iterations) {
  if (table.rows.empty()) {
    throw std::invalid_argument("dtcox: empty person-period table");
  }
  const int total_events =
      std::accumulate(table.event_counts.begin(), table.event_counts.end(), 0);
  if (total_events < 1) {
    throw num::ConvergenceError(
        "dtcox: no events observed; the survival model cannot be fitted");
  }

  period_param_.assign(table.period_count, -1);
  for (int t = 0; t < table.period_count; ++t) {
    if (table.event_counts[t] > 0) {
      period_param_[t] = static_cast<int>(active_periods_.size());
      active_periods_.push_back(t + 1);
    }
  }

  free_sigma2_u_ = !options.fix_sigma2_U.has_value();
  free_sigma2_v_ = !options.fix_sigma2_V.has_value();
  fixed_sigma2_u_ = options.fix_sigma2_U.value_or(0.0);
  fixed_sigma2_v_ = options.fix_sigma2_V.value_or(0.0);
  if ((!free_sigma2_u_ && fixed_sigma2_u_ < 0.0) ||
      (!free_sigma2_v_ && fixed_sigma2_v_ < 0.0)) {
    throw std::invalid_argument("dtcox: fixed variances must be >= 0");
  }
  has_u_ = free_sigma2_u_ || fixed_sigma2_u_ > 0.0;
  has_v_ = free_sigma2_v_ || fixed_sigma2_v_ > 0.0;

  // Kept covariate columns: requested and non-constant across students.
  if (options.include_covariates) {
    bool male_varies = false, age_varies = false;
    for (int i = 1; i < table.n(); ++i) {
      male_varies |= table.male[i] != table.male[0];
      age_varies |= table.age21plus[i] != table.age21plus[0];
    }
    if (male_varies) covariate_labels_.push_back("male");
    if (age_varies) covariate_labels_.push_back("age21plus");
  }
  n_covariates_ = static_cast<int>(covariate_labels_.size());
  const bool use_male = std::find(covariate_labels_.begin(), covariate_labels_.end(),
                                  "male") != covariate_labels_.end();

  // Active rows (periods carrying a parameter), active students and branches.
  std::vector<int> student_map(table.n(), -1);
  std::vector<int> branch_map(core::kBranchCount + 1, -1);
  for (const auto& row : table.rows) {
    if (period_param_[row.period - 1] < 0) continue;
    const int i = row.student;
    if (student_map[i] < 0) {
      student_map[i] = static_cast<int>(student_of_.size());
      student_of_.push_back(i);
    }
    const int b = table.branch[i];
    if (has_u_ && branch_map[b] < 0) {
      branch_map[b] = static_cast<int>(branch_of_.size());
      branch_of_.push_back(b);
    }
    ModelRow mr;
    mr.period_param = period_param_[row.period - 1];
    mr.student = student_map[i];
    mr.branch = has_u_ ? branch_map[b] : -1;
    mr.event = row.event;
    int c = 0;
    if (use_male) mr.x[c++] = table.male[i] ? 1.0 : 0.0;
    if (n_covariates_ > c) mr.x[c++] = table.age21plus[i] ? 1.0 : 0.0;
    for (; c < 2; ++c) mr.x[c] = 0.0;
    rows_.push_back(mr);
  }

  // Group rows by active student for the per-student sums.
  std::stable_sort(rows_.begin(), rows_.end(),
                   [](const ModelRow& a, const ModelRow& b) {
                     return a.student < b.student;
                   });
  rows_of_student_begin_.assign(active_student_count() + 1, 0);
  for (const ModelRow& r : rows_) rows_of_student_begin_[r.student + 1] += 1;
  for (int i = 0; i < active_student_count(); ++i) {
    rows_of_student_begin_[i + 1] += rows_of_student_begin_[i];
  }

  dim_ = static_cast<int>(active_periods_.size()) + n_covariates_ +
         (free_sigma2_u_ ? 1 : 0) + (free_sigma2_v_ ? 1 : 0);
  for (int t : active_periods_) labels_.push_back("log_baseline[" + std::to_string(t) + "]");
  for (const std::string& c : covariate_labels_) labels_.push_back("beta." + c);
  if (free_sigma2_u_) labels_.push_back("log_sigma2_U");
  if (free_sigma2_v_) labels_.push_back("log_sigma2_V");
}

LaplaceModel::Parts LaplaceModel::unpack(const num::Vector& psi) const {
  if (psi.size() != dim_) {
    throw std::invalid_argument("LaplaceModel: parameter dimension mismatch");
  }
  Parts parts;
  const int na = static_cast<int>(active_periods_.size());
  parts.log_baseline = psi.head(na);
  parts.beta = psi.segment(na, n_covariates_);
  int pos = na + n_covariates_;
  parts.sigma2_u = free_sigma2_u_ ? std::exp(psi[pos++]) : fixed_sigma2_u_;
  parts.sigma2_v = free_sigma2_v_ ? std::exp(psi[pos++]) : fixed_sigma2_v_;
  return parts;
}

void LaplaceModel::set_warm_start(bool enabled) const {
  warm_enabled_ = enabled;
  has_warm_ = false;
}

LaplaceModel::ModeResult LaplaceModel::solve_modes(const Parts& parts) const {
  const int nb = has_u_ ? active_branch_count() : 0;
  const int ns = has_v_ ? active_student_count() : 0;

  ModeResult mode;
  mode.u = num::Vector::Zero(nb);
  mode.v = num::Vector::Zero(ns);
  if (nb == 0 && ns == 0) {
    mode.converged = true;
    return mode;
  }
  if (warm_enabled_ && has_warm_ && warm_u_.size() == nb && warm_v_.size() == ns) {
    mode.u = warm_u_;
    mode.v = warm_v_;
  }

  auto eta_of = [&](const ModelRow& r, const num::Vector& u, const num::Vector& v) {
    double eta = parts.log_baseline[r.period_param];
    for (int c = 0; c < n_covariates_; ++c) eta += parts.beta[c] * r.x[c];
    if (has_u_) eta += u[r.branch];
    if (has_v_) eta += v[r.student];
    return eta;
  };

  auto penalized = [&](const num::Vector& u, const num::Vector& v) {
    double g = 0.0;
    for (const ModelRow& r : rows_) {
      const double eta = eta_of(r, u, v);
      const double mu = std::exp(eta);
      if (!std::isfinite(mu)) return -std::numeric_limits<double>::infinity();
      g += (r.event ? eta : 0.0) - mu;
    }
    if (has_u_) g -= 0.5 * u.squaredNorm() / parts.sigma2_u;
    if (has_v_) g -= 0.5 * v.squaredNorm() / parts.sigma2_v;
    return g;
  };

  const bool used_warm = warm_enabled_ && has_warm_ && warm_u_.size() == nb &&
                         warm_v_.size() == ns;

  auto newton_run = [&]() {
    double g_cur = penalized(mode.u, mode.v);
    if (!std::isfinite(g_cur)) {
      mode.u.setZero();
      mode.v.setZero();
      g_cur = penalized(mode.u, mode.v);
    }
    bool polished = false;
    for (int iter = 0; iter < max_inner_iterations_; ++iter) {
      mode.iterations += 1;
      num::Vector grad_u = num::Vector::Zero(nb);
      num::Vector grad_v = num::Vector::Zero(ns);
      num::Vector m = num::Vector::Zero(active_student_count());
      num::Vector big_m = num::Vector::Zero(std::max(nb, 1));
      for (const ModelRow& r : rows_) {
        const double mu = std::exp(eta_of(r, mode.u, mode.v));
        m[r.student] += mu;
        if (has_u_) {
          grad_u[r.branch] += r.event - mu;
          big_m[r.branch] += mu;
        }
        if (has_v_) grad_v[r.student] += r.event - mu;
      }
      if (has_u_) grad_u -= mode.u / parts.sigma2_u;
      if (has_v_) grad_v -= mode.v / parts.sigma2_v;

      double gnorm = 0.0;
      if (nb > 0) gnorm = std::max(gnorm, grad_u.cwiseAbs().maxCoeff());
      if (ns > 0) gnorm = std::max(gnorm, grad_v.cwiseAbs().maxCoeff());
      if (gnorm <= inner_tolerance_) {
        mode.converged = true;
        // One extra Newton step once the tolerance is met; quadratic
        // convergence then puts the outer objective near machine precision,
        // which the outer line search depends on.
        if (polished || gnorm <= 1e-13) return;
        polished = true;
      }

      // Newton step via the arrowhead structure.
      num::Vector step_u = num::Vector::Zero(nb);
      num::Vector step_v = num::Vector::Zero(ns);
      if (has_u_ && has_v_) {
        num::Vector d = m.array() + 1.0 / parts.sigma2_v;
        num::Vector schur = num::Vector::Constant(nb, 1.0 / parts.sigma2_u);
        num::Vector rhs_u = grad_u;
        for (int i = 0; i < active_student_count(); ++i) {
          const int k = rows_[rows_of_student_begin_[i]].branch;
          schur[k] += m[i] / (parts.sigma2_v * m[i] + 1.0);
          rhs_u[k] -= (m[i] / d[i]) * grad_v[i];
        }
        step_u = rhs_u.cwiseQuotient(schur);
        for (int i = 0; i < active_student_count(); ++i) {
          const int k = rows_[rows_of_student_begin_[i]].branch;
          step_v[i] = (grad_v[i] - m[i] * step_u[k]) / d[i];
        }
      } else if (has_v_) {
        num::Vector d = m.array() + 1.0 / parts.sigma2_v;
        step_v = grad_v.cwiseQuotient(d);
      } else {
        num::Vector a = big_m.array() + 1.0 / parts.sigma2_u;
        step_u = grad_u.cwiseQuotient(a);
      }

      double alpha = 1.0;
      bool accepted = false;
      for (int halving = 0; halving < 60; ++halving) {
        num::Vector u_try = mode.u + alpha * step_u;
        num::Vector v_try = mode.v + alpha * step_v;
        const double g_try = penalized(u_try, v_try);
        if (std::isfinite(g_try) && g_try >= g_cur - 1e-14 * std::abs(g_cur)) {
          mode.u = std::move(u_try);
          mode.v = std::move(v_try);
          g_cur = g_try;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) return;
    }
  };

  newton_run();
  if (!mode.converged && used_warm) {
    // A bad warm start can strand the Newton iteration; restart cold.
    mode.u.setZero();
    mode.v.setZero();
    newton_run();
  }
  if (warm_enabled_) {
    warm_u_ = mode.u;
    warm_v_ = mode.v;
    has_warm_ = true;
  }
  return mode;
}

LaplaceModel::ModeResult LaplaceModel::conditional_modes(const num::Vector& psi) const {
  return solve_modes(unpack(psi));
}

LaplaceModel::Evaluation LaplaceModel::evaluate_impl(const num::Vector& psi,
                                                     bool want_gradient) const {
  const Parts parts = unpack(psi);
  const ModeResult mode = solve_modes(parts);
  const int nb = has_u_ ? active_branch_count() : 0;
  const int ns_total = active_student_count();

  // Mode-level quantities shared by the value and the gradient.
  num::Vector mu(rows_.size());
  num::Vector m = num::Vector::Zero(ns_total);
  num::Vector big_m = num::Vector::Zero(std::max(nb, 1));
  std::vector<int> branch_of_student(ns_total, -1);
  double gpen = 0.0;
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    const ModelRow& row = rows_[r];
    double eta = parts.log_baseline[row.period_param];
    for (int c = 0; c < n_covariates_; ++c) eta += parts.beta[c] * row.x[c];
    if (has_u_) eta += mode.u[row.branch];
    if (has_v_) eta += mode.v[row.student];
    mu[r] = std::exp(eta);
    gpen += (row.event ? eta : 0.0) - mu[r];
    m[row.student] += mu[r];
    if (has_u_) {
      big_m[row.branch] += mu[r];
      branch_of_student[row.student] = row.branch;
    }
  }
  if (has_u_) gpen -= 0.5 * mode.u.squaredNorm() / parts.sigma2_u;
  if (has_v_) gpen -= 0.5 * mode.v.squaredNorm() / parts.sigma2_v;

  num::Vector d, schur, inv_uu, inv_vv, c_student(ns_total);
  double logdet = 0.0;
  if (has_v_) d = m.array() + 1.0 / parts.sigma2_v;
  if (has_u_ && has_v_) {
    schur = num::Vector::Constant(nb, 1.0 / parts.sigma2_u);
    for (int i = 0; i < ns_total; ++i) {
      schur[branch_of_student[i]] += m[i] / (parts.sigma2_v * m[i] + 1.0);
    }
    inv_uu = schur.cwiseInverse();
    inv_vv.resize(ns_total);
    for (int i = 0; i < ns_total; ++i) {
      const double ratio = m[i] / d[i];
      inv_vv[i] = 1.0 / d[i] + ratio * ratio * inv_uu[branch_of_student[i]];
      c_student[i] = 1.0 / d[i] +
                     (1.0 - ratio) * (1.0 - ratio) * inv_uu[branch_of_student[i]];
    }
    logdet = d.array().log().sum() + schur.array().log().sum();
  } else if (has_v_) {
    inv_vv = d.cwiseInverse();
    c_student = inv_vv;
    logdet = d.array().log().sum();
  } else if (has_u_) {
    num::Vector a = big_m.array() + 1.0 / parts.sigma2_u;
    inv_uu = a.cwiseInverse();
    for (int i = 0; i < ns_total; ++i) c_student[i] = inv_uu[branch_of_student[i]];
    logdet = a.array().log().sum();
  } else {
    c_student.setZero();
  }

  Evaluation out;
  out.value = gpen - 0.5 * logdet;
  if (has_u_) out.value -= 0.5 * nb * std::log(parts.sigma2_u);
  if (has_v_) out.value -= 0.5 * ns_total * std::log(parts.sigma2_v);
  if (!want_gradient) return out;

  // Solve H s = b with the arrowhead structure.
  auto solve = [&](const num::Vector& b_u, const num::Vector& b_v) {
    std::pair<num::Vector, num::Vector> s{num::Vector::Zero(nb),
                                          num::Vector::Zero(has_v_ ? ns_total : 0)};
    if (has_u_ && has_v_) {
      num::Vector rhs_u = b_u;
      for (int i = 0; i < ns_total; ++i) {
        rhs_u[branch_of_student[i]] -= (m[i] / d[i]) * b_v[i];
      }
      s.first = rhs_u.cwiseQuotient(schur);
      for (int i = 0; i < ns_total; ++i) {
        s.second[i] = (b_v[i] - m[i] * s.first[branch_of_student[i]]) / d[i];
      }
    } else if (has_v_) {
      s.second = b_v.cwiseQuotient(d);
    } else if (has_u_) {
      num::Vector a = big_m.array() + 1.0 / parts.sigma2_u;
      s.first = b_u.cwiseQuotient(a);
    }
    return s;
  };

  // One packed-parameter gradient entry from the per-row weights w_r:
  // d l / d psi_j = sum (y-mu) w - (tr(H^-1 dH/dpsi) + third-order mode
  // correction) / 2, all contractions running over the shared c_i.
  auto entry_from_weights = [&](auto&& weight) {
    double direct = 0.0, t1 = 0.0;
    num::Vector b_u = num::Vector::Zero(nb);
    num::Vector b_v = num::Vector::Zero(has_v_ ? ns_total : 0);
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const ModelRow& row = rows_[r];
      const double w = weight(row);
      if (w == 0.0) continue;
      direct += (row.event - mu[r]) * w;
      t1 += mu[r] * c_student[row.student] * w;
      if (has_u_) b_u[row.branch] -= mu[r] * w;
      if (has_v_) b_v[row.student] -= mu[r] * w;
    }
    double t2 = 0.0;
    if (nb > 0 || has_v_) {
      const auto s = solve(b_u, b_v);
      for (std::size_t r = 0; r < rows_.size(); ++r) {
        const ModelRow& row = rows_[r];
        double delta = 0.0;
        if (has_u_) delta += s.first[row.branch];
        if (has_v_) delta += s.second[row.student];
        t2 += mu[r] * delta * c_student[row.student];
      }
    }
    return direct - 0.5 * (t1 + t2);
  };

  out.gradient.resize(dim_);
  const int na = static_cast<int>(active_periods_.size());
  for (int j = 0; j < na; ++j) {
    out.gradient[j] = entry_from_weights(
        [&](const ModelRow& row) { return row.period_param == j ? 1.0 : 0.0; });
  }
  for (int c = 0; c < n_covariates_; ++c) {
    out.gradient[na + c] =
        entry_from_weights([&](const ModelRow& row) { return row.x[c]; });
  }

  int pos = na + n_covariates_;
  auto variance_entry = [&](bool for_u) {
    const double sigma2 = for_u ? parts.sigma2_u : parts.sigma2_v;
    const num::Vector& z = for_u ? mode.u : mode.v;
    const int count = for_u ? nb : ns_total;
    const double direct = 0.5 * z.squaredNorm() / sigma2 - 0.5 * count;
    const double t1 = -(for_u ? inv_uu.sum() : inv_vv.sum()) / sigma2;
    num::Vector b_u = num::Vector::Zero(nb);
    num::Vector b_v = num::Vector::Zero(has_v_ ? ns_total : 0);
    if (for_u) {
      b_u = z / sigma2;
    } else {
      b_v = z / sigma2;
    }
    const auto s = solve(b_u, b_v);
    double t2 = 0.0;
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const ModelRow& row = rows_[r];
      double delta = 0.0;
      if (has_u_) delta += s.first[row.branch];
      if (has_v_) delta += s.second[row.student];
      t2 += mu[r] * delta * c_student[row.student];
    }
    return direct - 0.5 * (t1 + t2);
  };
  if (free_sigma2_u_) out.gradient[pos++] = variance_entry(true);
  if (free_sigma2_v_) out.gradient[pos++] = variance_entry(false);
  return out;
}

double LaplaceModel::value(const num::Vector& psi) const {
  return evaluate_impl(psi, false).value;
}

num::Vector LaplaceModel::gradient(const num::Vector& psi) const {
  return evaluate_impl(psi, true).gradient;
}

LaplaceModel::Evaluation LaplaceModel::evaluate(const num::Vector& psi) const {
  return evaluate_impl(psi, true);
}

num::Vector LaplaceModel::default_start() const {
  num::Vector psi(dim_);
  int pos = 0;
  for (std::size_t j = 0; j < active_periods_.size(); ++j, ++pos) {
    // Life-table start; active periods have at least one event.
    double d = 0.0, r = 0.0;
    for (const ModelRow& row : rows_) {
      if (row.period_param == static_cast<int>(j)) {
        d += row.event;
        r += 1.0;
      }
    }
    psi[pos] = std::log(std::max(d, 0.5) / std::max(r, 1.0));
  }
  for (int c = 0; c < n_covariates_; ++c, ++pos) psi[pos] = 0.0;
  if (free_sigma2_u_) psi[pos++] = std::log(0.2);
  if (free_sigma2_v_) psi[pos++] = std::log(0.2);
  return psi;
}

namespace {

constexpr double kLogFloor = -30.0;
constexpr double kZeroReport = 1e-10;

DtCoxFit null_model_fit(const PersonPeriodTable& table) {
  DtCoxFit fit;
  fit.log_baseline = life_table_log_hazard(table);
  for (int t = 0; t < table.period_count; ++t) {
    if (table.event_counts[t] > 0) fit.active_periods.push_back(t + 1);
  }
  fit.beta = num::Vector::Zero(0);
  fit.sigma2_U = 0.0;
  fit.sigma2_V = 0.0;
  fit.sigma2_U_at_zero = true;
  fit.sigma2_V_at_zero = true;
  fit.predicted_U = num::Vector::Zero(core::kBranchCount);
  fit.predicted_V = num::Vector::Zero(table.n());
  fit.converged = true;
  // Poisson-form log-likelihood at the life-table optimum.
  double loglik = 0.0;
  for (int t = 0; t < table.period_count; ++t) {
    const double d = table.event_counts[t];
    if (d > 0) loglik += d * (fit.log_baseline[t] - 1.0);
  }
  fit.log_likelihood = loglik;
  return fit;
}

}  // namespace

DtCoxFit fit_dtcox_table(const PersonPeriodTable& table,
                         const DtCoxOptions& options) {
  const bool null_model = !options.include_covariates &&
                          options.fix_sigma2_U.value_or(-1.0) == 0.0 &&
                          options.fix_sigma2_V.value_or(-1.0) == 0.0;
  const int total_events =
      std::accumulate(table.event_counts.begin(), table.event_counts.end(), 0);
  if (total_events < 1) {
    throw num::ConvergenceError(
        "dtcox: no events observed; the survival model cannot be fitted");
  }
  if (null_model) return null_model_fit(table);

  LaplaceModel model(table, options);

  num::ObjectiveFn objective = [&](const num::Vector& psi) {
    const LaplaceModel::Evaluation ev = model.evaluate(psi);
    num::Objective obj;
    obj.value = ev.value;
    obj.gradient = ev.gradient;
    return obj;
  };

  num::OptimizerSettings settings;
  settings.max_iterations = options.max_outer_iterations;
  settings.gradient_tolerance = options.outer_tolerance;
  // The value carries leftover inner-solver noise around 1e-11 relative.
  settings.value_slack_relative = 1e-11;
  num::Vector lb = num::Vector::Constant(model.parameter_count(), kNegInf);
  int pos = static_cast<int>(model.active_periods().size()) +
            static_cast<int>(model.covariate_labels().size());
  if (model.free_sigma2_u()) lb[pos++] = kLogFloor;
  if (model.free_sigma2_v()) lb[pos++] = kLogFloor;
  settings.parameter_lower_bounds = lb;

  const num::MaximizeResult opt = num::maximize(objective, model.default_start(), settings);
  const num::Vector& psi = opt.argmax;

  DtCoxFit fit;
  fit.log_baseline.assign(table.period_count, kNegInf);
  fit.active_periods = model.active_periods();
  for (std::size_t j = 0; j < fit.active_periods.size(); ++j) {
    fit.log_baseline[fit.active_periods[j] - 1] = psi[j];
  }
  const int na = static_cast<int>(fit.active_periods.size());
  const int nc = static_cast<int>(model.covariate_labels().size());
  fit.beta = psi.segment(na, nc);
  fit.beta_labels = model.covariate_labels();
  pos = na + nc;
  double sigma2_u = options.fix_sigma2_U.value_or(0.0);
  double sigma2_v = options.fix_sigma2_V.value_or(0.0);
  if (model.free_sigma2_u()) sigma2_u = std::exp(psi[pos++]);
  if (model.free_sigma2_v()) sigma2_v = std::exp(psi[pos++]);
  fit.sigma2_U_at_zero = sigma2_u < kZeroReport;
  fit.sigma2_V_at_zero = sigma2_v < kZeroReport;
  fit.sigma2_U = fit.sigma2_U_at_zero ? 0.0 : sigma2_u;
  fit.sigma2_V = fit.sigma2_V_at_zero ? 0.0 : sigma2_v;
  fit.log_likelihood = opt.value;
  fit.converged = opt.converged;
  fit.message = opt.message;

  const LaplaceModel::ModeResult mode = model.conditional_modes(psi);
  fit.predicted_U = num::Vector::Zero(core::kBranchCount);
  fit.predicted_V = num::Vector::Zero(table.n());
  for (int k = 0; k < model.active_branch_count(); ++k) {
    fit.predicted_U[model.active_branches()[k] - 1] = mode.u[k];
  }
  if (mode.v.size() > 0) {
    for (int i = 0; i < model.active_student_count(); ++i) {
      fit.predicted_V[model.active_students()[i]] = mode.v[i];
    }
  }

  if (nc > 0 && fit.beta.cwiseAbs().maxCoeff() > 50.0) {
    fit.separation_flag = true;
    fit.converged = false;
    fit.message = "complete separation: ||beta|| > 50";
  } else if (nc > 0 && !fit.converged && fit.beta.cwiseAbs().maxCoeff() > 20.0) {
    fit.message += "; beta diverging, possible complete separation";
  }
  return fit;
}

DtCoxFit fit_dtcox(const core::Cohort& cohort, const DtCoxOptions& options) {
  return fit_dtcox_table(expand_risk_sets(cohort), options);
}

ExpectedEvents expected_events(const DtCoxFit& fit, const PersonPeriodTable& table,
                               const CellFilter& filter) {
  ExpectedEvents out;
  out.expected.assign(table.period_count, 0.0);
  out.observed.assign(table.period_count, 0);
  out.empty_cell.assign(table.period_count, true);

  const bool use_male = std::find(fit.beta_labels.begin(), fit.beta_labels.end(),
                                  "male") != fit.beta_labels.end();
  const bool use_age = std::find(fit.beta_labels.begin(), fit.beta_labels.end(),
                                 "age21plus") != fit.beta_labels.end();

  for (const auto& row : table.rows) {
    const int i = row.student;
    if (filter.male && *filter.male != static_cast<bool>(table.male[i])) continue;
    if (filter.age21plus &&
        *filter.age21plus != static_cast<bool>(table.age21plus[i])) {
      continue;
    }
    const int t = row.period - 1;
    out.empty_cell[t] = false;
    out.observed[t] += row.event;
    const double lb = fit.log_baseline[t];
    if (lb == kNegInf) continue;
    double eta = lb + fit.predicted_U[table.branch[i] - 1] + fit.predicted_V[i];
    int c = 0;
    if (use_male) eta += fit.beta[c++] * (table.male[i] ? 1.0 : 0.0);
    if (use_age) eta += fit.beta[c++] * (table.age21plus[i] ? 1.0 : 0.0);
    out.expected[t] += std::exp(eta);
  }
  return out;
}

}  // namespace latgraph::dtcox
