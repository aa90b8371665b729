#pragma once

#include "numerics.hpp"

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace latgraph::core {

inline constexpr int kResponseCount = 8;
inline constexpr int kScoreCount = 7;
inline constexpr int kBranchCount = 10;

// Canonical response order; Geom (index 8) is the only survival-type response.
const std::array<std::string, kResponseCount>& response_labels();
std::optional<int> response_from_label(std::string_view label);  // 1..8
bool is_survival_response(int response_index);

// The ten admissible study branches, indexed 1..10.
const std::array<std::string, kBranchCount>& branch_labels();
std::optional<int> branch_from_label(std::string_view label);  // case-insensitive, trimmed

/// Input validation failure. `row()` is the 1-based data row (0 when the
/// error is not tied to a row), `field()` names the offending column.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(long row, std::string field, const std::string& what)
      : std::runtime_error(what), row_(row), field_(std::move(field)) {}
  long row() const { return row_; }
  const std::string& field() const { return field_; }

 private:
  long row_;
  std::string field_;
};

struct StudentRecord {
  std::string student_id;
  int branch = 0;          // 1..10
  bool male = false;       // gender, female is the reference level
  bool age21plus = false;  // under21 is the reference level
  bool bonus = false;      // stratum
  std::array<double, kScoreCount> scores{};  // Math..Port
  int attempts = 0;        // >= 1
  bool passed = false;     // false => right-censored at `attempts`
};

// Validated, immutable roster. Construction checks unique ids, admissible
// branches, finite scores, and attempts >= 1.
class Cohort {
 public:
  static Cohort from_records(std::vector<StudentRecord> records);

  int n() const { return static_cast<int>(records_.size()); }
  const std::vector<StudentRecord>& records() const { return records_; }

 private:
  explicit Cohort(std::vector<StudentRecord> records)
      : records_(std::move(records)) {}
  std::vector<StudentRecord> records_;
};

// Maps canonical column names to the names used in the file header.
using ColumnMap = std::map<std::string, std::string>;

// CSV schema (header, comma-separated):
// student_id,branch,gender,age_group,bonus,math,phys,chem,bio,his,geo,port,attempts,passed
Cohort load_cohort(const std::string& path, const ColumnMap& schema = {});
Cohort parse_cohort_csv(const std::string& text, const ColumnMap& schema = {});
std::string write_cohort_csv(const Cohort& cohort);

// Partition by stratum; record order within each stratum is preserved.
std::pair<Cohort, Cohort> stratify(const Cohort& cohort);  // (bonus, no_bonus)

struct DesignMatrix {
  num::Matrix values;                 // n x 3: intercept, male, age21plus
  std::vector<std::string> columns;   // column labels
  std::vector<int> degenerate;        // columns with an absent level
};

// Fixed-effects design: intercept, gender indicator (male=1), age indicator
// (21plus=1). Degenerate indicator columns are reported, not dropped.
DesignMatrix design_matrix(const Cohort& cohort);

}  // namespace latgraph::core
