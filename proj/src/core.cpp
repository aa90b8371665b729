#include "core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace latgraph::core {

namespace {

const std::array<std::string, kResponseCount> kResponses = {
    "Math", "Phys", "Chem", "Bio", "His", "Geo", "Port", "Geom"};

const std::array<std::string, kBranchCount> kBranches = {
    "Chemical engineering", "Electrical engineering", "Economical science",
    "Mathematics",          "Physics",                "Computer science",
    "Automation engineering", "Technological chemistry", "Bachelor in Chemistry",
    "Medical Physics"};

std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto begin = s.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(ws);
  return std::string(s.substr(begin, end - begin + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

const std::array<std::string, kResponseCount>& response_labels() {
  return kResponses;
}

std::optional<int> response_from_label(std::string_view label) {
  const std::string needle = lower(trim(label));
  for (int j = 0; j < kResponseCount; ++j) {
    if (lower(kResponses[j]) == needle) return j + 1;
  }
  return std::nullopt;
}

bool is_survival_response(int response_index) { return response_index == 8; }

const std::array<std::string, kBranchCount>& branch_labels() {
  return kBranches;
}

std::optional<int> branch_from_label(std::string_view label) {
  const std::string needle = lower(trim(label));
  for (int k = 0; k < kBranchCount; ++k) {
    if (lower(kBranches[k]) == needle) return k + 1;
  }
  return std::nullopt;
}

Cohort Cohort::from_records(std::vector<StudentRecord> records) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const long row = static_cast<long>(i) + 1;
    const StudentRecord& r = records[i];
    if (r.student_id.empty()) {
      throw ValidationError(row, "student_id", "row " + std::to_string(row) +
                                                   ": empty student_id");
    }
    if (!ids.insert(r.student_id).second) {
      throw ValidationError(row, "student_id",
                            "row " + std::to_string(row) +
                                ": duplicate student_id '" + r.student_id + "'");
    }
    if (r.branch < 1 || r.branch > kBranchCount) {
      throw ValidationError(row, "branch", "row " + std::to_string(row) +
                                               ": branch index out of range");
    }
    if (r.attempts < 1) {
      throw ValidationError(row, "attempts",
                            "row " + std::to_string(row) +
                                ": attempts must be >= 1, got " +
                                std::to_string(r.attempts));
    }
    for (int j = 0; j < kScoreCount; ++j) {
      if (!std::isfinite(r.scores[j])) {
        throw ValidationError(row, lower(kResponses[j]),
                              "row " + std::to_string(row) + ": score '" +
                                  kResponses[j] + "' is not finite");
      }
    }
  }
  return Cohort(std::move(records));
}

namespace {

const std::vector<std::string> kCsvColumns = {
    "student_id", "branch", "gender", "age_group", "bonus", "math", "phys",
    "chem",       "bio",    "his",    "geo",       "port",  "attempts",
    "passed"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, long row, const std::string& col) {
  const std::string t = trim(text);
  double value = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || t.empty()) {
    throw ValidationError(row, col, "row " + std::to_string(row) +
                                        ": cannot parse number '" + text +
                                        "' in column " + col);
  }
  return value;
}

long parse_int(const std::string& text, long row, const std::string& col) {
  const std::string t = trim(text);
  long value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ValidationError(row, col, "row " + std::to_string(row) +
                                        ": cannot parse integer '" + text +
                                        "' in column " + col);
  }
  return value;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

Cohort parse_cohort_csv(const std::string& text, const ColumnMap& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw ValidationError(0, "", "empty file: missing header");
  }
  const std::vector<std::string> header = split_csv_line(line);

  std::map<std::string, int> position;
  for (std::size_t i = 0; i < header.size(); ++i) {
    position[lower(header[i])] = static_cast<int>(i);
  }
  std::map<std::string, int> col;
  for (const std::string& name : kCsvColumns) {
    std::string file_name = name;
    if (auto it = schema.find(name); it != schema.end()) file_name = it->second;
    auto pos = position.find(lower(file_name));
    if (pos == position.end()) {
      throw ValidationError(0, name, "missing column '" + file_name + "'");
    }
    col[name] = pos->second;
  }

  std::vector<StudentRecord> records;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() < header.size()) {
      throw ValidationError(row, "", "row " + std::to_string(row) +
                                         ": expected " +
                                         std::to_string(header.size()) +
                                         " fields, got " +
                                         std::to_string(fields.size()));
    }
    auto at = [&](const std::string& name) { return fields[col[name]]; };

    StudentRecord r;
    r.student_id = at("student_id");

    const auto branch = branch_from_label(at("branch"));
    if (!branch) {
      throw ValidationError(row, "branch", "row " + std::to_string(row) +
                                               ": unknown branch label '" +
                                               at("branch") + "'");
    }
    r.branch = *branch;

    const std::string gender = lower(at("gender"));
    if (gender == "m" || gender == "male") {
      r.male = true;
    } else if (gender == "f" || gender == "female") {
      r.male = false;
    } else {
      throw ValidationError(row, "gender", "row " + std::to_string(row) +
                                               ": gender must be F or M, got '" +
                                               at("gender") + "'");
    }

    const std::string age = lower(at("age_group"));
    if (age == "21plus") {
      r.age21plus = true;
    } else if (age == "under21") {
      r.age21plus = false;
    } else {
      throw ValidationError(row, "age_group",
                            "row " + std::to_string(row) +
                                ": age_group must be under21 or 21plus, got '" +
                                at("age_group") + "'");
    }

    const long bonus = parse_int(at("bonus"), row, "bonus");
    if (bonus != 0 && bonus != 1) {
      throw ValidationError(row, "bonus", "row " + std::to_string(row) +
                                              ": bonus must be 0 or 1");
    }
    r.bonus = bonus == 1;

    static const std::array<std::string, kScoreCount> score_cols = {
        "math", "phys", "chem", "bio", "his", "geo", "port"};
    for (int j = 0; j < kScoreCount; ++j) {
      r.scores[j] = parse_double(at(score_cols[j]), row, score_cols[j]);
    }

    const long attempts = parse_int(at("attempts"), row, "attempts");
    if (attempts < 1) {
      throw ValidationError(row, "attempts",
                            "row " + std::to_string(row) +
                                ": attempts must be >= 1, got " +
                                std::to_string(attempts));
    }
    r.attempts = static_cast<int>(attempts);

    const long passed = parse_int(at("passed"), row, "passed");
    if (passed != 0 && passed != 1) {
      throw ValidationError(row, "passed", "row " + std::to_string(row) +
                                               ": passed must be 0 or 1");
    }
    r.passed = passed == 1;

    records.push_back(std::move(r));
  }
  return Cohort::from_records(std::move(records));
}

Cohort load_cohort(const std::string& path, const ColumnMap& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError(0, "", "cannot open file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_cohort_csv(buf.str(), schema);
}

std::string write_cohort_csv(const Cohort& cohort) {
  std::ostringstream out;
  out << "student_id,branch,gender,age_group,bonus,math,phys,chem,bio,his,geo,"
         "port,attempts,passed\n";
  for (const StudentRecord& r : cohort.records()) {
    out << r.student_id << ',' << kBranches[r.branch - 1] << ','
        << (r.male ? 'M' : 'F') << ',' << (r.age21plus ? "21plus" : "under21")
        << ',' << (r.bonus ? 1 : 0);
    for (int j = 0; j < kScoreCount; ++j) out << ',' << format_double(r.scores[j]);
    out << ',' << r.attempts << ',' << (r.passed ? 1 : 0) << '\n';
  }
  return out.str();
}

std::pair<Cohort, Cohort> stratify(const Cohort& cohort) {
  std::vector<StudentRecord> bonus, no_bonus;
  for (const StudentRecord& r : cohort.records()) {
    (r.bonus ? bonus : no_bonus).push_back(r);
  }
  return {Cohort::from_records(std::move(bonus)),
          Cohort::from_records(std::move(no_bonus))};
}

DesignMatrix design_matrix(const Cohort& cohort) {
  if (cohort.n() == 0) {
    throw ValidationError(0, "", "design_matrix: empty cohort");
  }
  DesignMatrix d;
  d.columns = {"intercept", "male", "age21plus"};
  d.values.resize(cohort.n(), 3);
  bool any_male = false, any_female = false, any_young = false, any_old = false;
  for (int i = 0; i < cohort.n(); ++i) {
    const StudentRecord& r = cohort.records()[i];
    d.values(i, 0) = 1.0;
    d.values(i, 1) = r.male ? 1.0 : 0.0;
    d.values(i, 2) = r.age21plus ? 1.0 : 0.0;
    (r.male ? any_male : any_female) = true;
    (r.age21plus ? any_old : any_young) = true;
  }
  if (!(any_male && any_female)) d.degenerate.push_back(1);
  if (!(any_old && any_young)) d.degenerate.push_back(2);
  return d;
}

}  // namespace latgraph::core
