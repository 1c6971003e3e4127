#pragma once

#include <functional>
#include <string>
#include <vector>

namespace cat::checks {

/// Counts individual assertions inside one criterion.
class Tally {
 public:
  void check(bool ok, const std::string& what);
  std::size_t passed() const { return passed_; }
  std::size_t total() const { return total_; }
  const std::string& first_failure() const { return first_failure_; }
  void note(const std::string& text) { notes_ += (notes_.empty() ? "" : "; ") + text; }
  const std::string& notes() const { return notes_; }

 private:
  std::size_t passed_ = 0;
  std::size_t total_ = 0;
  std::string first_failure_;
  std::string notes_;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<void(Tally&)> run;
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::size_t checks_passed = 0;
  std::size_t checks_total = 0;
  double seconds = 0.0;
  double budget_seconds = 0.0;
  std::string detail;
};

/// Criteria 1-12 in order.
const std::vector<Criterion>& criteria();

/// Runs one criterion; exceptions and budget overruns count as failures.
CriterionResult run_criterion(const Criterion& c);

std::string format_result(const CriterionResult& r);

}  // namespace cat::checks
