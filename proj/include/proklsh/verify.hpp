#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace proklsh::verify {

using nlohmann::json;

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // measured values, formatted
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  double seconds = 0.0;
  std::vector<CheckResult> checks;
};

// Each criterion is self-contained and deterministic: fixed seeds, pinned
// tolerances, no shared mutable state (safe to run concurrently).
CriterionResult criterion_complement_polar_identity();      // 1
CriterionResult criterion_spike_and_flat_exactness();       // 2
CriterionResult criterion_flat_tail_zero_gap();             // 3
CriterionResult criterion_gap_bound_ordering();             // 4
CriterionResult criterion_eigenspace_optimality();          // 5
CriterionResult criterion_restricted_residuals();           // 6
CriterionResult criterion_whitened_trace_identities();      // 7
CriterionResult criterion_mixing_weight_brackets();         // 8
CriterionResult criterion_eigenvalue_clamp_range();         // 9
CriterionResult criterion_subspace_tracking();              // 10
CriterionResult criterion_polar_approximation();            // 11
CriterionResult criterion_descent_and_convergence();        // 12
CriterionResult criterion_measure_positivity();             // 13
CriterionResult criterion_memory_accounting();              // 14
CriterionResult criterion_run_determinism();                // 15
CriterionResult criterion_factor_spectrum_recovery();       // 16

struct SuiteResult {
  std::string suite;
  std::vector<CriterionResult> criteria;
  bool all_pass = false;
  double seconds = 0.0;
};

std::vector<std::string> suite_names();
std::vector<int> suite_criteria(const std::string& suite);
CriterionResult run_criterion(int id);
// Runs the suite's criteria, optionally fanned out over PROKLSH_THREADS
// worker threads; results are aggregated in criterion order either way.
SuiteResult run_suite(const std::string& suite);

json report_to_json(const SuiteResult& r);
// One line per criterion: "[PASS] 03 flat_tail_zero_gap (0.01s)".
std::string format_line(const CriterionResult& c);

}  // namespace proklsh::verify
