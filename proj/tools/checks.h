#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ckan::cli {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Check {
  std::string name;
  std::vector<std::string> tags;
  std::function<CheckResult()> run;
};

// Reference-oracle checks run by `selftest` and the acceptance binary.
const std::vector<Check>& self_checks();

// Checks whose name or tags contain `filter` (all when empty).
std::vector<CheckResult> run_checks(const std::string& filter);

// Individual checks.
CheckResult check_conv_equivalence(std::size_t configs = 24);
CheckResult check_unfold_gather();
CheckResult check_fold_order();
CheckResult check_chunk_invariance();
CheckResult check_spline_properties();
CheckResult check_kan_layer();
CheckResult check_metric_oracles();

// One entry per parameter class; `class_name` is one of grad_classes().
std::vector<std::string> grad_classes();
CheckResult check_gradient_class(const std::string& class_name);

}  // namespace ckan::cli
