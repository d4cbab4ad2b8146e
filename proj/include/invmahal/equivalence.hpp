#pragma once

// Randomized production-vs-oracle checks on small problems. Each trial is a
// pure function of its seed, so a failing seed reproduces exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "invmahal/solver.hpp"

namespace invmahal {

struct EquivalenceTrial {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  bool hard_margin = true;
  std::size_t tangent_count = 0;     // 0: no invariant sub-check

  double objective_rel_error = 0.0;            // solve_dual vs oracle
  double invariant_objective_rel_error = 0.0;  // projected solve vs complement oracle
  double min_eigen_ratio = 0.0;      // min eigenvalue / trace, worst of the metrics
  std::size_t rank = 0;
  std::size_t support = 0;
  double invariance_ratio = 0.0;     // d(x0 + r) / (trace * |r|^2), worst tangent
  double worst_margin = 0.0;         // smallest d(x_i) over non-degenerate hard-margin negatives

  // Per-property verdicts; `failures` holds the messages.
  bool objective_ok = true;
  bool psd_ok = true;
  bool rank_ok = true;
  bool invariance_ok = true;
  bool margin_ok = true;

  std::vector<std::string> failures;
  bool ok() const noexcept { return failures.empty(); }
};

struct EquivalenceLimits {
  std::size_t max_negatives = 20;
  std::size_t max_dimension = 5;
  double objective_tolerance = 1e-4;   // relative
  double psd_tolerance = 1e-8;         // times trace
  double invariance_tolerance = 1e-8;  // times trace * |r|^2
  double margin_slack = 1e-5;
};

/// One random problem (hard or soft margin, optionally with random tangents)
/// checked against the oracle and the metric properties.
EquivalenceTrial run_equivalence_trial(std::uint64_t seed, const EquivalenceLimits& limits = {},
                                       const SolverConfig& cfg = {});

}  // namespace invmahal
