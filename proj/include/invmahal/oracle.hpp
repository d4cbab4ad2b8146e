#pragma once

// Ground-truth solvers for small problems. They share no code path with the
// production solver: kernels come from explicit outer products x x^T, the
// dual is solved by projected gradient ascent, and invariant problems are
// solved in explicit coordinates of the complement subspace.

#include <span>

#include "invmahal/core.hpp"

namespace invmahal::oracle {

inline constexpr std::size_t kMaxNegatives = 32;
inline constexpr std::size_t kMaxDimension = 8;

/// <phi(a), phi(b)> with phi(x) = x x^T, summed entrywise over d x d.
double outer_product_kernel(std::span<const double> a, std::span<const double> b);

/// Projected gradient ascent on the same dual as solve_dual, run until the
/// KKT violation is <= 1e-8 (converged == false if the iteration cap hits).
/// Throws ScaleExceeded above kMaxNegatives / kMaxDimension.
DualSolution oracle_solve(const ExemplarProblem& problem);

struct InvariantOracleResult {
  double objective = 0.0;
  RowMatrix matrix;        // d x d, mapped back to input coordinates
  std::size_t complement_dimension = 0;
};

/// Solves the invariant objective by building an orthonormal basis U of the
/// complement of span(tangents) (Householder QR), solving the plain problem
/// on coordinates U^T x~_i, and returning M = U M' U^T. Throws Infeasible
/// when every negative lies in x0 + span(tangents).
InvariantOracleResult invariant_oracle_solve(const ExemplarProblem& problem,
                                             std::span<const FeatureVector> tangents);

}  // namespace invmahal::oracle
