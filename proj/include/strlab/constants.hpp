#pragma once

namespace strlab {

// Probability-scale tolerance: row sums, distribution checks.
inline constexpr double kProbTol = 1e-9;
// Performance-scale tolerance: returns, Q values, bound slacks.
inline constexpr double kPerfTol = 1e-6;
// An iteration counts as a strict improvement when max Q increase exceeds this.
inline constexpr double kStrictImprovementTol = 1e-8;
// Occupancy sums are truncated once gamma^t falls below this.
inline constexpr double kOccupancyTailMass = 1e-10;
// Relative tolerance of the one-dimensional dual minimization.
inline constexpr double kDefaultDualTol = 1e-10;
// Direct linear solve below this many state-action pairs, contraction above.
inline constexpr int kDirectSolveLimit = 10000;

}  // namespace strlab
