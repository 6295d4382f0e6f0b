#pragma once

#include <span>
#include <vector>

namespace macfx::util {

/// Linear-interpolation quantile (R type 7). Throws StructuralError on an
/// empty sample or q outside [0, 1].
double quantile_type7(std::vector<double> values, double q);

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> xs);

/// Ranks starting at 1 with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> xs);

}  // namespace macfx::util
