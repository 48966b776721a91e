#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

#include "ticklab/core.hpp"

namespace ticklab {

// Interval of returns built on the price change of n ticks, and the spacing
// between neighboring interval centers.
struct SubsetBounds {
  std::int64_t n = 0;
  double lo = 0.0;
  double hi = 0.0;
  double spacing = 0.0;  // d, from the same price extrema as the interval
};

// Bounds of the return subset for price change n given the price extrema (in
// currency units).
SubsetBounds subset_bounds(std::int64_t n, double q, double s_min,
                           double s_max);

// Smallest n > 0 whose interval intersects the next one; touching counts.
std::int64_t overlap_onset(double q, double s_min, double s_max);

struct ReturnSubset {
  std::int64_t n = 0;
  std::vector<double> returns;
  std::int64_t k_min = 0, k_max = 0;  // observed start prices, ticks
};

// The return set split by price change; subsets are disjoint and cover the
// input by construction.
struct ReturnDecomposition {
  double q = 1.0;
  std::map<std::int64_t, ReturnSubset> subsets;
  std::int64_t n_lower = 0, n_upper = 0;        // N-, N+
  std::int64_t k_min_global = 0, k_max_global = 0;

  // Eq-form bounds with the subset's own price extrema (exact) or the global
  // extrema (the small-|n| shortcut).
  SubsetBounds exact_bounds(std::int64_t n) const;
  SubsetBounds approximate_bounds(std::int64_t n) const;
};

ReturnDecomposition decompose(const ReturnSeries& returns);

struct KurtosisRatio {
  std::int64_t n = 0;
  std::size_t count = 0;
  // kurt(R^(n)) / kurt(R), excess convention; empty when the subset has
  // fewer than 4 points
  std::optional<double> ratio;
  std::optional<double> subset_excess;
};

// Per-subset excess kurtosis relative to the full return set. Requires the
// overall variance to be positive.
std::vector<KurtosisRatio> subset_kurtosis_profile(
    const ReturnDecomposition& dec);

// CSV rows: n,count,r_min,r_max,exact_lo,exact_hi,approx_lo,approx_hi,
// spacing,kurtosis_ratio
void write_decomposition_csv(std::ostream& os, const ReturnDecomposition& dec);

}  // namespace ticklab
