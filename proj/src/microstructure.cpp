#include "ticklab/microstructure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace ticklab {

SubsetBounds subset_bounds(std::int64_t n, double q, double s_min,
                           double s_max) {
  if (q <= 0.0) throw Error("subset_bounds: q must be positive");
  if (s_min <= 0.0 || s_max < s_min)
    throw Error("subset_bounds: need 0 < s_min <= s_max");
  SubsetBounds b;
  b.n = n;
  const double nd = static_cast<double>(n);
  const double a = nd * q / s_max;
  const double c = nd * q / s_min;
  b.lo = std::min(a, c);
  b.hi = std::max(a, c);
  b.spacing = 0.5 * q * (1.0 / s_min - 1.0 / s_max);
  return b;
}

std::int64_t overlap_onset(double q, double s_min, double s_max) {
  if (s_min <= 0.0 || s_max <= s_min)
    throw Error("overlap_onset: need 0 < s_min < s_max");
  const double ratio = s_max / s_min;
  // I(n) and I(n+1) touch once (n+1)/n <= s_max/s_min
  auto intersects = [&](std::int64_t n) {
    return subset_bounds(n + 1, q, s_min, s_max).lo <=
           subset_bounds(n, q, s_min, s_max).hi * (1.0 + 1e-15);
  };
  auto candidate =
      static_cast<std::int64_t>(std::ceil(1.0 / (ratio - 1.0) - 1e-9));
  candidate = std::max<std::int64_t>(candidate, 1);
  while (!intersects(candidate)) ++candidate;
  while (candidate > 1 && intersects(candidate - 1)) --candidate;
  return candidate;
}

ReturnDecomposition decompose(const ReturnSeries& returns) {
  if (returns.entries.empty()) throw Error("decompose: empty return series");
  ReturnDecomposition dec;
  dec.q = returns.q;
  dec.k_min_global = std::numeric_limits<std::int64_t>::max();
  dec.k_max_global = 0;
  for (const ReturnEntry& e : returns.entries) {
    ReturnSubset& s = dec.subsets[e.n];
    if (s.returns.empty()) {
      s.n = e.n;
      s.k_min = s.k_max = e.k;
    } else {
      s.k_min = std::min(s.k_min, e.k);
      s.k_max = std::max(s.k_max, e.k);
    }
    s.returns.push_back(e.r());
    dec.k_min_global = std::min(dec.k_min_global, e.k);
    dec.k_max_global = std::max(dec.k_max_global, e.k);
  }
  dec.n_lower = dec.subsets.begin()->first;
  dec.n_upper = dec.subsets.rbegin()->first;
  return dec;
}

SubsetBounds ReturnDecomposition::exact_bounds(std::int64_t n) const {
  const auto it = subsets.find(n);
  if (it == subsets.end())
    throw Error("exact_bounds: no subset for n=" + std::to_string(n));
  return subset_bounds(n, q, q * static_cast<double>(it->second.k_min),
                       q * static_cast<double>(it->second.k_max));
}

SubsetBounds ReturnDecomposition::approximate_bounds(std::int64_t n) const {
  return subset_bounds(n, q, q * static_cast<double>(k_min_global),
                       q * static_cast<double>(k_max_global));
}

std::vector<KurtosisRatio> subset_kurtosis_profile(
    const ReturnDecomposition& dec) {
  std::vector<double> all;
  for (const auto& [n, s] : dec.subsets)
    all.insert(all.end(), s.returns.begin(), s.returns.end());
  const Moments overall = moments(all);
  if (overall.variance <= 0.0)
    throw Error("subset_kurtosis_profile: zero overall variance");

  std::vector<KurtosisRatio> out;
  out.reserve(dec.subsets.size());
  for (const auto& [n, s] : dec.subsets) {
    KurtosisRatio row;
    row.n = n;
    row.count = s.returns.size();
    if (s.returns.size() >= 4) {
      const double ks = moments(s.returns).excess_kurtosis;
      row.subset_excess = ks;
      row.ratio = ks / overall.excess_kurtosis;
    }
    out.push_back(row);
  }
  return out;
}

void write_decomposition_csv(std::ostream& os,
                             const ReturnDecomposition& dec) {
  const auto profile = subset_kurtosis_profile(dec);
  os << "n,count,r_min,r_max,exact_lo,exact_hi,approx_lo,approx_hi,spacing,"
        "kurtosis_ratio\n";
  std::size_t i = 0;
  for (const auto& [n, s] : dec.subsets) {
    const auto [rmin_it, rmax_it] =
        std::minmax_element(s.returns.begin(), s.returns.end());
    const SubsetBounds exact = dec.exact_bounds(n);
    const SubsetBounds approx = dec.approximate_bounds(n);
    os << n << ',' << s.returns.size() << ',' << *rmin_it << ',' << *rmax_it
       << ',' << exact.lo << ',' << exact.hi << ',' << approx.lo << ','
       << approx.hi << ',' << approx.spacing << ',';
    if (profile[i].ratio)
      os << *profile[i].ratio;
    else
      os << "nan";
    os << '\n';
    ++i;
  }
}

}  // namespace ticklab
