#include "ticklab/core.hpp"

#include <cmath>

namespace ticklab {

void PriceSeries::validate() const {
  if (q <= 0.0) throw Error("PriceSeries: tick-size must be positive");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].ticks <= 0)
      throw Error("PriceSeries '" + label + "': non-positive price at index " +
                  std::to_string(i));
    if (i > 0 && points[i].t <= points[i - 1].t)
      throw Error("PriceSeries '" + label +
                  "': time indices not strictly increasing at index " +
                  std::to_string(i));
  }
}

std::int64_t PriceSeries::grid_step() const {
  if (points.size() < 2) return 1;
  const std::int64_t step = points[1].t - points[0].t;
  for (std::size_t i = 2; i < points.size(); ++i)
    if (points[i].t - points[i - 1].t != step)
      throw Error("PriceSeries '" + label + "': irregular grid at index " +
                  std::to_string(i));
  return step;
}

std::vector<double> ReturnSeries::values() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.r());
  return out;
}

std::vector<std::int64_t> ReturnSeries::changes() const {
  std::vector<std::int64_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.n);
  return out;
}

std::vector<std::int64_t> ReturnSeries::start_prices() const {
  std::vector<std::int64_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.k);
  return out;
}

ReturnSeries build_returns(const PriceSeries& prices, std::int64_t dt,
                           bool overlapping) {
  if (dt < 1) throw Error("build_returns: dt must be >= 1");
  prices.validate();
  prices.grid_step();
  const auto n_points = static_cast<std::int64_t>(prices.points.size());
  if (n_points < dt + 1)
    throw Error("build_returns: series '" + prices.label +
                "' too short for dt=" + std::to_string(dt) + " (" +
                std::to_string(n_points) + " points)");

  ReturnSeries out;
  out.dt = dt;
  out.q = prices.q;
  out.label = prices.label;
  const std::int64_t stride = overlapping ? 1 : dt;
  out.entries.reserve(static_cast<std::size_t>((n_points - 1) / stride + 1));
  for (std::int64_t i = 0; i + dt < n_points; i += stride) {
    const PricePoint& a = prices.points[static_cast<std::size_t>(i)];
    const PricePoint& b = prices.points[static_cast<std::size_t>(i + dt)];
    out.entries.push_back({a.t, b.ticks - a.ticks, a.ticks});
  }
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) throw Error("mean: empty input");
  long double s = 0.0L;
  for (double x : v) s += x;
  return static_cast<double>(s / static_cast<long double>(v.size()));
}

double variance(std::span<const double> v) {
  const double m = mean(v);
  long double s = 0.0L;
  for (double x : v) {
    const long double d = x - m;
    s += d * d;
  }
  return static_cast<double>(s / static_cast<long double>(v.size()));
}

double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error("correlation: length mismatch");
  if (a.size() < 2) throw Error("correlation: need at least two samples");
  const double ma = mean(a);
  const double mb = mean(b);
  long double sab = 0.0L, saa = 0.0L, sbb = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double da = a[i] - ma;
    const long double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0L || sbb <= 0.0L)
    throw Error("correlation: degenerate (zero-variance) input");
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

Moments moments(std::span<const double> series) {
  if (series.empty()) throw Error("moments: empty input");
  Moments out;
  out.count = series.size();
  const double m = mean(series);
  long double m2 = 0.0L, m4 = 0.0L;
  for (double x : series) {
    const long double d = x - m;
    const long double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= static_cast<long double>(series.size());
  m4 /= static_cast<long double>(series.size());
  out.mean = m;
  out.variance = static_cast<double>(m2);
  out.excess_kurtosis =
      m2 > 0.0L ? static_cast<double>(m4 / (m2 * m2)) - 3.0 : -3.0;
  return out;
}

std::vector<double> normalize(std::span<const double> series) {
  if (series.size() < 2) throw Error("normalize: need at least two samples");
  const Moments m = moments(series);
  if (m.variance <= 0.0)
    throw Error("normalize: degenerate input (zero variance)");
  const double inv_sd = 1.0 / std::sqrt(m.variance);
  std::vector<double> out;
  out.reserve(series.size());
  for (double x : series) out.push_back((x - m.mean) * inv_sd);
  return out;
}

}  // namespace ticklab
