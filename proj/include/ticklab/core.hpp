#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ticklab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fit failure after the bounded iteration budget; carries the residual the
// optimizer got stuck at.
class FitError : public Error {
 public:
  FitError(const std::string& msg, double residual, int iterations)
      : Error(msg), residual(residual), iterations(iterations) {}
  double residual;
  int iterations;
};

struct PricePoint {
  std::int64_t t = 0;      // grid index
  std::int64_t ticks = 0;  // price as an integer multiple of q
};

// Price path on a regular time grid. Quotes are held exactly as integer tick
// counts; the tick-size q converts to currency.
struct PriceSeries {
  std::vector<PricePoint> points;
  double q = 1.0;  // currency per tick, > 0
  std::string label;

  void validate() const;           // monotone times, positive prices
  std::int64_t grid_step() const;  // uniform spacing; throws on irregular grid
};

struct ReturnEntry {
  std::int64_t t = 0;  // window start time
  std::int64_t n = 0;  // price change in ticks
  std::int64_t k = 0;  // start price in ticks
  double r() const { return static_cast<double>(n) / static_cast<double>(k); }
};

// Interval returns r = nq/(kq) = n/k; exact ratios of integers by
// construction.
struct ReturnSeries {
  std::int64_t dt = 1;  // window length in grid steps
  double q = 1.0;
  std::string label;
  std::vector<ReturnEntry> entries;

  std::vector<double> values() const;
  std::vector<std::int64_t> changes() const;       // n per entry
  std::vector<std::int64_t> start_prices() const;  // k per entry
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population
  // population excess kurtosis; zero-variance samples are assigned -3
  double excess_kurtosis = -3.0;
  std::size_t count = 0;
};

// Windowed integer returns. Non-overlapping windows by default; the
// overlapping variant is available behind the flag.
ReturnSeries build_returns(const PriceSeries& prices, std::int64_t dt,
                           bool overlapping = false);

// Affine map to zero mean and unit population variance.
std::vector<double> normalize(std::span<const double> series);

Moments moments(std::span<const double> series);

double mean(std::span<const double> v);
double variance(std::span<const double> v);  // population
double correlation(std::span<const double> a, std::span<const double> b);

}  // namespace ticklab
