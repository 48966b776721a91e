#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ticklab/core.hpp"
#include "ticklab/correction.hpp"

namespace ticklab {

// Correlated-market simulation setup: one-factor latent returns, a geometric
// Brownian price path per asset, integer tick rounding.
struct SimConfig {
  double c = 0.4;                 // latent correlation
  std::int64_t steps = 1'000'000; // path length (paper preset: 7'200'000)
  double sigma_step = 1e-3;       // per-step relative volatility
  double s0_1 = 1000.0;           // starting prices, tick units
  double s0_2 = 1000.0;
  double q = 1.0;                 // tick-size of the integer grid
  std::uint64_t seed = 1;
  std::vector<std::int64_t> intervals = {60, 120, 300, 600, 1200, 1800};
  bool multiplicative_gbm = false;  // sensitivity variant S(1 + sigma r)
  TermSet term_set = TermSet::Dominant;

  void validate() const;
};

// One-factor correlated standard-normal pairs, deterministic per seed.
std::pair<std::vector<double>, std::vector<double>> noh_returns(
    double c, std::int64_t steps, std::uint64_t seed);

// Zero-drift geometric Brownian path: S exp(sigma r - sigma^2/2) keeps the
// price a positive martingale. The multiplicative variant S(1 + sigma r) is
// available for sensitivity checks.
std::vector<double> gbm_prices(std::span<const double> returns,
                               double sigma_step, double s0,
                               bool multiplicative = false);

struct DiscretizedPrices {
  PriceSeries series;
  std::vector<double> theta;  // ground-truth errors S - S_rounded, currency
  std::int64_t clamped = 0;   // prices below q/2 lifted to one tick
};

// Round-half-up to the tick grid, retaining the true rounding errors.
DiscretizedPrices discretize_prices(std::span<const double> prices,
                                    double q = 1.0);

struct EppsPoint {
  std::int64_t dt = 0;
  double raw_return = 0.0;
  double compensated_return = 0.0;
  double raw_price_change = 0.0;
  double compensated_price_change = 0.0;
};

struct EppsCurve {
  double latent_c = 0.0;
  std::uint64_t seed = 0;
  std::vector<EppsPoint> points;
};

// Correlation vs return interval for one simulated pair, raw and compensated
// (Gaussian density mode).
EppsCurve epps_experiment(const SimConfig& cfg);

struct MeanErrorBenchmarkRow {
  std::int64_t n = 0;
  std::uint64_t count = 0;
  double actual = 0.0;     // mean ground-truth error in the cell
  double estimated = 0.0;  // density-based estimate
};

struct MeanErrorBenchmark {
  std::vector<MeanErrorBenchmarkRow> rows;
  double rms(std::uint64_t min_count) const;
};

// Estimated vs actual conditional mean errors of the price changes at one
// interval; the simulator's retained theta path is the ground truth.
MeanErrorBenchmark mean_error_benchmark(const SimConfig& cfg, std::int64_t dt);

struct TailExperimentConfig {
  enum class Law { Gaussian, PowerLaw };
  Law law = Law::Gaussian;
  double q = 1.0;
  double sigma = 60.0;        // price-change scale, currency (60 ticks)
  double s_min = 1000.0;      // price range, currency
  double s_max = 2000.0;
  std::size_t samples = 1'000'000;
  double powerlaw_tail_index = 3.0;
  std::uint64_t seed = 1;
};

struct TailExperimentResult {
  std::vector<double> bin_centers;        // normalized units
  std::vector<double> price_change_mass;  // discretized price changes
  std::vector<double> return_mass;        // synthesized returns
  double price_change_excess_kurtosis = 0.0;
  double return_excess_kurtosis = 0.0;
};

// Discrete price changes divided by per-subset uniform prices; both m
// normalized to zero mean and unit variance and binned on a common grid.
TailExperimentResult tail_experiment(const TailExperimentConfig& cfg);

double total_variation(std::span<const double> a, std::span<const double> b);

}  // namespace ticklab
