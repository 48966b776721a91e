#include "ticklab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ticklab/rng.hpp"

namespace ticklab {

void SimConfig::validate() const {
  if (c < 0.0 || c > 1.0) throw Error("SimConfig: c must be in [0, 1]");
  if (sigma_step <= 0.0) throw Error("SimConfig: sigma_step must be positive");
  if (s0_1 < 1.0 || s0_2 < 1.0)
    throw Error("SimConfig: starting prices must be at least one tick");
  if (q <= 0.0) throw Error("SimConfig: q must be positive");
  if (intervals.empty()) throw Error("SimConfig: empty interval list");
  for (std::int64_t dt : intervals)
    if (dt < 1 || dt > steps)
      throw Error("SimConfig: interval " + std::to_string(dt) +
                  " outside [1, steps]");
}

std::pair<std::vector<double>, std::vector<double>> noh_returns(
    double c, std::int64_t steps, std::uint64_t seed) {
  if (c < 0.0 || c > 1.0) throw Error("noh_returns: c must be in [0, 1]");
  if (steps < 1) throw Error("noh_returns: steps must be positive");
  Rng eta(seed, "noh/eta");
  Rng eps1(seed, "noh/eps", 1);
  Rng eps2(seed, "noh/eps", 2);
  const double wc = std::sqrt(c);
  const double we = std::sqrt(1.0 - c);
  std::vector<double> r1(static_cast<std::size_t>(steps));
  std::vector<double> r2(static_cast<std::size_t>(steps));
  for (std::size_t t = 0; t < r1.size(); ++t) {
    const double f = eta.normal();
    r1[t] = wc * f + we * eps1.normal();
    r2[t] = wc * f + we * eps2.normal();
  }
  return {std::move(r1), std::move(r2)};
}

std::vector<double> gbm_prices(std::span<const double> returns,
                               double sigma_step, double s0,
                               bool multiplicative) {
  if (s0 <= 0.0) throw Error("gbm_prices: s0 must be positive");
  if (sigma_step <= 0.0) throw Error("gbm_prices: sigma must be positive");
  std::vector<double> s(returns.size() + 1);
  s[0] = s0;
  if (multiplicative) {
    for (std::size_t t = 0; t < returns.size(); ++t) {
      s[t + 1] = s[t] * (1.0 + sigma_step * returns[t]);
      if (s[t + 1] <= 0.0)
        throw Error("gbm_prices: multiplicative path hit a non-positive price");
    }
  } else {
    const double drift = -0.5 * sigma_step * sigma_step;
    for (std::size_t t = 0; t < returns.size(); ++t)
      s[t + 1] = s[t] * std::exp(sigma_step * returns[t] + drift);
  }
  return s;
}

DiscretizedPrices discretize_prices(std::span<const double> prices, double q) {
  if (q <= 0.0) throw Error("discretize_prices: q must be positive");
  DiscretizedPrices out;
  out.series.q = q;
  out.series.points.reserve(prices.size());
  out.theta.reserve(prices.size());
  for (std::size_t t = 0; t < prices.size(); ++t) {
    auto ticks = static_cast<std::int64_t>(std::floor(prices[t] / q + 0.5));
    if (ticks < 1) {
      ticks = 1;
      ++out.clamped;
    }
    out.series.points.push_back({static_cast<std::int64_t>(t), ticks});
    out.theta.push_back(prices[t] - q * static_cast<double>(ticks));
  }
  return out;
}

namespace {

struct SimulatedPair {
  DiscretizedPrices d1, d2;
};

SimulatedPair simulate_pair(const SimConfig& cfg) {
  auto [ra, rb] = noh_returns(cfg.c, cfg.steps, cfg.seed);
  SimulatedPair out;
  {
    const auto p1 =
        gbm_prices(ra, cfg.sigma_step, cfg.s0_1, cfg.multiplicative_gbm);
    ra = std::vector<double>();
    out.d1 = discretize_prices(p1, cfg.q);
  }
  {
    const auto p2 =
        gbm_prices(rb, cfg.sigma_step, cfg.s0_2, cfg.multiplicative_gbm);
    rb = std::vector<double>();
    out.d2 = discretize_prices(p2, cfg.q);
  }
  out.d1.series.label = "sim1";
  out.d2.series.label = "sim2";
  return out;
}

}  // namespace

EppsCurve epps_experiment(const SimConfig& cfg) {
  cfg.validate();
  const SimulatedPair sim = simulate_pair(cfg);

  EppsCurve curve;
  curve.latent_c = cfg.c;
  curve.seed = cfg.seed;
  for (std::int64_t dt : cfg.intervals) {
    const ReturnSeries r1 = build_returns(sim.d1.series, dt);
    const ReturnSeries r2 = build_returns(sim.d2.series, dt);

    EppsPoint pt;
    pt.dt = dt;

    ReturnCorrectionOptions opts;
    opts.term_set = cfg.term_set;
    opts.density = DensityKind::Gaussian;
    const CorrectionReport rr = corrected_corr_returns(r1, r2, opts);
    pt.raw_return = rr.raw;
    pt.compensated_return = rr.compensated;

    const auto ds1 = r1.changes();
    const auto ds2 = r2.changes();
    const CorrectionReport rp = corrected_corr_price_changes(
        ds1, ds2, cfg.q, cfg.q, DensityKind::Gaussian);
    pt.raw_price_change = rp.raw;
    pt.compensated_price_change = rp.compensated;

    curve.points.push_back(pt);
  }
  return curve;
}

double MeanErrorBenchmark::rms(std::uint64_t min_count) const {
  long double ss = 0.0L;
  std::size_t used = 0;
  for (const auto& row : rows) {
    if (row.count < min_count) continue;
    const long double d = row.estimated - row.actual;
    ss += d * d;
    ++used;
  }
  if (used == 0) throw Error("MeanErrorBenchmark: no cells at this occupancy");
  return static_cast<double>(std::sqrt(ss / static_cast<long double>(used)));
}

MeanErrorBenchmark mean_error_benchmark(const SimConfig& cfg,
                                        std::int64_t dt) {
  cfg.validate();
  const SimulatedPair sim = simulate_pair(cfg);
  const ReturnSeries r1 = build_returns(sim.d1.series, dt);

  // ground truth: theta_dS(t) = theta(t + dt) - theta(t) per window
  std::map<std::int64_t, std::pair<std::uint64_t, long double>> actual;
  const std::int64_t stride = dt;
  const auto n_points = static_cast<std::int64_t>(sim.d1.series.points.size());
  for (std::int64_t i = 0; i + dt < n_points; i += stride) {
    const std::int64_t n = sim.d1.series.points[i + dt].ticks -
                           sim.d1.series.points[i].ticks;
    const double th = sim.d1.theta[i + dt] - sim.d1.theta[i];
    auto& cell = actual[n];
    cell.first++;
    cell.second += th;
  }

  const Histogram hist = Histogram::from_cells(r1.changes(), cfg.q);
  const InterpolatedDensity rho =
      fit_triangular_residual(hist, DensityKind::Gaussian);
  const MeanErrorTable table = build_mean_error_table(
      rho, cfg.q, ErrorModel::Triangular, hist.n_min(), hist.n_max());

  MeanErrorBenchmark bench;
  for (const auto& [n, cell] : actual) {
    MeanErrorBenchmarkRow row;
    row.n = n;
    row.count = cell.first;
    row.actual = static_cast<double>(cell.second /
                                     static_cast<long double>(cell.first));
    row.estimated = table.at(n);
    bench.rows.push_back(row);
  }
  return bench;
}

TailExperimentResult tail_experiment(const TailExperimentConfig& cfg) {
  if (cfg.s_min <= 0.0 || cfg.s_max <= cfg.s_min)
    throw Error("tail_experiment: need 0 < s_min < s_max");
  if (cfg.sigma <= 0.0 || cfg.q <= 0.0)
    throw Error("tail_experiment: sigma and q must be positive");
  if (cfg.samples < 2) throw Error("tail_experiment: too few samples");

  // Draw price changes, round to the tick grid.
  Rng change_rng(cfg.seed, "tails/changes");
  std::vector<std::int64_t> cells(cfg.samples);
  if (cfg.law == TailExperimentConfig::Law::Gaussian) {
    for (auto& n : cells)
      n = static_cast<std::int64_t>(
          std::floor(cfg.sigma * change_rng.normal() / cfg.q + 0.5));
  } else {
    // symmetric two-sided Pareto with the configured tail index
    const double alpha = cfg.powerlaw_tail_index;
    if (alpha <= 2.0)
      throw Error("tail_experiment: tail index must exceed 2 for finite "
                  "variance");
    const double x_m = cfg.sigma * std::sqrt((alpha - 2.0) / alpha);
    for (auto& n : cells) {
      const double u = change_rng.uniform();
      const double mag = x_m * std::pow(u, -1.0 / alpha);
      const double sign = change_rng.uniform() <= 0.5 ? -1.0 : 1.0;
      n = static_cast<std::int64_t>(std::floor(sign * mag / cfg.q + 0.5));
    }
  }

  // Prices are generated per subset of equal price change, uniform in ticks.
  const double k_lo = cfg.s_min / cfg.q;
  const double k_hi = cfg.s_max / cfg.q;
  std::map<std::int64_t, Rng> price_rng;
  std::vector<double> changes(cfg.samples), returns(cfg.samples);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const std::int64_t n = cells[i];
    auto it = price_rng.find(n);
    if (it == price_rng.end())
      it = price_rng
               .emplace(n, Rng(cfg.seed, "tails/prices",
                               static_cast<std::uint64_t>(n + (1LL << 32))))
               .first;
    const double k = it->second.uniform(k_lo, k_hi);
    changes[i] = static_cast<double>(n);  // tick units; normalization rescales
    returns[i] = static_cast<double>(n) / k;
  }

  const std::vector<double> ds_hat = normalize(changes);
  const std::vector<double> g = normalize(returns);

  TailExperimentResult res;
  res.price_change_excess_kurtosis = moments(ds_hat).excess_kurtosis;
  res.return_excess_kurtosis = moments(g).excess_kurtosis;

  // common grid over +-10 in normalized units; mass outside saturates into
  // the edge bins
  const double width = 0.1;
  const int half_bins = 100;
  const int bins = 2 * half_bins + 1;
  res.bin_centers.resize(bins);
  for (int b = 0; b < bins; ++b)
    res.bin_centers[b] = width * static_cast<double>(b - half_bins);
  res.price_change_mass.assign(bins, 0.0);
  res.return_mass.assign(bins, 0.0);
  auto deposit = [&](std::vector<double>& massv, double x) {
    auto b = static_cast<std::int64_t>(std::floor(x / width + 0.5)) + half_bins;
    b = std::clamp<std::int64_t>(b, 0, bins - 1);
    massv[static_cast<std::size_t>(b)] += 1.0 / static_cast<double>(cfg.samples);
  };
  for (double x : ds_hat) deposit(res.price_change_mass, x);
  for (double x : g) deposit(res.return_mass, x);
  return res;
}

double total_variation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("total_variation: length mismatch");
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * static_cast<double>(s);
}

}  // namespace ticklab
