#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ticklab/core.hpp"

namespace ticklab {

// Exact decimal: value = units * 10^-exponent. Quotes are never parsed
// through floating point.
struct Decimal {
  std::int64_t units = 0;
  int exponent = 0;

  double value() const;
};

Decimal parse_decimal(std::string_view s);

// Exact tick count of a decimal price on the q grid; throws when the price
// is not a multiple of q.
std::int64_t ticks_from_price(const Decimal& price, const Decimal& q);

// Canonical decimal rendering of ticks * q with q's number of decimals.
std::string format_price(std::int64_t ticks, const Decimal& q);

struct TickRow {
  std::int64_t timestamp = 0;  // seconds since session open
  std::int64_t ticks = 0;
};

// Parsed tick data. Sessions are delimited by a timestamp decrease (each
// session's clock restarts at its open).
struct TickFile {
  Decimal q;
  std::string q_literal;
  std::vector<std::vector<TickRow>> sessions;
};

TickFile load_ticks(const std::string& path, const std::string& q_decimal);
TickFile parse_ticks(std::istream& in, const std::string& q_decimal,
                     const std::string& origin);
void write_ticks(std::ostream& os, const TickFile& file);

// Cuts session `index` at `timestamp`: rows at or after it start a new
// session. Prices are never adjusted across the cut.
void split_session(TickFile& file, std::size_t index, std::int64_t timestamp);

// Previous-tick sampling on a regular grid of `step` seconds, one PriceSeries
// per session so no return can span a session boundary. Grid points before
// the first trade are dropped.
std::vector<PriceSeries> grid_prices(const TickFile& file, std::int64_t step);

// Returns from every session pooled into one series; entry times carry the
// session index in the high bits so synchronous pairing never crosses
// sessions.
ReturnSeries pooled_returns(const std::vector<PriceSeries>& sessions,
                            std::int64_t dt);

struct RunConfig {
  std::string command;

  // file inputs
  std::string a, b;
  std::string q = "0.01";
  std::int64_t step = 1;  // grid step, seconds
  std::vector<std::int64_t> dt = {60};
  std::string mode = "dominant";      // full | dominant
  std::string density = "gaussian";   // gaussian | powerlaw | tabulated
  std::string residual = "triangular";  // fit command: uniform | triangular
  std::string out = "out.csv";
  std::uint64_t seed = 1;
  int workers = 0;                    // 0 = TICKLAB_WORKERS or hardware
  std::vector<std::string> splits;    // "session:timestamp"

  // simulate
  double c = 0.4;
  double s0_1 = 1000.0, s0_2 = 1000.0;
  double sigma = 1e-3;
  std::int64_t steps = 1'000'000;
  std::int64_t benchmark_dt = 0;  // 0 = skip the mean-error table

  // tails
  std::string law = "gaussian";
  double ratio = 2.0;
  double sigma_ticks = 60.0;
  std::uint64_t samples = 1'000'000;

  // epps-curve
  std::int64_t normalize_dt = 0;  // 0 = no saturation normalization

  // Strict parse: unknown keys are rejected.
  static RunConfig from_json(const std::string& text);
};

int worker_count(int requested);

// Executes one command; writes artifacts and prints a one-line summary per
// job. Returns 0 on success, 1 if any job failed. Configuration errors
// throw.
int run(const RunConfig& config);

}  // namespace ticklab
