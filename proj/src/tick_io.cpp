#include "ticklab/tick_io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ticklab/correction.hpp"
#include "ticklab/microstructure.hpp"
#include "ticklab/sim.hpp"

namespace ticklab {

namespace {

using int128 = __int128;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

double Decimal::value() const {
  return static_cast<double>(units) * std::pow(10.0, -exponent);
}

Decimal parse_decimal(std::string_view s) {
  s = trim(s);
  if (s.empty()) throw Error("parse_decimal: empty field");
  bool negative = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    negative = s[0] == '-';
    i = 1;
  }
  std::int64_t units = 0;
  int exponent = 0;
  bool seen_dot = false;
  bool seen_digit = false;
  int digits = 0;
  for (; i < s.size(); ++i) {
    const char ch = s[i];
    if (ch == '.') {
      if (seen_dot) throw Error("parse_decimal: malformed number '" +
                                std::string(s) + "'");
      seen_dot = true;
      continue;
    }
    if (ch < '0' || ch > '9')
      throw Error("parse_decimal: malformed number '" + std::string(s) + "'");
    if (++digits > 18)
      throw Error("parse_decimal: too many digits in '" + std::string(s) + "'");
    units = units * 10 + (ch - '0');
    if (seen_dot) ++exponent;
    seen_digit = true;
  }
  if (!seen_digit)
    throw Error("parse_decimal: malformed number '" + std::string(s) + "'");
  return {negative ? -units : units, exponent};
}

std::int64_t ticks_from_price(const Decimal& price, const Decimal& q) {
  if (q.units <= 0) throw Error("ticks_from_price: q must be positive");
  // ticks = price.units * 10^(q.exp - price.exp) / q.units, exactly
  const int d = q.exponent - price.exponent;
  int128 num = price.units;
  int128 den = q.units;
  if (d >= 0) {
    for (int i = 0; i < d; ++i) num *= 10;
  } else {
    for (int i = 0; i < -d; ++i) den *= 10;
  }
  if (num % den != 0)
    throw Error("price is not a multiple of the tick-size");
  const int128 t = num / den;
  return static_cast<std::int64_t>(t);
}

std::string format_price(std::int64_t ticks, const Decimal& q) {
  int128 total = static_cast<int128>(ticks) * q.units;
  const bool negative = total < 0;
  if (negative) total = -total;
  std::string digits;
  if (total == 0) digits = "0";
  while (total > 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(total % 10)));
    total /= 10;
  }
  std::reverse(digits.begin(), digits.end());
  const int exp = q.exponent;
  if (static_cast<int>(digits.size()) <= exp)
    digits.insert(0, static_cast<std::size_t>(exp + 1 - digits.size()), '0');
  std::string out = negative ? "-" : "";
  if (exp == 0) {
    out += digits;
  } else {
    out += digits.substr(0, digits.size() - exp);
    out += '.';
    out += digits.substr(digits.size() - exp);
  }
  return out;
}

TickFile parse_ticks(std::istream& in, const std::string& q_decimal,
                     const std::string& origin) {
  TickFile file;
  file.q_literal = q_decimal;
  file.q = parse_decimal(q_decimal);
  if (file.q.units <= 0) throw Error("load_ticks: q must be positive");

  std::string line;
  if (!std::getline(in, line))
    throw Error("load_ticks: " + origin + " is empty");
  {
    std::string_view header = trim(line);
    if (header != "timestamp,price")
      throw Error("load_ticks: " + origin +
                  ": expected header 'timestamp,price'");
  }

  std::vector<TickRow> session;
  std::size_t row_number = 1;
  bool any = false;
  while (std::getline(in, line)) {
    ++row_number;
    const std::string_view sv = trim(line);
    if (sv.empty()) continue;
    const std::size_t comma = sv.find(',');
    if (comma == std::string_view::npos)
      throw Error("load_ticks: " + origin + " row " +
                  std::to_string(row_number) + ": expected 'timestamp,price'");
    const std::string_view ts_field = trim(sv.substr(0, comma));
    const std::string_view px_field = trim(sv.substr(comma + 1));

    std::int64_t ts = 0;
    const auto [ptr, ec] =
        std::from_chars(ts_field.data(), ts_field.data() + ts_field.size(), ts);
    if (ec != std::errc() || ptr != ts_field.data() + ts_field.size())
      throw Error("load_ticks: " + origin + " row " +
                  std::to_string(row_number) + ": bad timestamp '" +
                  std::string(ts_field) + "'");
    if (ts < 0)
      throw Error("load_ticks: " + origin + " row " +
                  std::to_string(row_number) + ": negative timestamp");

    std::int64_t ticks = 0;
    try {
      ticks = ticks_from_price(parse_decimal(px_field), file.q);
    } catch (const Error& e) {
      throw Error("load_ticks: " + origin + " row " +
                  std::to_string(row_number) + ": " + e.what());
    }
    if (ticks <= 0)
      throw Error("load_ticks: " + origin + " row " +
                  std::to_string(row_number) + ": non-positive price");

    if (!session.empty() && ts < session.back().timestamp) {
      // clock restarted: a new session opens
      file.sessions.push_back(std::move(session));
      session = {};
    }
    session.push_back({ts, ticks});
    any = true;
  }
  if (!session.empty()) file.sessions.push_back(std::move(session));
  if (!any) throw Error("load_ticks: " + origin + " has no data rows");
  return file;
}

TickFile load_ticks(const std::string& path, const std::string& q_decimal) {
  std::ifstream in(path);
  if (!in) throw Error("load_ticks: cannot open '" + path + "'");
  return parse_ticks(in, q_decimal, path);
}

void write_ticks(std::ostream& os, const TickFile& file) {
  os << "timestamp,price\n";
  for (const auto& session : file.sessions)
    for (const TickRow& row : session)
      os << row.timestamp << ',' << format_price(row.ticks, file.q) << '\n';
}

void split_session(TickFile& file, std::size_t index, std::int64_t timestamp) {
  if (index >= file.sessions.size())
    throw Error("split_session: no session " + std::to_string(index));
  auto& session = file.sessions[index];
  const auto it = std::find_if(
      session.begin(), session.end(),
      [&](const TickRow& r) { return r.timestamp >= timestamp; });
  if (it == session.begin() || it == session.end()) return;  // nothing to cut
  std::vector<TickRow> tail(it, session.end());
  session.erase(it, session.end());
  file.sessions.insert(file.sessions.begin() + static_cast<std::ptrdiff_t>(index) + 1,
                       std::move(tail));
}

std::vector<PriceSeries> grid_prices(const TickFile& file, std::int64_t step) {
  if (step < 1) throw Error("grid_prices: step must be >= 1");
  std::vector<PriceSeries> out;
  for (std::size_t s = 0; s < file.sessions.size(); ++s) {
    const auto& session = file.sessions[s];
    if (session.empty()) continue;
    const std::int64_t first = session.front().timestamp;
    const std::int64_t last = session.back().timestamp;
    const std::int64_t g0 = (first + step - 1) / step * step;
    const std::int64_t g1 = (last + step - 1) / step * step;
    PriceSeries ps;
    ps.q = file.q.value();
    ps.label = "session" + std::to_string(s);
    std::size_t j = 0;
    std::int64_t current = session.front().ticks;
    for (std::int64_t t = g0; t <= g1; t += step) {
      while (j < session.size() && session[j].timestamp <= t) {
        current = session[j].ticks;
        ++j;
      }
      ps.points.push_back({t, current});
    }
    out.push_back(std::move(ps));
  }
  return out;
}

ReturnSeries pooled_returns(const std::vector<PriceSeries>& sessions,
                            std::int64_t dt) {
  ReturnSeries merged;
  merged.dt = dt;
  bool any = false;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    const auto n_points = static_cast<std::int64_t>(sessions[s].points.size());
    if (n_points < dt + 1) continue;  // session too short for this interval
    ReturnSeries rs = build_returns(sessions[s], dt);
    if (!any) {
      merged.q = rs.q;
      merged.label = rs.label;
      any = true;
    }
    for (ReturnEntry e : rs.entries) {
      e.t |= static_cast<std::int64_t>(s) << 40;
      merged.entries.push_back(e);
    }
  }
  if (!any)
    throw Error("pooled_returns: every session is too short for dt=" +
                std::to_string(dt));
  return merged;
}

namespace {

std::vector<std::int64_t> parse_i64_list(const nlohmann::json& j) {
  std::vector<std::int64_t> out;
  for (const auto& v : j) out.push_back(v.get<std::int64_t>());
  return out;
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  RunConfig rc;
  for (const auto& [key, value] : j.items()) {
    if (key == "command") rc.command = value.get<std::string>();
    else if (key == "a") rc.a = value.get<std::string>();
    else if (key == "b") rc.b = value.get<std::string>();
    else if (key == "q") rc.q = value.is_string() ? value.get<std::string>()
                                                  : value.dump();
    else if (key == "step") rc.step = value.get<std::int64_t>();
    else if (key == "dt") rc.dt = parse_i64_list(value);
    else if (key == "mode") rc.mode = value.get<std::string>();
    else if (key == "density") rc.density = value.get<std::string>();
    else if (key == "residual") rc.residual = value.get<std::string>();
    else if (key == "out") rc.out = value.get<std::string>();
    else if (key == "seed") rc.seed = value.get<std::uint64_t>();
    else if (key == "workers") rc.workers = value.get<int>();
    else if (key == "splits") rc.splits = value.get<std::vector<std::string>>();
    else if (key == "c") rc.c = value.get<double>();
    else if (key == "s0") {
      if (!value.is_array() || value.size() != 2)
        throw Error("config: s0 must be a pair");
      rc.s0_1 = value[0].get<double>();
      rc.s0_2 = value[1].get<double>();
    } else if (key == "sigma") rc.sigma = value.get<double>();
    else if (key == "steps") rc.steps = value.get<std::int64_t>();
    else if (key == "benchmark_dt") rc.benchmark_dt = value.get<std::int64_t>();
    else if (key == "law") rc.law = value.get<std::string>();
    else if (key == "ratio") rc.ratio = value.get<double>();
    else if (key == "sigma_ticks") rc.sigma_ticks = value.get<double>();
    else if (key == "samples") rc.samples = value.get<std::uint64_t>();
    else if (key == "normalize_dt") rc.normalize_dt = value.get<std::int64_t>();
    else throw Error("config: unknown key '" + key + "'");
  }
  if (rc.command.empty()) throw Error("config: missing 'command'");
  return rc;
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TICKLAB_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

std::mutex g_print_mutex;

void print_line(const std::string& line) {
  std::lock_guard<std::mutex> lock(g_print_mutex);
  std::cout << line << '\n';
}

// Independent jobs on a small worker pool; failures are counted, not fatal.
int run_jobs(const std::vector<std::function<void()>>& jobs, int workers) {
  std::atomic<std::size_t> next{0};
  std::atomic<int> failures{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        jobs[i]();
      } catch (const std::exception& e) {
        ++failures;
        print_line(std::string("FAILED: ") + e.what());
      }
    }
  };
  const int n = std::min<int>(workers, static_cast<int>(jobs.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return failures.load() > 0 ? 1 : 0;
}

void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

DensityKind parse_density(const std::string& s) {
  if (s == "gaussian") return DensityKind::Gaussian;
  if (s == "powerlaw") return DensityKind::PiecewisePowerLaw;
  if (s == "tabulated") return DensityKind::Tabulated;
  throw Error("unknown density '" + s + "'");
}

TermSet parse_mode(const std::string& s) {
  if (s == "full") return TermSet::Full;
  if (s == "dominant") return TermSet::Dominant;
  throw Error("unknown mode '" + s + "' (use full|dominant)");
}

TickFile load_with_splits(const RunConfig& rc, const std::string& path) {
  TickFile tf = load_ticks(path, rc.q);
  for (const std::string& spec : rc.splits) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos)
      throw Error("split '" + spec + "': expected session:timestamp");
    const auto session = static_cast<std::size_t>(
        std::stoll(spec.substr(0, colon)));
    const std::int64_t ts = std::stoll(spec.substr(colon + 1));
    split_session(tf, session, ts);
  }
  return tf;
}

int run_simulate(const RunConfig& rc) {
  SimConfig cfg;
  cfg.c = rc.c;
  cfg.steps = rc.steps;
  cfg.sigma_step = rc.sigma;
  cfg.s0_1 = rc.s0_1;
  cfg.s0_2 = rc.s0_2;
  cfg.seed = rc.seed;
  cfg.intervals = rc.dt;
  cfg.term_set = parse_mode(rc.mode);
  const EppsCurve curve = epps_experiment(cfg);

  ensure_parent_dir(rc.out);
  std::ofstream os(rc.out);
  if (!os) throw Error("cannot write '" + rc.out + "'");
  os << "dt,raw,compensated,raw_price_change,compensated_price_change,"
        "ground_truth_c,seed\n";
  for (const EppsPoint& p : curve.points)
    os << p.dt << ',' << p.raw_return << ',' << p.compensated_return << ','
       << p.raw_price_change << ',' << p.compensated_price_change << ','
       << curve.latent_c << ',' << curve.seed << '\n';
  print_line("simulate c=" + std::to_string(rc.c) + " seed=" +
             std::to_string(rc.seed) + ": wrote " + rc.out + " (" +
             std::to_string(curve.points.size()) + " intervals)");

  if (rc.benchmark_dt > 0) {
    const MeanErrorBenchmark bench = mean_error_benchmark(cfg, rc.benchmark_dt);
    const std::string path = rc.out + ".theta.csv";
    std::ofstream bos(path);
    bos << "n,count,actual,estimated\n";
    for (const auto& row : bench.rows)
      bos << row.n << ',' << row.count << ',' << row.actual << ','
          << row.estimated << '\n';
    print_line("simulate: wrote " + path);
  }
  return 0;
}

int run_tails(const RunConfig& rc) {
  TailExperimentConfig cfg;
  cfg.law = rc.law == "powerlaw" ? TailExperimentConfig::Law::PowerLaw
                                 : TailExperimentConfig::Law::Gaussian;
  if (rc.law != "gaussian" && rc.law != "powerlaw")
    throw Error("unknown law '" + rc.law + "'");
  const Decimal q = parse_decimal(rc.q);
  cfg.q = q.value();
  cfg.sigma = rc.sigma_ticks * cfg.q;
  cfg.s_min = 1000.0 * cfg.q;
  cfg.s_max = cfg.s_min * rc.ratio;
  cfg.samples = rc.samples;
  cfg.seed = rc.seed;
  const TailExperimentResult res = tail_experiment(cfg);

  ensure_parent_dir(rc.out);
  std::ofstream os(rc.out);
  if (!os) throw Error("cannot write '" + rc.out + "'");
  os << "bin_center,price_change_mass,return_mass\n";
  for (std::size_t i = 0; i < res.bin_centers.size(); ++i)
    os << res.bin_centers[i] << ',' << res.price_change_mass[i] << ','
       << res.return_mass[i] << '\n';
  std::ostringstream summary;
  summary << "tails law=" << rc.law << " ratio=" << rc.ratio
          << ": kurt(price_change)=" << res.price_change_excess_kurtosis
          << " kurt(return)=" << res.return_excess_kurtosis << " -> " << rc.out;
  print_line(summary.str());
  return 0;
}

int run_microstructure(const RunConfig& rc) {
  if (rc.a.empty()) throw Error("microstructure: --a is required");
  const TickFile tf = load_with_splits(rc, rc.a);
  const auto sessions = grid_prices(tf, rc.step);
  const ReturnSeries returns = pooled_returns(sessions, rc.dt.at(0));
  const ReturnDecomposition dec = decompose(returns);

  ensure_parent_dir(rc.out);
  std::ofstream os(rc.out);
  if (!os) throw Error("cannot write '" + rc.out + "'");
  write_decomposition_csv(os, dec);
  print_line("microstructure a=" + rc.a + " dt=" + std::to_string(rc.dt[0]) +
             ": " + std::to_string(dec.subsets.size()) + " subsets -> " +
             rc.out);
  return 0;
}

int run_fit(const RunConfig& rc) {
  if (rc.a.empty()) throw Error("fit: --a is required");
  const TickFile tf = load_with_splits(rc, rc.a);
  const auto sessions = grid_prices(tf, rc.step);
  const ReturnSeries returns = pooled_returns(sessions, rc.dt.at(0));

  Histogram hist;
  hist.q = tf.q.value();
  for (const ReturnEntry& e : returns.entries) hist.add(e.n);

  const DensityKind kind = parse_density(rc.density);
  InterpolatedDensity density;
  if (rc.residual == "uniform")
    density = fit_uniform_residual(hist, kind);
  else if (rc.residual == "triangular")
    density = fit_triangular_residual(hist, kind);
  else
    throw Error("unknown residual '" + rc.residual + "'");

  ensure_parent_dir(rc.out);
  std::ofstream os(rc.out);
  if (!os) throw Error("cannot write '" + rc.out + "'");
  os << density.to_json() << '\n';
  std::ostringstream summary;
  summary << "fit a=" << rc.a << " dt=" << rc.dt[0] << " density="
          << rc.density << " residual=" << rc.residual
          << " cells=" << hist.occupied() << " -> " << rc.out;
  print_line(summary.str());
  return 0;
}

struct PairJobData {
  std::vector<PriceSeries> sessions_a, sessions_b;
  std::string label;
};

PairJobData load_pair(const RunConfig& rc) {
  if (rc.a.empty() || rc.b.empty())
    throw Error(rc.command + ": --a and --b are required");
  const TickFile ta = load_with_splits(rc, rc.a);
  const TickFile tb = load_with_splits(rc, rc.b);
  if (ta.sessions.size() != tb.sessions.size())
    throw Error(rc.command + ": session count mismatch (" +
                std::to_string(ta.sessions.size()) + " vs " +
                std::to_string(tb.sessions.size()) + ")");
  PairJobData data;
  data.sessions_a = grid_prices(ta, rc.step);
  data.sessions_b = grid_prices(tb, rc.step);
  data.label = std::filesystem::path(rc.a).stem().string() + "|" +
               std::filesystem::path(rc.b).stem().string();
  return data;
}

CorrectionReport compensate_one(const PairJobData& data, const RunConfig& rc,
                                std::int64_t dt) {
  ReturnSeries ra = pooled_returns(data.sessions_a, dt);
  ReturnSeries rb = pooled_returns(data.sessions_b, dt);
  ReturnCorrectionOptions opts;
  opts.term_set = parse_mode(rc.mode);
  opts.density = parse_density(rc.density);
  CorrectionReport rep = corrected_corr_returns(ra, rb, opts);
  rep.pair = data.label;
  rep.dt = dt;
  return rep;
}

int run_compensate(const RunConfig& rc) {
  const PairJobData data = load_pair(rc);
  std::filesystem::create_directories(rc.out);

  std::vector<std::function<void()>> jobs;
  for (const std::int64_t dt : rc.dt) {
    jobs.push_back([&, dt] {
      const CorrectionReport rep = compensate_one(data, rc, dt);
      const std::string path =
          (std::filesystem::path(rc.out) /
           ("compensate_dt" + std::to_string(dt) + ".json"))
              .string();
      std::ofstream os(path);
      if (!os) throw Error("cannot write '" + path + "'");
      os << rep.to_json() << '\n';
      std::ostringstream line;
      line << "compensate " << rep.pair << " dt=" << dt << ": raw=" << rep.raw
           << " compensated=" << rep.compensated << " -> " << path;
      print_line(line.str());
    });
  }
  return run_jobs(jobs, worker_count(rc.workers));
}

int run_epps_curve(const RunConfig& rc) {
  const PairJobData data = load_pair(rc);

  std::vector<CorrectionReport> reports(rc.dt.size());
  std::vector<std::function<void()>> jobs;
  for (std::size_t i = 0; i < rc.dt.size(); ++i) {
    jobs.push_back([&, i] {
      reports[i] = compensate_one(data, rc, rc.dt[i]);
      std::ostringstream line;
      line << "epps-curve " << reports[i].pair << " dt=" << rc.dt[i]
           << ": raw=" << reports[i].raw
           << " compensated=" << reports[i].compensated;
      print_line(line.str());
    });
  }
  const int status = run_jobs(jobs, worker_count(rc.workers));
  if (status != 0) return status;

  double raw_ref = 1.0, comp_ref = 1.0;
  if (rc.normalize_dt > 0) {
    bool found = false;
    for (std::size_t i = 0; i < rc.dt.size(); ++i)
      if (rc.dt[i] == rc.normalize_dt) {
        raw_ref = reports[i].raw;
        comp_ref = reports[i].compensated;
        found = true;
      }
    if (!found)
      throw Error("epps-curve: normalize_dt must be one of the dt values");
  }

  ensure_parent_dir(rc.out);
  std::ofstream os(rc.out);
  if (!os) throw Error("cannot write '" + rc.out + "'");
  os << "dt,raw,compensated";
  if (rc.normalize_dt > 0) os << ",raw_normalized,compensated_normalized";
  os << '\n';
  for (std::size_t i = 0; i < rc.dt.size(); ++i) {
    os << rc.dt[i] << ',' << reports[i].raw << ',' << reports[i].compensated;
    if (rc.normalize_dt > 0)
      os << ',' << reports[i].raw / raw_ref << ','
         << reports[i].compensated / comp_ref;
    os << '\n';
  }
  print_line("epps-curve: wrote " + rc.out);
  return 0;
}

}  // namespace

int run(const RunConfig& config) {
  if (config.command == "simulate") return run_simulate(config);
  if (config.command == "tails") return run_tails(config);
  if (config.command == "microstructure") return run_microstructure(config);
  if (config.command == "fit") return run_fit(config);
  if (config.command == "compensate") return run_compensate(config);
  if (config.command == "epps-curve") return run_epps_curve(config);
  throw Error("unknown command '" + config.command + "'");
}

}  // namespace ticklab
