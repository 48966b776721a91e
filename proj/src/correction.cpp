#include "ticklab/correction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "ticklab/quadrature.hpp"

namespace ticklab {

namespace {

// Quadrature tolerance relative to the density peak, per cell of width q.
double cell_tol(const InterpolatedDensity& d, double q) {
  return 1e-10 * std::max(d.peak_hint(), 1e-30) * q;
}

struct CellMoments {
  double mass = 0.0;
  double first = 0.0;  // first moment about the cell center
};

CellMoments cell_moments(const InterpolatedDensity& density, double q,
                         std::int64_t n, ErrorModel model) {
  const double c = q * static_cast<double>(n);
  const double tol = cell_tol(density, q);
  CellMoments out;
  if (model == ErrorModel::Uniform) {
    const double l = c - 0.5 * q;
    const double u = c + 0.5 * q;
    out.mass = integrate([&](double z) { return density.evaluate(z); }, l, u,
                         tol);
    out.first = integrate(
        [&](double z) { return (z - c) * density.evaluate(z); }, l, u, tol);
  } else {
    const std::vector<double> knots = {c - q, c - 0.5 * q, c, c + 0.5 * q,
                                       c + q};
    out.mass = integrate_with_knots(
        [&](double z) {
          return density.evaluate(z) * triangular_density(z, c, q);
        },
        knots, tol);
    out.first = integrate_with_knots(
        [&](double z) {
          return (z - c) * density.evaluate(z) * triangular_density(z, c, q);
        },
        knots, tol);
  }
  return out;
}

double half_width(ErrorModel model, double q) {
  return model == ErrorModel::Uniform ? 0.5 * q : q;
}

std::pair<double, bool> compose_compensated(
    double raw_cov, double raw_var1, double raw_var2,
    const std::vector<TermEntry>& terms,
    std::string_view zeroed = {}) {
  double num = raw_cov;
  double den1 = raw_var1;
  double den2 = raw_var2;
  for (const TermEntry& t : terms) {
    const double v = (t.name == zeroed) ? 0.0 : t.value;
    switch (t.slot) {
      case TermSlot::Numerator:
        num += v;
        break;
      case TermSlot::Den1Var:
        den1 += v;
        break;
      case TermSlot::Den1Cov:
        den1 += 2.0 * v;
        break;
      case TermSlot::Den2Var:
        den2 += v;
        break;
      case TermSlot::Den2Cov:
        den2 += 2.0 * v;
        break;
    }
  }
  bool clamped = false;
  if (den1 <= 0.0 || den2 <= 0.0) {
    // noisy estimates emptied a variance; saturate instead of NaN
    clamped = true;
    return {num >= 0.0 ? 1.0 : -1.0, clamped};
  }
  double corr = num / std::sqrt(den1 * den2);
  if (corr > 1.0) {
    corr = 1.0;
    clamped = true;
  } else if (corr < -1.0) {
    corr = -1.0;
    clamped = true;
  }
  return {corr, clamped};
}

struct PairStats {
  double mean1 = 0.0, mean2 = 0.0;
  double var1 = 0.0, var2 = 0.0, cov = 0.0;
};

PairStats pair_stats(std::span<const double> a, std::span<const double> b) {
  PairStats s;
  s.mean1 = mean(a);
  s.mean2 = mean(b);
  long double c = 0.0L, v1 = 0.0L, v2 = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double da = a[i] - s.mean1;
    const long double db = b[i] - s.mean2;
    c += da * db;
    v1 += da * da;
    v2 += db * db;
  }
  const auto n = static_cast<long double>(a.size());
  s.cov = static_cast<double>(c / n);
  s.var1 = static_cast<double>(v1 / n);
  s.var2 = static_cast<double>(v2 / n);
  return s;
}

}  // namespace

std::optional<double> mean_error(std::int64_t n,
                                 const InterpolatedDensity& density, double q,
                                 ErrorModel model) {
  if (q <= 0.0) throw Error("mean_error: q must be positive");
  const CellMoments cm = cell_moments(density, q, n, model);
  if (!(cm.mass > 0.0) || !std::isfinite(cm.mass)) return std::nullopt;
  // guard against pure roundoff for vanishing cell mass
  if (cm.mass < 1e-14 * std::max(density.peak_hint(), 1e-30) * q)
    return std::nullopt;
  double theta = cm.first / cm.mass;
  const double hw = half_width(model, q);
  theta = std::clamp(theta, -hw, hw);
  return theta;
}

std::optional<double> mean_error_joint(std::int64_t n, std::int64_t m,
                                       const JointDensity& joint, double q1,
                                       double q2, ErrorModel model,
                                       int series) {
  if (joint.mode() == JointMode::Separable) {
    // the partner's factor cancels in the ratio
    return series == 1 ? mean_error(n, joint.marginal1(), q1, model)
                       : mean_error(m, joint.marginal2(), q2, model);
  }
  const double q = series == 1 ? q1 : q2;
  const std::int64_t cell = series == 1 ? n : m;
  const double other =
      series == 1 ? q2 * static_cast<double>(m) : q1 * static_cast<double>(n);
  const double c = q * static_cast<double>(cell);
  const double hw = half_width(model, q);

  auto slice = [&](double z) {
    const double rho =
        series == 1 ? joint.evaluate(z, other) : joint.evaluate(other, z);
    if (model == ErrorModel::Uniform) return rho;
    return rho * triangular_density(z, c, q);
  };
  std::vector<double> knots;
  for (double x : joint.x_knots())
    if (x > c - hw && x < c + hw) knots.push_back(x);
  knots.push_back(c - hw);
  knots.push_back(c + hw);
  if (model == ErrorModel::Triangular) knots.push_back(c);
  std::sort(knots.begin(), knots.end());

  const double tol = 1e-12;
  const double mass = integrate_with_knots(slice, knots, tol);
  if (!(mass > 1e-300) || !std::isfinite(mass)) return std::nullopt;
  const double first = integrate_with_knots(
      [&](double z) { return (z - c) * slice(z); }, knots, tol);
  return std::clamp(first / mass, -hw, hw);
}

double MeanErrorTable::at(std::int64_t n) const {
  const auto it = theta.find(n);
  return it == theta.end() ? 0.0 : it->second;
}

MeanErrorTable build_mean_error_table(const InterpolatedDensity& density,
                                      double q, ErrorModel model,
                                      std::int64_t n_min, std::int64_t n_max) {
  MeanErrorTable t;
  t.model = model;
  t.q = q;
  for (std::int64_t n = n_min; n <= n_max; ++n) {
    const auto v = mean_error(n, density, q, model);
    if (v) {
      t.theta[n] = *v;
    } else {
      t.theta[n] = 0.0;
      t.zero_mass_cells.push_back(n);
    }
  }
  return t;
}

double overall_mean_error(const MeanErrorTable& table,
                          const Histogram& counts) {
  if (counts.total == 0) return 0.0;
  long double s = 0.0L;
  for (const auto& [n, c] : counts.counts)
    s += static_cast<long double>(c) * table.at(n);
  return static_cast<double>(s / static_cast<long double>(counts.total));
}

CountTensors count_discretized_pair(std::span<const std::int64_t> x1,
                                    std::span<const std::int64_t> x2) {
  if (x1.size() != x2.size())
    throw Error("count_discretized_pair: length mismatch");
  CountTensors t;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    t.t_n.add(x1[i]);
    t.t_m.add(x2[i]);
    t.t_nm[{x1[i], x2[i]}]++;
  }
  t.total = x1.size();
  return t;
}

ReturnPairView synchronize(const ReturnSeries& a, const ReturnSeries& b) {
  ReturnPairView v;
  std::size_t i = 0, j = 0;
  while (i < a.entries.size() && j < b.entries.size()) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[j];
    if (ea.t < eb.t) {
      ++i;
      ++v.dropped;
    } else if (eb.t < ea.t) {
      ++j;
      ++v.dropped;
    } else {
      v.e1.push_back(ea);
      v.e2.push_back(eb);
      v.r1.push_back(ea.r());
      v.r2.push_back(eb.r());
      ++i;
      ++j;
    }
  }
  v.dropped += (a.entries.size() - i) + (b.entries.size() - j);
  return v;
}

namespace {

struct PriceBinner {
  int bins = 0;
  double log_lo = 0.0, scale = 0.0;
  std::vector<double> rep;

  void init(std::span<const ReturnEntry> entries, int n_bins) {
    bins = n_bins;
    double klo = std::numeric_limits<double>::max();
    double khi = 0.0;
    for (const auto& e : entries) {
      klo = std::min(klo, static_cast<double>(e.k));
      khi = std::max(khi, static_cast<double>(e.k));
    }
    log_lo = std::log(klo);
    const double span = std::max(std::log(khi) - log_lo, 1e-12);
    scale = static_cast<double>(bins) / (span * (1.0 + 1e-12));
    rep.resize(bins);
    for (int b = 0; b < bins; ++b)
      rep[b] = std::exp(log_lo + (b + 0.5) / scale);
  }

  std::int64_t bin(std::int64_t k) const {
    const double f = (std::log(static_cast<double>(k)) - log_lo) * scale;
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(f), 0, bins - 1);
  }
};

}  // namespace

CountTensors count_return_pair(const ReturnPairView& view, bool full,
                               int price_bins, std::size_t cell_budget) {
  CountTensors t;
  t.full = full;
  t.total = view.e1.size();
  PriceBinner bin1, bin2;
  if (full && price_bins > 0) {
    bin1.init(view.e1, price_bins);
    bin2.init(view.e2, price_bins);
    t.bin_price1 = bin1.rep;
    t.bin_price2 = bin2.rep;
  }
  for (std::size_t i = 0; i < view.e1.size(); ++i) {
    const auto& a = view.e1[i];
    const auto& b = view.e2[i];
    t.t_n.add(a.n);
    t.t_m.add(b.n);
    t.t_nm[{a.n, b.n}]++;
    t.t_nk1[{a.n, a.k}]++;
    t.t_nk2[{b.n, b.k}]++;
    if (full) {
      Key4 key;
      key.n = a.n;
      key.m = b.n;
      key.k = price_bins > 0 ? bin1.bin(a.k) : a.k;
      key.l = price_bins > 0 ? bin2.bin(b.k) : b.k;
      t.t_nmkl[key]++;
      if (t.t_nmkl.size() > cell_budget)
        throw Error(
            "count_return_pair: full-mode tensor exceeds the cell budget; "
            "use dominant mode or enable price binning");
    }
  }
  return t;
}

double CorrectionReport::term(std::string_view name) const {
  for (const TermEntry& t : terms)
    if (t.name == name) return t.value;
  throw Error("CorrectionReport: unknown term '" + std::string(name) + "'");
}

std::string CorrectionReport::to_json() const {
  nlohmann::json j;
  j["pair"] = pair;
  j["dt"] = dt;
  j["raw"] = raw;
  nlohmann::json jt = nlohmann::json::object();
  for (const TermEntry& t : terms) jt[t.name] = t.value;
  j["terms"] = jt;
  j["neglected"] = neglected;
  j["compensated"] = compensated;
  j["clamped"] = clamped;
  return j.dump();
}

CorrectionReport correction_terms_discretized(
    std::span<const std::int64_t> x1, std::span<const std::int64_t> x2,
    double q1, double q2, const InterpolatedDensity& rho1,
    const InterpolatedDensity& rho2, const JointDensity* joint,
    ErrorModel model) {
  if (x1.size() != x2.size())
    throw Error("correction_terms_discretized: length mismatch");
  if (x1.size() < 2)
    throw Error("correction_terms_discretized: need at least two pairs");

  std::vector<double> v1(x1.size()), v2(x2.size());
  for (std::size_t i = 0; i < x1.size(); ++i) {
    v1[i] = q1 * static_cast<double>(x1[i]);
    v2[i] = q2 * static_cast<double>(x2[i]);
  }
  const PairStats st = pair_stats(v1, v2);
  if (st.var1 <= 0.0 || st.var2 <= 0.0)
    throw Error("correction_terms_discretized: degenerate variance");

  const CountTensors counts = count_discretized_pair(x1, x2);
  const auto T = static_cast<double>(counts.total);

  const MeanErrorTable th1 = build_mean_error_table(
      rho1, q1, model, counts.t_n.n_min(), counts.t_n.n_max());
  const MeanErrorTable th2 = build_mean_error_table(
      rho2, q2, model, counts.t_m.n_min(), counts.t_m.n_max());
  const double mean_th1 = overall_mean_error(th1, counts.t_n);
  const double mean_th2 = overall_mean_error(th2, counts.t_m);

  // cache joint slice means per occupied (n, m)
  auto theta_nm = [&](std::int64_t n, std::int64_t m,
                      int series) -> double {
    if (joint == nullptr)
      return series == 1 ? th1.at(n) : th2.at(m);
    const auto v = mean_error_joint(n, m, *joint, q1, q2, model, series);
    if (v) return *v;
    return series == 1 ? th1.at(n) : th2.at(m);
  };

  long double s_x1_th2 = 0.0L, s_x2_th1 = 0.0L;
  for (const auto& [nm, c] : counts.t_nm) {
    const auto [n, m] = nm;
    const auto w = static_cast<long double>(c);
    s_x1_th2 += w * static_cast<double>(n) * theta_nm(n, m, 2);
    s_x2_th1 += w * static_cast<double>(m) * theta_nm(n, m, 1);
  }
  const double cov_x1_th2 =
      q1 * static_cast<double>(s_x1_th2 / T) - st.mean1 * mean_th2;
  const double cov_x2_th1 =
      q2 * static_cast<double>(s_x2_th1 / T) - st.mean2 * mean_th1;

  long double s_x1_th1 = 0.0L, s_x2_th2 = 0.0L;
  for (const auto& [n, c] : counts.t_n.counts)
    s_x1_th1 += static_cast<long double>(c) * static_cast<double>(n) *
                th1.at(n);
  for (const auto& [m, c] : counts.t_m.counts)
    s_x2_th2 += static_cast<long double>(c) * static_cast<double>(m) *
                th2.at(m);
  const double cov_x1_th1 =
      q1 * static_cast<double>(s_x1_th1 / T) - st.mean1 * mean_th1;
  const double cov_x2_th2 =
      q2 * static_cast<double>(s_x2_th2 / T) - st.mean2 * mean_th2;

  const double var_scale = model == ErrorModel::Uniform ? 1.0 / 12.0 : 1.0 / 6.0;

  CorrectionReport rep;
  rep.raw_cov = st.cov;
  rep.raw_var1 = st.var1;
  rep.raw_var2 = st.var2;
  rep.raw = st.cov / std::sqrt(st.var1 * st.var2);
  rep.terms = {
      {"cov_x1bar_theta2", cov_x1_th2, TermSlot::Numerator},
      {"cov_x2bar_theta1", cov_x2_th1, TermSlot::Numerator},
      {"cov_x1bar_theta1", cov_x1_th1, TermSlot::Den1Cov},
      {"cov_x2bar_theta2", cov_x2_th2, TermSlot::Den2Cov},
      {"var_theta1", var_scale * q1 * q1, TermSlot::Den1Var},
      {"var_theta2", var_scale * q2 * q2, TermSlot::Den2Var},
  };
  rep.neglected = {"cov_theta1_theta2"};
  const auto [comp, clamped] =
      compose_compensated(rep.raw_cov, rep.raw_var1, rep.raw_var2, rep.terms);
  rep.compensated = comp;
  rep.clamped = clamped;
  return rep;
}

CorrectionReport corrected_corr_price_changes(
    std::span<const std::int64_t> ds1, std::span<const std::int64_t> ds2,
    double q1, double q2, DensityKind kind) {
  const Histogram h1 = Histogram::from_cells(ds1, q1);
  const Histogram h2 = Histogram::from_cells(ds2, q2);
  const InterpolatedDensity rho1 = fit_triangular_residual(h1, kind);
  const InterpolatedDensity rho2 = fit_triangular_residual(h2, kind);
  return correction_terms_discretized(ds1, ds2, q1, q2, rho1, rho2, nullptr,
                                      ErrorModel::Triangular);
}

CorrectionReport corrected_corr_returns(const ReturnSeries& a,
                                        const ReturnSeries& b,
                                        const ReturnCorrectionOptions& opts) {
  const ReturnPairView view = synchronize(a, b);
  if (view.r1.size() < 2)
    throw Error("corrected_corr_returns: fewer than two synchronous pairs");

  const bool full = opts.term_set == TermSet::Full;
  const CountTensors counts =
      count_return_pair(view, full, opts.price_bins, opts.cell_budget);
  const auto T = static_cast<double>(counts.total);

  const PairStats st = pair_stats(view.r1, view.r2);
  if (st.var1 <= 0.0 || st.var2 <= 0.0)
    throw Error("corrected_corr_returns: degenerate variance");

  // Price-change densities in tick units; the tick-size cancels in n/k
  // returns so every term below is dimensionless.
  const Histogram& h1 = counts.t_n;
  const Histogram& h2 = counts.t_m;
  const InterpolatedDensity rho1 = fit_triangular_residual(h1, opts.density);
  const InterpolatedDensity rho2 = fit_triangular_residual(h2, opts.density);
  const MeanErrorTable th1 = build_mean_error_table(
      rho1, 1.0, ErrorModel::Triangular, h1.n_min(), h1.n_max());
  const MeanErrorTable th2 = build_mean_error_table(
      rho2, 1.0, ErrorModel::Triangular, h2.n_min(), h2.n_max());

  // <theta_i / S_i> and <1/S_i^2> over the (n, k) counts
  long double s_th_s1 = 0.0L, s_th_s2 = 0.0L;
  long double s_inv_k2_1 = 0.0L, s_inv_k2_2 = 0.0L;
  long double s_b1 = 0.0L, s_b2 = 0.0L;
  for (const auto& [nk, c] : counts.t_nk1) {
    const auto [n, k] = nk;
    const auto w = static_cast<long double>(c);
    const double kd = static_cast<double>(k);
    s_th_s1 += w * th1.at(n) / kd;
    s_inv_k2_1 += w / (kd * kd);
    s_b1 += w * static_cast<double>(n) / (kd * kd) * th1.at(n);
  }
  for (const auto& [nk, c] : counts.t_nk2) {
    const auto [n, k] = nk;
    const auto w = static_cast<long double>(c);
    const double kd = static_cast<double>(k);
    s_th_s2 += w * th2.at(n) / kd;
    s_inv_k2_2 += w / (kd * kd);
    s_b2 += w * static_cast<double>(n) / (kd * kd) * th2.at(n);
  }
  const double mean_th_s1 = static_cast<double>(s_th_s1 / T);
  const double mean_th_s2 = static_cast<double>(s_th_s2 / T);
  const double cov_ds1_th1 =
      static_cast<double>(s_b1 / T) - st.mean1 * mean_th_s1;
  const double cov_ds2_th2 =
      static_cast<double>(s_b2 / T) - st.mean2 * mean_th_s2;
  const double var_th1 = static_cast<double>(s_inv_k2_1 / T) / 6.0;
  const double var_th2 = static_cast<double>(s_inv_k2_2 / T) / 6.0;

  CorrectionReport rep;
  rep.pair = a.label + "|" + b.label;
  rep.dt = a.dt;
  rep.raw_cov = st.cov;
  rep.raw_var1 = st.var1;
  rep.raw_var2 = st.var2;
  rep.raw = st.cov / std::sqrt(st.var1 * st.var2);

  if (full) {
    std::optional<JointDensity> joint;
    if (opts.joint_mode == JointMode::Tabulated) {
      Histogram2D h12;
      h12.q1 = 1.0;
      h12.q2 = 1.0;
      for (const auto& [nm, c] : counts.t_nm)
        h12.add(nm.first, nm.second, c);
      joint = joint_density(h12, JointMode::Tabulated, opts.density,
                            ResidualKind::TriangularCell);
    }
    // cache conditional means per partner cell
    std::map<std::pair<std::int64_t, std::int64_t>, double> th2_nm, th1_nm;
    auto theta_cond = [&](std::int64_t n, std::int64_t m, int series) {
      if (!joint) return series == 1 ? th1.at(n) : th2.at(m);
      auto& cache = series == 1 ? th1_nm : th2_nm;
      const auto key = std::make_pair(n, m);
      const auto it = cache.find(key);
      if (it != cache.end()) return it->second;
      const auto v =
          mean_error_joint(n, m, *joint, 1.0, 1.0, ErrorModel::Triangular,
                           series);
      const double value = v ? *v : (series == 1 ? th1.at(n) : th2.at(m));
      cache.emplace(key, value);
      return value;
    };
    long double s_a1 = 0.0L, s_a2 = 0.0L;
    for (const auto& [key, c] : counts.t_nmkl) {
      const auto w = static_cast<long double>(c);
      const double k = counts.bin_price1.empty()
                           ? static_cast<double>(key.k)
                           : counts.bin_price1[static_cast<std::size_t>(key.k)];
      const double l = counts.bin_price2.empty()
                           ? static_cast<double>(key.l)
                           : counts.bin_price2[static_cast<std::size_t>(key.l)];
      s_a1 += w * (static_cast<double>(key.n) / k) *
              (theta_cond(key.n, key.m, 2) / l);
      s_a2 += w * (static_cast<double>(key.m) / l) *
              (theta_cond(key.n, key.m, 1) / k);
    }
    const double cov_ds1_th2 =
        static_cast<double>(s_a1 / T) - st.mean1 * mean_th_s2;
    const double cov_ds2_th1 =
        static_cast<double>(s_a2 / T) - st.mean2 * mean_th_s1;
    rep.terms.push_back(
        {"cov_ds1_s1_theta2_s2", cov_ds1_th2, TermSlot::Numerator});
    rep.terms.push_back(
        {"cov_ds2_s2_theta1_s1", cov_ds2_th1, TermSlot::Numerator});
  } else {
    rep.neglected.push_back("cov_ds1_s1_theta2_s2");
    rep.neglected.push_back("cov_ds2_s2_theta1_s1");
  }

  rep.terms.push_back({"cov_ds1_s1_theta1_s1", cov_ds1_th1, TermSlot::Den1Cov});
  rep.terms.push_back({"cov_ds2_s2_theta2_s2", cov_ds2_th2, TermSlot::Den2Cov});
  rep.terms.push_back({"var_theta1_s1", var_th1, TermSlot::Den1Var});
  rep.terms.push_back({"var_theta2_s2", var_th2, TermSlot::Den2Var});
  rep.neglected.push_back("cov_theta1_s1_theta2_s2");

  const auto [comp, clamped] =
      compose_compensated(rep.raw_cov, rep.raw_var1, rep.raw_var2, rep.terms);
  rep.compensated = comp;
  rep.clamped = clamped;
  return rep;
}

double term_impact(const CorrectionReport& report, std::string_view term_name) {
  report.term(term_name);  // validates the name
  const auto [without, clamped] = compose_compensated(
      report.raw_cov, report.raw_var1, report.raw_var2, report.terms,
      term_name);
  (void)clamped;
  return report.compensated - without;
}

}  // namespace ticklab
