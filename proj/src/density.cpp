#include "ticklab/density.hpp"

#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <nlohmann/json.hpp>

#include "ticklab/quadrature.hpp"

namespace ticklab {

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double norm_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }
double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

// ∫_l^u N(z; mu, sigma) dz
double gauss_mass(double mu, double sigma, double l, double u) {
  return norm_cdf((u - mu) / sigma) - norm_cdf((l - mu) / sigma);
}

// ∫_l^u (alpha*z + beta) N(z; mu, sigma) dz
double gauss_linear(double mu, double sigma, double alpha, double beta,
                    double l, double u) {
  const double a = (l - mu) / sigma;
  const double b = (u - mu) / sigma;
  const double i0 = norm_cdf(b) - norm_cdf(a);
  const double i1 = mu * i0 + sigma * (norm_pdf(a) - norm_pdf(b));
  return alpha * i1 + beta * i0;
}

// Model mass of cell n for a Gaussian under the plain rounding window.
double gauss_cell_mass_uniform(double mu, double sigma, double q,
                               std::int64_t n) {
  const double c = q * static_cast<double>(n);
  return gauss_mass(mu, sigma, c - 0.5 * q, c + 0.5 * q);
}

// Model mass of cell n when the observation is a difference of two roundings:
// triangular-weighted mass over [q(n-1), q(n+1)].
double gauss_cell_mass_triangular(double mu, double sigma, double q,
                                  std::int64_t n) {
  const double c = q * static_cast<double>(n);
  const double left =
      gauss_linear(mu, sigma, 1.0, -(c - q), c - q, c);
  const double right =
      gauss_linear(mu, sigma, -1.0, c + q, c, c + q);
  return (left + right) / q;
}

double gauss_cell_mass(double mu, double sigma, double q, std::int64_t n,
                       ResidualKind rk) {
  return rk == ResidualKind::UniformCell
             ? gauss_cell_mass_uniform(mu, sigma, q, n)
             : gauss_cell_mass_triangular(mu, sigma, q, n);
}

// ∫_l^u x^p dx for 0 < l < u, log form near p = -1
double pow_int(double p, double l, double u) {
  if (std::abs(p + 1.0) < 1e-9) return std::log(u / l);
  return (std::pow(u, p + 1.0) - std::pow(l, p + 1.0)) / (p + 1.0);
}

// Unit-amplitude model mass of cell w for rho(x) = |x|^(-b). Positive and
// negative cells mirror onto |w|.
double plaw_cell_mass(double q, std::int64_t w, double b, ResidualKind rk) {
  const double aw = static_cast<double>(std::llabs(w));
  if (rk == ResidualKind::UniformCell) {
    const double l = q * (aw - 0.5);
    const double u = q * (aw + 0.5);
    if (l <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return pow_int(-b, l, u);
  }
  const double l = q * (aw - 1.0);
  const double c = q * aw;
  const double u = q * (aw + 1.0);
  if (l <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double left = pow_int(1.0 - b, l, c) - l * pow_int(-b, l, c);
  const double right = u * pow_int(-b, c, u) - pow_int(1.0 - b, c, u);
  return (left + right) / q;
}

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

double simplex_trampoline(const gsl_vector* v, void* params) {
  const auto& fn =
      *static_cast<const std::function<double(const double*)>*>(params);
  const double f = fn(v->data);
  return std::isfinite(f) ? f : 1e300;
}

SimplexResult nelder_mead(const std::function<double(const double*)>& fn,
                          std::vector<double> x0, std::vector<double> steps,
                          int max_iter, double size_tol) {
  const std::size_t dim = x0.size();
  gsl_multimin_function f;
  f.n = dim;
  f.f = &simplex_trampoline;
  f.params = const_cast<std::function<double(const double*)>*>(&fn);

  gsl_vector* x = gsl_vector_alloc(dim);
  gsl_vector* s = gsl_vector_alloc(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    gsl_vector_set(x, i, x0[i]);
    gsl_vector_set(s, i, steps[i]);
  }
  gsl_multimin_fminimizer* m =
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);
  gsl_multimin_fminimizer_set(m, &f, x, s);

  SimplexResult out;
  int iter = 0;
  int status = GSL_CONTINUE;
  while (status == GSL_CONTINUE && iter < max_iter) {
    ++iter;
    if (gsl_multimin_fminimizer_iterate(m) != 0) break;
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(m), size_tol);
  }
  out.x.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) out.x[i] = gsl_vector_get(m->x, i);
  out.value = m->fval;
  out.iterations = iter;
  out.converged = (status == GSL_SUCCESS);

  gsl_multimin_fminimizer_free(m);
  gsl_vector_free(x);
  gsl_vector_free(s);
  return out;
}

struct GaussianFitResult {
  double mu = 0.0;
  double sigma = 1.0;
  double residual = 0.0;
  int iterations = 0;
};

// Least-squares Gaussian against observed cell frequencies over the given
// cell range.
GaussianFitResult fit_gaussian_cells(const Histogram& hist, std::int64_t lo,
                                     std::int64_t hi, ResidualKind rk,
                                     std::size_t min_occupied) {
  std::size_t occupied = 0;
  for (std::int64_t n = lo; n <= hi; ++n)
    if (hist.mass(n) > 0.0) ++occupied;
  if (occupied < min_occupied)
    throw FitError("gaussian fit: needs at least " +
                       std::to_string(min_occupied) + " occupied cells, got " +
                       std::to_string(occupied),
                   0.0, 0);

  const double q = hist.q;
  long double msum = 0.0L, m1 = 0.0L, m2 = 0.0L;
  for (std::int64_t n = lo; n <= hi; ++n) {
    const double p = hist.mass(n);
    const double v = q * static_cast<double>(n);
    msum += p;
    m1 += p * v;
    m2 += p * v * v;
  }
  const double mu0 = msum > 0 ? static_cast<double>(m1 / msum) : 0.0;
  const double var0 =
      msum > 0 ? static_cast<double>(m2 / msum) - mu0 * mu0 : q * q;
  const double sheppard =
      rk == ResidualKind::UniformCell ? q * q / 12.0 : q * q / 6.0;
  const double sigma0 =
      std::sqrt(std::max(var0 - sheppard, 0.04 * q * q));

  const double sigma_floor = 1e-6 * q;
  const double sigma_cap = 1e9 * q;
  auto objective = [&](const double* p) {
    const double mu = p[0];
    const double sigma = std::exp(p[1]);
    if (sigma < sigma_floor || sigma > sigma_cap) return 1e280;
    long double ss = 0.0L;
    for (std::int64_t n = lo; n <= hi; ++n) {
      const double d = gauss_cell_mass(mu, sigma, q, n, rk) - hist.mass(n);
      ss += static_cast<long double>(d) * d;
    }
    return static_cast<double>(ss);
  };

  const std::function<double(const double*)> fn = objective;
  const auto res =
      nelder_mead(fn, {mu0, std::log(sigma0)},
                  {std::max(0.25 * sigma0, 0.05 * q), 0.25}, 4000, 1e-10);
  if (!res.converged)
    throw FitError("gaussian fit did not converge", res.value, res.iterations);
  return {res.x[0], std::exp(res.x[1]), res.value, res.iterations};
}

struct WindowFit {
  double amplitude = 0.0;
  double exponent = 0.0;
  bool ok = false;
};

// One power-law window: amplitude is linear in the model, so scan + refine
// the exponent only.
WindowFit fit_powerlaw_window(const Histogram& hist, std::int64_t center,
                              int halfwidth, ResidualKind rk,
                              double max_exponent) {
  const std::int64_t lo = hist.n_min();
  const std::int64_t hi = hist.n_max();
  const std::int64_t min_abs = rk == ResidualKind::UniformCell ? 1 : 2;

  std::vector<std::int64_t> cells;
  for (std::int64_t w = center - halfwidth; w <= center + halfwidth; ++w) {
    if (w < lo || w > hi) continue;
    if (std::llabs(w) < min_abs) return {};  // support touches zero
    if ((w > 0) != (center > 0)) return {};  // window must not cross zero
    cells.push_back(w);
  }
  if (cells.size() < 3) return {};

  auto sse_for = [&](double b, double* amp_out) {
    long double sg2 = 0.0L, spg = 0.0L;
    std::vector<double> g(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      g[i] = plaw_cell_mass(hist.q, cells[i], b, rk);
      if (!std::isfinite(g[i])) return std::numeric_limits<double>::infinity();
      sg2 += static_cast<long double>(g[i]) * g[i];
      spg += static_cast<long double>(hist.mass(cells[i])) * g[i];
    }
    if (!(sg2 > 0.0L)) return std::numeric_limits<double>::infinity();
    const double a = std::max(static_cast<double>(spg / sg2), 0.0);
    if (amp_out) *amp_out = a;
    long double ss = 0.0L;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double d = hist.mass(cells[i]) - a * g[i];
      ss += static_cast<long double>(d) * d;
    }
    return static_cast<double>(ss);
  };

  const int grid = 321;
  double best_b = 0.0;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double b = max_exponent * i / (grid - 1);
    const double s = sse_for(b, nullptr);
    if (s < best_sse) {
      best_sse = s;
      best_b = b;
    }
  }
  const double step = max_exponent / (grid - 1);
  double a = std::max(best_b - step, 0.0);
  double b = std::min(best_b + step, max_exponent);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a);
  double x2 = a + gr * (b - a);
  double f1 = sse_for(x1, nullptr);
  double f2 = sse_for(x2, nullptr);
  for (int it = 0; it < 60; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = sse_for(x1, nullptr);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = sse_for(x2, nullptr);
    }
  }
  WindowFit out;
  out.exponent = 0.5 * (a + b);
  sse_for(out.exponent, &out.amplitude);
  out.ok = out.amplitude > 0.0 && std::isfinite(out.amplitude);
  return out;
}

std::vector<double> cell_edge_knots(double q, std::int64_t lo,
                                    std::int64_t hi) {
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(hi - lo) + 4);
  knots.push_back(q * (static_cast<double>(lo) - 1.0));
  for (std::int64_t n = lo; n <= hi + 1; ++n)
    knots.push_back(q * (static_cast<double>(n) - 0.5));
  knots.push_back(q * (static_cast<double>(hi) + 1.0));
  return knots;
}

}  // namespace

double triangular_density(double x, double center, double q) {
  if (q <= 0.0) throw Error("triangular_density: q must be positive");
  const double d = x - center;
  if (d < -q || d > q) return 0.0;
  return (q - std::abs(d)) / (q * q);
}

Histogram Histogram::from_cells(std::span<const std::int64_t> cells,
                                double q) {
  if (q <= 0.0) throw Error("Histogram: q must be positive");
  Histogram h;
  h.q = q;
  for (std::int64_t n : cells) h.add(n);
  return h;
}

double Histogram::mass(std::int64_t n) const {
  if (total == 0) return 0.0;
  const auto it = counts.find(n);
  if (it == counts.end()) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(total);
}

std::size_t Histogram::occupied() const {
  std::size_t k = 0;
  for (const auto& [n, c] : counts)
    if (c > 0) ++k;
  return k;
}

std::int64_t Histogram::n_min() const {
  if (counts.empty()) throw Error("Histogram: empty");
  return counts.begin()->first;
}

std::int64_t Histogram::n_max() const {
  if (counts.empty()) throw Error("Histogram: empty");
  return counts.rbegin()->first;
}

double Histogram::value_mean() const {
  if (total == 0) throw Error("Histogram: empty");
  long double s = 0.0L;
  for (const auto& [n, c] : counts)
    s += static_cast<long double>(c) * static_cast<double>(n);
  return q * static_cast<double>(s / static_cast<long double>(total));
}

double Histogram::value_variance() const {
  const double m = value_mean();
  long double s = 0.0L;
  for (const auto& [n, c] : counts) {
    const long double d = q * static_cast<double>(n) - m;
    s += static_cast<long double>(c) * d * d;
  }
  return static_cast<double>(s / static_cast<long double>(total));
}

InterpolatedDensity InterpolatedDensity::gaussian(double mean, double sigma) {
  if (sigma <= 0.0) throw Error("gaussian density: sigma must be positive");
  InterpolatedDensity d;
  d.kind_ = DensityKind::Gaussian;
  d.mu_ = mean;
  d.sigma_ = sigma;
  d.lo_ = mean - 40.0 * sigma;
  d.hi_ = mean + 40.0 * sigma;
  d.norm_ = 1.0;
  d.peak_ = kInvSqrt2Pi / sigma;
  return d;
}

InterpolatedDensity InterpolatedDensity::tabulated(const Histogram& hist) {
  if (hist.total == 0) throw Error("tabulated density: empty histogram");
  InterpolatedDensity d;
  d.kind_ = DensityKind::Tabulated;
  d.q_ = hist.q;
  const std::int64_t lo = hist.n_min();
  const std::int64_t hi = hist.n_max();
  d.knot_x_.push_back(hist.q * (static_cast<double>(lo) - 1.0));
  d.knot_rho_.push_back(0.0);
  for (std::int64_t n = lo; n <= hi; ++n) {
    d.knot_x_.push_back(hist.q * static_cast<double>(n));
    d.knot_rho_.push_back(hist.mass(n) / hist.q);
  }
  d.knot_x_.push_back(hist.q * (static_cast<double>(hi) + 1.0));
  d.knot_rho_.push_back(0.0);
  d.finalize(d.knot_x_.front(), d.knot_x_.back(), d.knot_x_);
  return d;
}

double InterpolatedDensity::gaussian_mean() const {
  if (kind_ != DensityKind::Gaussian)
    throw Error("gaussian_mean: not a gaussian density");
  return mu_;
}

double InterpolatedDensity::gaussian_sigma() const {
  if (kind_ != DensityKind::Gaussian)
    throw Error("gaussian_sigma: not a gaussian density");
  return sigma_;
}

double InterpolatedDensity::raw_eval(double x) const {
  switch (kind_) {
    case DensityKind::Gaussian:
      return norm_pdf((x - mu_) / sigma_) / sigma_;
    case DensityKind::Tabulated:
      break;
    case DensityKind::PiecewisePowerLaw: {
      if (x < lo_ || x > hi_) return 0.0;
      const auto cell = static_cast<std::int64_t>(std::llround(x / q_));
      if (core_patch_ && std::llabs(cell) <= core_halfwidth_)
        return norm_pdf((x - core_mu_) / core_sigma_) / core_sigma_;
      double sum = 0.0;
      int hits = 0;
      for (const PowerLawPiece& p : pieces_) {
        if (!p.fitted) continue;
        if (std::llabs(p.center - cell) > window_halfwidth_) continue;
        if ((p.center > 0) != (cell > 0) && cell != 0) continue;
        const double ax = std::abs(x);
        if (ax <= 0.0) continue;
        sum += p.amplitude * std::pow(ax, -p.exponent);
        ++hits;
      }
      if (hits > 0) return sum / hits;
      break;  // fall through to the tabulated backup
    }
  }
  // tabulated linear interpolation
  if (knot_x_.empty() || x < knot_x_.front() || x > knot_x_.back()) return 0.0;
  const auto it = std::upper_bound(knot_x_.begin(), knot_x_.end(), x);
  if (it == knot_x_.begin()) return std::max(knot_rho_.front(), 0.0);
  if (it == knot_x_.end()) return std::max(knot_rho_.back(), 0.0);
  const std::size_t i = static_cast<std::size_t>(it - knot_x_.begin());
  const double x0 = knot_x_[i - 1];
  const double x1 = knot_x_[i];
  const double w = (x - x0) / (x1 - x0);
  return std::max((1.0 - w) * knot_rho_[i - 1] + w * knot_rho_[i], 0.0);
}

double InterpolatedDensity::evaluate(double x) const {
  if (kind_ != DensityKind::Gaussian && (x < lo_ || x > hi_)) return 0.0;
  return raw_eval(x) / norm_;
}

void InterpolatedDensity::finalize(double lo, double hi,
                                   const std::vector<double>& knots) {
  lo_ = lo;
  hi_ = hi;
  norm_ = 1.0;
  double peak = 0.0;
  for (double x : knots) peak = std::max(peak, raw_eval(x));
  for (std::size_t i = 0; i + 1 < knots.size(); ++i)
    peak = std::max(peak, raw_eval(0.5 * (knots[i] + knots[i + 1])));
  peak_ = std::max(peak, 1e-300);
  const double tol = 1e-12 * peak_ * std::max(hi - lo, 1.0);
  const double mass = integrate_with_knots(
      [this](double x) { return raw_eval(x); }, knots, tol);
  if (!(mass > 0.0) || !std::isfinite(mass))
    throw Error("density normalization failed: non-positive mass");
  norm_ = mass;
  peak_ /= mass;
}

// Shared assembly for the two residual conventions.
InterpolatedDensity InterpolatedDensity::fit(const Histogram& hist,
                                             DensityKind kind, ResidualKind rk,
                                             const PiecewiseOptions& opts) {
  if (hist.total == 0) throw Error("fit: empty histogram");
  const std::int64_t lo = hist.n_min();
  const std::int64_t hi = hist.n_max();
  const double q = hist.q;

  InterpolatedDensity d;
  d.q_ = q;
  d.diag_.residual_kind = rk;

  switch (kind) {
    case DensityKind::Gaussian: {
      const auto g = fit_gaussian_cells(hist, lo, hi, rk, 3);
      d.kind_ = DensityKind::Gaussian;
      d.mu_ = g.mu;
      d.sigma_ = g.sigma;
      d.lo_ = g.mu - 40.0 * g.sigma;
      d.hi_ = g.mu + 40.0 * g.sigma;
      d.norm_ = 1.0;
      d.peak_ = kInvSqrt2Pi / g.sigma;
      d.diag_.converged = true;
      d.diag_.iterations = g.iterations;
      d.diag_.residual = g.residual;
      return d;
    }
    case DensityKind::Tabulated: {
      d = InterpolatedDensity::tabulated(hist);
      d.diag_.residual_kind = rk;
      break;
    }
    case DensityKind::PiecewisePowerLaw: {
      if (hist.occupied() < 5)
        throw FitError("piecewise fit: needs at least 5 occupied cells", 0.0,
                       0);
      d.kind_ = DensityKind::PiecewisePowerLaw;
      d.window_halfwidth_ = opts.window_halfwidth;

      // tabulated backup knots
      d.knot_x_.push_back(q * (static_cast<double>(lo) - 1.0));
      d.knot_rho_.push_back(0.0);
      for (std::int64_t n = lo; n <= hi; ++n) {
        d.knot_x_.push_back(q * static_cast<double>(n));
        d.knot_rho_.push_back(hist.mass(n) / q);
      }
      d.knot_x_.push_back(q * (static_cast<double>(hi) + 1.0));
      d.knot_rho_.push_back(0.0);

      // central Gaussian patch over the cells the power law cannot reach
      const std::int64_t core_lo = std::max(lo, -opts.core_halfwidth);
      const std::int64_t core_hi = std::min(hi, opts.core_halfwidth);
      if (core_lo <= core_hi) {
        try {
          const auto g = fit_gaussian_cells(hist, core_lo, core_hi, rk, 3);
          d.core_patch_ = true;
          d.core_mu_ = g.mu;
          d.core_sigma_ = g.sigma;
          d.core_halfwidth_ = opts.core_halfwidth;
        } catch (const FitError&) {
          d.core_patch_ = false;  // sparse center: interpolation covers it
        }
      }

      int fitted = 0;
      for (std::int64_t c = lo; c <= hi; ++c) {
        if (d.core_patch_ && std::llabs(c) <= d.core_halfwidth_) continue;
        const auto w = fit_powerlaw_window(hist, c, opts.window_halfwidth, rk,
                                           opts.max_exponent);
        if (w.ok) {
          d.pieces_.push_back({c, w.amplitude, w.exponent, true});
          ++fitted;
        }
      }
      // any cell outside the patch without a covering window degrades to the
      // tabulated interpolation
      for (std::int64_t n = lo; n <= hi && !d.diag_.tabulated_fallback; ++n) {
        if (d.core_patch_ && std::llabs(n) <= d.core_halfwidth_) continue;
        bool covered = false;
        for (const auto& p : d.pieces_)
          if (std::llabs(p.center - n) <= opts.window_halfwidth &&
              ((p.center > 0) == (n > 0) || n == 0))
            covered = true;
        if (!covered) d.diag_.tabulated_fallback = true;
      }
      if (fitted == 0 && !d.core_patch_) d.diag_.tabulated_fallback = true;
      d.finalize(q * (static_cast<double>(lo) - 1.0),
                 q * (static_cast<double>(hi) + 1.0),
                 cell_edge_knots(q, lo, hi));
      break;
    }
  }

  // report the per-cell round-trip residual of the assembled model
  long double ss = 0.0L;
  const double tol = 1e-12 * d.peak_hint() * q;
  for (std::int64_t n = lo; n <= hi; ++n) {
    const double c = q * static_cast<double>(n);
    double model;
    if (rk == ResidualKind::UniformCell) {
      model = integrate([&](double x) { return d.evaluate(x); }, c - 0.5 * q,
                        c + 0.5 * q, tol);
    } else {
      model = q * integrate_with_knots(
                      [&](double x) {
                        return d.evaluate(x) * triangular_density(x, c, q);
                      },
                      {c - q, c - 0.5 * q, c, c + 0.5 * q, c + q}, tol);
    }
    const double diff = model - hist.mass(n);
    ss += static_cast<long double>(diff) * diff;
  }
  d.diag_.residual = static_cast<double>(ss);
  return d;
}

InterpolatedDensity fit_uniform_residual(const Histogram& hist,
                                         DensityKind kind,
                                         const PiecewiseOptions& opts) {
  return InterpolatedDensity::fit(hist, kind, ResidualKind::UniformCell, opts);
}

InterpolatedDensity fit_triangular_residual(const Histogram& hist,
                                            DensityKind kind,
                                            const PiecewiseOptions& opts) {
  return InterpolatedDensity::fit(hist, kind, ResidualKind::TriangularCell,
                                  opts);
}

std::string InterpolatedDensity::to_json() const {
  nlohmann::json j;
  j["q"] = q_;
  j["support"] = {lo_, hi_};
  j["normalization"] = norm_;
  switch (kind_) {
    case DensityKind::Gaussian:
      j["kind"] = "gaussian";
      j["mean"] = mu_;
      j["sigma"] = sigma_;
      break;
    case DensityKind::Tabulated:
      j["kind"] = "tabulated";
      j["knots"] = knot_x_;
      j["values"] = knot_rho_;
      break;
    case DensityKind::PiecewisePowerLaw: {
      j["kind"] = "piecewise_powerlaw";
      j["window_halfwidth"] = window_halfwidth_;
      nlohmann::json pieces = nlohmann::json::array();
      for (const auto& p : pieces_)
        pieces.push_back({{"center", p.center},
                          {"amplitude", p.amplitude},
                          {"exponent", p.exponent}});
      j["pieces"] = pieces;
      if (core_patch_) {
        j["core"] = {{"mean", core_mu_},
                     {"sigma", core_sigma_},
                     {"halfwidth", core_halfwidth_}};
      }
      j["knots"] = knot_x_;
      j["values"] = knot_rho_;
      break;
    }
  }
  return j.dump();
}

InterpolatedDensity InterpolatedDensity::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  InterpolatedDensity d;
  d.q_ = j.at("q").get<double>();
  const auto support = j.at("support");
  d.lo_ = support.at(0).get<double>();
  d.hi_ = support.at(1).get<double>();
  d.norm_ = j.at("normalization").get<double>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") {
    d.kind_ = DensityKind::Gaussian;
    d.mu_ = j.at("mean").get<double>();
    d.sigma_ = j.at("sigma").get<double>();
    d.peak_ = kInvSqrt2Pi / d.sigma_;
  } else if (kind == "tabulated") {
    d.kind_ = DensityKind::Tabulated;
    d.knot_x_ = j.at("knots").get<std::vector<double>>();
    d.knot_rho_ = j.at("values").get<std::vector<double>>();
    for (double v : d.knot_rho_) d.peak_ = std::max(d.peak_, v / d.norm_);
  } else if (kind == "piecewise_powerlaw") {
    d.kind_ = DensityKind::PiecewisePowerLaw;
    d.window_halfwidth_ = j.at("window_halfwidth").get<int>();
    for (const auto& p : j.at("pieces"))
      d.pieces_.push_back({p.at("center").get<std::int64_t>(),
                           p.at("amplitude").get<double>(),
                           p.at("exponent").get<double>(), true});
    if (j.contains("core")) {
      d.core_patch_ = true;
      d.core_mu_ = j["core"].at("mean").get<double>();
      d.core_sigma_ = j["core"].at("sigma").get<double>();
      d.core_halfwidth_ = j["core"].at("halfwidth").get<std::int64_t>();
    }
    d.knot_x_ = j.at("knots").get<std::vector<double>>();
    d.knot_rho_ = j.at("values").get<std::vector<double>>();
    for (double v : d.knot_rho_) d.peak_ = std::max(d.peak_, v / d.norm_);
  } else {
    throw Error("density from_json: unknown kind '" + kind + "'");
  }
  return d;
}

Histogram2D Histogram2D::from_cells(std::span<const std::int64_t> a,
                                    std::span<const std::int64_t> b, double q1,
                                    double q2) {
  if (a.size() != b.size()) throw Error("Histogram2D: length mismatch");
  Histogram2D h;
  h.q1 = q1;
  h.q2 = q2;
  for (std::size_t i = 0; i < a.size(); ++i) h.add(a[i], b[i]);
  return h;
}

Histogram Histogram2D::marginal1() const {
  Histogram h;
  h.q = q1;
  for (const auto& [nm, c] : counts) h.add(nm.first, c);
  return h;
}

Histogram Histogram2D::marginal2() const {
  Histogram h;
  h.q = q2;
  for (const auto& [nm, c] : counts) h.add(nm.second, c);
  return h;
}

std::uint64_t Histogram2D::max_count() const {
  std::uint64_t m = 0;
  for (const auto& [nm, c] : counts) m = std::max(m, c);
  return m;
}

double JointDensity::evaluate(double x, double y) const {
  if (mode_ == JointMode::Separable) return m1_.evaluate(x) * m2_.evaluate(y);
  // bilinear between cell centers of the zero-padded grid
  const double x0 = q1_ * static_cast<double>(n0_);
  const double y0 = q2_ * static_cast<double>(m0_);
  const double fx = (x - x0) / q1_;
  const double fy = (y - y0) / q2_;
  if (fx < 0.0 || fy < 0.0 || fx > static_cast<double>(nx_ - 1) ||
      fy > static_cast<double>(ny_ - 1))
    return 0.0;
  const auto ix = std::min(static_cast<std::size_t>(fx), nx_ - 2);
  const auto iy = std::min(static_cast<std::size_t>(fy), ny_ - 2);
  const double wx = fx - static_cast<double>(ix);
  const double wy = fy - static_cast<double>(iy);
  const double v00 = grid_[ix * ny_ + iy];
  const double v01 = grid_[ix * ny_ + iy + 1];
  const double v10 = grid_[(ix + 1) * ny_ + iy];
  const double v11 = grid_[(ix + 1) * ny_ + iy + 1];
  const double v = (1 - wx) * ((1 - wy) * v00 + wy * v01) +
                   wx * ((1 - wy) * v10 + wy * v11);
  return std::max(v, 0.0) / norm_;
}

std::vector<double> JointDensity::x_knots() const {
  std::vector<double> knots;
  if (mode_ == JointMode::Separable) {
    const auto [lo, hi] = m1_.support();
    knots = {lo, hi};
    return knots;
  }
  knots.reserve(nx_);
  for (std::size_t i = 0; i < nx_; ++i)
    knots.push_back(q1_ * static_cast<double>(n0_ + static_cast<std::int64_t>(i)));
  return knots;
}

JointDensity joint_density(const Histogram2D& hist, JointMode requested,
                           DensityKind marginal_kind,
                           ResidualKind marginal_residual) {
  if (hist.total == 0) throw Error("joint_density: empty histogram");
  JointDensity jd;
  jd.q1_ = hist.q1;
  jd.q2_ = hist.q2;

  const bool sparse = hist.max_count() <= 1;
  JointMode mode = requested;
  if (sparse && requested == JointMode::Separable) {
    mode = JointMode::Tabulated;
    jd.sparse_fallback_ = true;
  }
  jd.mode_ = mode;

  if (mode == JointMode::Separable) {
    const Histogram h1 = hist.marginal1();
    const Histogram h2 = hist.marginal2();
    auto fit = marginal_residual == ResidualKind::UniformCell
                   ? fit_uniform_residual
                   : fit_triangular_residual;
    jd.m1_ = fit(h1, marginal_kind, {});
    jd.m2_ = fit(h2, marginal_kind, {});
    return jd;
  }

  std::int64_t nlo = 0, nhi = 0, mlo = 0, mhi = 0;
  bool first = true;
  for (const auto& [nm, c] : hist.counts) {
    (void)c;
    if (first) {
      nlo = nhi = nm.first;
      mlo = mhi = nm.second;
      first = false;
    } else {
      nlo = std::min(nlo, nm.first);
      nhi = std::max(nhi, nm.first);
      mlo = std::min(mlo, nm.second);
      mhi = std::max(mhi, nm.second);
    }
  }
  // zero ring around the observed cells so the surface tapers to zero
  jd.n0_ = nlo - 1;
  jd.m0_ = mlo - 1;
  jd.nx_ = static_cast<std::size_t>(nhi - nlo + 3);
  jd.ny_ = static_cast<std::size_t>(mhi - mlo + 3);
  jd.grid_.assign(jd.nx_ * jd.ny_, 0.0);
  const double cell_density = 1.0 / (hist.q1 * hist.q2 *
                                     static_cast<double>(hist.total));
  for (const auto& [nm, c] : hist.counts) {
    const auto ix = static_cast<std::size_t>(nm.first - jd.n0_);
    const auto iy = static_cast<std::size_t>(nm.second - jd.m0_);
    jd.grid_[ix * jd.ny_ + iy] = static_cast<double>(c) * cell_density;
  }
  // integral of the bilinear surface: patch-average of corners times area
  long double mass = 0.0L;
  for (std::size_t ix = 0; ix + 1 < jd.nx_; ++ix)
    for (std::size_t iy = 0; iy + 1 < jd.ny_; ++iy)
      mass += 0.25L * (jd.grid_[ix * jd.ny_ + iy] +
                       jd.grid_[ix * jd.ny_ + iy + 1] +
                       jd.grid_[(ix + 1) * jd.ny_ + iy] +
                       jd.grid_[(ix + 1) * jd.ny_ + iy + 1]);
  mass *= static_cast<long double>(hist.q1) * hist.q2;
  if (!(mass > 0.0L)) throw Error("joint_density: degenerate joint mass");
  jd.norm_ = static_cast<double>(mass);
  return jd;
}

}  // namespace ticklab
