#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ticklab/core.hpp"

namespace ticklab {

// Density of the difference of two independent uniform rounding errors,
// centered at `center`: zero at center +- q, peak 1/q at the center.
double triangular_density(double x, double center, double q);

struct TriangularKernel {
  double center = 0.0;
  double q = 1.0;
  double operator()(double x) const { return triangular_density(x, center, q); }
};

// Counts of a discretized value series on the integer grid n -> count, cell
// width q (value = n*q).
struct Histogram {
  double q = 1.0;
  std::map<std::int64_t, std::uint64_t> counts;
  std::uint64_t total = 0;

  static Histogram from_cells(std::span<const std::int64_t> cells,
                              double q = 1.0);

  void add(std::int64_t n, std::uint64_t c = 1) {
    counts[n] += c;
    total += c;
  }
  double mass(std::int64_t n) const;
  std::size_t occupied() const;
  std::int64_t n_min() const;  // throws on empty
  std::int64_t n_max() const;
  double value_mean() const;      // currency units
  double value_variance() const;  // population, currency units
};

enum class DensityKind { Gaussian, PiecewisePowerLaw, Tabulated };
enum class ResidualKind { UniformCell, TriangularCell };

struct PowerLawPiece {
  std::int64_t center = 0;  // window center cell
  double amplitude = 0.0;   // rho(x) = amplitude * |x|^(-exponent)
  double exponent = 0.0;
  bool fitted = false;
};

struct FitDiagnostics {
  bool converged = true;
  int iterations = 0;
  double residual = 0.0;  // sum of squared per-cell mass differences
  bool tabulated_fallback = false;
  ResidualKind residual_kind = ResidualKind::UniformCell;
};

struct PiecewiseOptions {
  int window_halfwidth = 2;         // cells on each side entering one window
  std::int64_t core_halfwidth = 3;  // |n| <= core handled by a Gaussian patch
  double max_exponent = 40.0;
};

// Continuous interpolation of a discretized distribution: a single Gaussian,
// per-cell power-law windows with a central Gaussian patch, or a tabulated
// linear interpolation. Always normalized to unit mass over its support.
class InterpolatedDensity {
 public:
  InterpolatedDensity() = default;

  static InterpolatedDensity gaussian(double mean, double sigma);
  static InterpolatedDensity tabulated(const Histogram& hist);

  DensityKind kind() const { return kind_; }
  double operator()(double x) const { return evaluate(x); }
  double evaluate(double x) const;
  std::pair<double, double> support() const { return {lo_, hi_}; }
  double peak_hint() const { return peak_; }

  double gaussian_mean() const;   // throws unless kind == Gaussian
  double gaussian_sigma() const;  // throws unless kind == Gaussian

  const FitDiagnostics& diagnostics() const { return diag_; }
  const std::vector<PowerLawPiece>& pieces() const { return pieces_; }

  std::string to_json() const;
  static InterpolatedDensity from_json(std::string_view text);

  friend InterpolatedDensity fit_uniform_residual(const Histogram&,
                                                  DensityKind,
                                                  const PiecewiseOptions&);
  friend InterpolatedDensity fit_triangular_residual(const Histogram&,
                                                     DensityKind,
                                                     const PiecewiseOptions&);

 private:
  static InterpolatedDensity fit(const Histogram& hist, DensityKind kind,
                                 ResidualKind rk, const PiecewiseOptions& opts);
  double raw_eval(double x) const;
  void finalize(double lo, double hi, const std::vector<double>& knots);

  DensityKind kind_ = DensityKind::Gaussian;
  double q_ = 1.0;
  double mu_ = 0.0, sigma_ = 1.0;  // Gaussian parameters
  std::vector<PowerLawPiece> pieces_;
  bool core_patch_ = false;  // central Gaussian of the piecewise model
  double core_mu_ = 0.0, core_sigma_ = 1.0;
  std::int64_t core_halfwidth_ = 0;
  int window_halfwidth_ = 2;
  std::vector<double> knot_x_, knot_rho_;  // tabulated values / fallback
  double lo_ = 0.0, hi_ = 0.0;             // support (wide for Gaussian)
  double norm_ = 1.0;
  double peak_ = 1.0;
  FitDiagnostics diag_;
};

// Least-squares interpolation with per-cell residuals over [q(n-1/2),
// q(n+1/2)]: the model's cell mass against the observed cell frequency.
InterpolatedDensity fit_uniform_residual(const Histogram& hist,
                                         DensityKind kind,
                                         const PiecewiseOptions& opts = {});

// Same, but each observed value is a difference of two roundings: residual
// cells span [q(n-1), q(n+1)] weighted by the triangular error density.
InterpolatedDensity fit_triangular_residual(const Histogram& hist,
                                            DensityKind kind,
                                            const PiecewiseOptions& opts = {});

struct Histogram2D {
  double q1 = 1.0, q2 = 1.0;
  std::map<std::pair<std::int64_t, std::int64_t>, std::uint64_t> counts;
  std::uint64_t total = 0;

  static Histogram2D from_cells(std::span<const std::int64_t> a,
                                std::span<const std::int64_t> b,
                                double q1 = 1.0, double q2 = 1.0);
  void add(std::int64_t n, std::int64_t m, std::uint64_t c = 1) {
    counts[{n, m}] += c;
    total += c;
  }
  Histogram marginal1() const;
  Histogram marginal2() const;
  std::uint64_t max_count() const;
};

enum class JointMode { Separable, Tabulated };

// Two-variable companion of InterpolatedDensity: either the product of the
// fitted marginals or a bilinear interpolation of the joint cell masses.
class JointDensity {
 public:
  JointMode mode() const { return mode_; }
  bool sparse_fallback() const { return sparse_fallback_; }
  double evaluate(double x, double y) const;
  const InterpolatedDensity& marginal1() const { return m1_; }
  const InterpolatedDensity& marginal2() const { return m2_; }
  // knots along x for slice quadrature at fixed y
  std::vector<double> x_knots() const;

  friend JointDensity joint_density(const Histogram2D&, JointMode, DensityKind,
                                    ResidualKind);

 private:
  JointMode mode_ = JointMode::Separable;
  bool sparse_fallback_ = false;
  InterpolatedDensity m1_, m2_;
  double q1_ = 1.0, q2_ = 1.0;
  std::int64_t n0_ = 0, m0_ = 0;
  std::size_t nx_ = 0, ny_ = 0;
  std::vector<double> grid_;  // cell-center densities, row-major [ix*ny+iy]
  double norm_ = 1.0;
};

// Joint model for synchronous pairs. A sparse joint (every cell count <= 1)
// degrades to the tabulated form with the fallback flag set.
JointDensity joint_density(const Histogram2D& hist, JointMode requested,
                           DensityKind marginal_kind,
                           ResidualKind marginal_residual);

}  // namespace ticklab
