#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ticklab/core.hpp"
#include "ticklab/density.hpp"

namespace ticklab {

// Rounding model behind the discretization errors: a directly rounded value
// (uniform error, var q^2/12) or a difference of two roundings (triangular
// error, var q^2/6).
enum class ErrorModel { Uniform, Triangular };

enum class TermSet { Full, Dominant };

// Conditional mean discretization error <theta_n> for cell n: the weighted
// first moment of the interpolated density about nq over the cell window.
// Empty when the cell carries no density mass.
std::optional<double> mean_error(std::int64_t n,
                                 const InterpolatedDensity& density, double q,
                                 ErrorModel model);

// Slice variant conditioned on the partner series' cell, via the joint
// density. For a separable joint this reduces to the marginal mean error.
std::optional<double> mean_error_joint(std::int64_t n, std::int64_t m,
                                       const JointDensity& joint, double q1,
                                       double q2, ErrorModel model,
                                       int series);

struct MeanErrorTable {
  ErrorModel model = ErrorModel::Uniform;
  double q = 1.0;
  std::map<std::int64_t, double> theta;           // <theta_n>, currency units
  std::vector<std::int64_t> zero_mass_cells;      // fell back to zero

  double at(std::int64_t n) const;
};

MeanErrorTable build_mean_error_table(const InterpolatedDensity& density,
                                      double q, ErrorModel model,
                                      std::int64_t n_min, std::int64_t n_max);

// (1/T) sum_n T_n <theta_n>
double overall_mean_error(const MeanErrorTable& table, const Histogram& counts);

struct Key4 {
  std::int64_t n = 0, m = 0, k = 0, l = 0;
  bool operator==(const Key4&) const = default;
};

struct Key4Hash {
  std::size_t operator()(const Key4& key) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::int64_t v : {key.n, key.m, key.k, key.l}) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) +
           (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

// Occupation counts over discretized values and start prices: T_n, T_m,
// T_{n,m}, T_{n,k} and (full mode) T_{n,m,k,l}. Sparse; absent cells are zero.
struct CountTensors {
  Histogram t_n, t_m;  // per-value counts, grid units
  std::map<std::pair<std::int64_t, std::int64_t>, std::uint64_t> t_nm;
  std::map<std::pair<std::int64_t, std::int64_t>, std::uint64_t> t_nk1, t_nk2;
  std::unordered_map<Key4, std::uint64_t, Key4Hash> t_nmkl;
  std::uint64_t total = 0;
  bool full = false;
  // price bin id -> representative price in ticks (empty when prices exact)
  std::vector<double> bin_price1, bin_price2;
};

CountTensors count_discretized_pair(std::span<const std::int64_t> x1,
                                    std::span<const std::int64_t> x2);

// Synchronous view of two return series matched on window start times.
struct ReturnPairView {
  std::vector<ReturnEntry> e1, e2;
  std::vector<double> r1, r2;
  std::size_t dropped = 0;  // entries without a synchronous partner
};

ReturnPairView synchronize(const ReturnSeries& a, const ReturnSeries& b);

// price_bins = 0 keeps exact integer tick prices in the 4-tensor; a positive
// value switches to logarithmic price binning with that many bins.
CountTensors count_return_pair(const ReturnPairView& view, bool full,
                               int price_bins = 0,
                               std::size_t cell_budget = 1u << 25);

enum class TermSlot { Numerator, Den1Var, Den1Cov, Den2Var, Den2Cov };

struct TermEntry {
  std::string name;
  double value = 0.0;
  TermSlot slot = TermSlot::Numerator;
};

// Raw correlation, each recovered correction term, and the compensated
// coefficient. raw_cov/raw_var keep the measured pieces so single terms can
// be re-zeroed exactly.
struct CorrectionReport {
  std::string pair;
  std::int64_t dt = 0;
  double raw = 0.0;
  double raw_cov = 0.0, raw_var1 = 0.0, raw_var2 = 0.0;
  std::vector<TermEntry> terms;
  std::vector<std::string> neglected;
  double compensated = 0.0;
  bool clamped = false;

  double term(std::string_view name) const;  // throws on unknown name
  std::string to_json() const;
};

// Correlation decomposition for two value-discretized series (tick grids q1,
// q2), with every lost term estimated from the interpolated densities. The
// error-error covariance is fixed to zero and listed as neglected.
CorrectionReport correction_terms_discretized(
    std::span<const std::int64_t> x1, std::span<const std::int64_t> x2,
    double q1, double q2, const InterpolatedDensity& rho1,
    const InterpolatedDensity& rho2, const JointDensity* joint,
    ErrorModel model);

// Price-change specialization: triangular error model and densities fitted
// with the triangular residual.
CorrectionReport corrected_corr_price_changes(
    std::span<const std::int64_t> ds1, std::span<const std::int64_t> ds2,
    double q1, double q2, DensityKind kind = DensityKind::Gaussian);

struct ReturnCorrectionOptions {
  TermSet term_set = TermSet::Dominant;
  DensityKind density = DensityKind::Gaussian;
  JointMode joint_mode = JointMode::Separable;  // full-mode cross terms
  int price_bins = 0;            // 0 = exact integer tick prices
  std::size_t cell_budget = 1u << 25;
};

// Return-correlation correction. In dominant mode only the per-series
// covariance and variance terms enter; the cross terms are listed as
// neglected alongside the error-error covariance.
CorrectionReport corrected_corr_returns(const ReturnSeries& a,
                                        const ReturnSeries& b,
                                        const ReturnCorrectionOptions& opts = {});

// Correlation change when the named term is removed: compensated value minus
// the same expression with that term set to zero.
double term_impact(const CorrectionReport& report, std::string_view term_name);

}  // namespace ticklab
