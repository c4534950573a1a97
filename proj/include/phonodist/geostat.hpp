#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "phonodist/matrix.hpp"
#include "phonodist/transport.hpp"

namespace phonodist::geostat {

inline constexpr double kEarthRadiusKm = 6371.0088;  // mean Earth radius
inline constexpr double kAntipodalKm = 20015.114442035923;  // pi * R

struct GeoPoint {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, normalized to [-180, 180)
};

GeoPoint normalized(GeoPoint p);

// Great-circle distance in km on the mean-radius sphere (haversine form).
double geodesic_km(const GeoPoint& a, const GeoPoint& b);

struct LogFit {
  double alpha = 0.0;  // intercept
  double beta = 0.0;   // slope per ln(km)
  double residual_variance = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // pairs with d_geo <= 0
};

// Least squares of w = alpha + beta ln(d_geo) over (d_geo, w) pairs.
// Pairs with d_geo <= 0 are excluded; throws if fewer than 3 usable pairs
// remain or all d_geo coincide.
LogFit log_fit(std::span<const std::pair<double, double>> pairs);

// exp((w - alpha) / beta), clamped to [1 km, antipodal]. Throws if beta == 0.
double invert_fit(const LogFit& fit, double w, bool* clamped = nullptr);

struct DcorResult {
  double value = 0.0;
  bool degenerate = false;  // zero distance variance in a sample
};

// Distance correlation of two scalar samples (Szekely's V-statistic), in [0, 1].
DcorResult distance_correlation(std::span<const double> x, std::span<const double> y);

// p = (1 + #{permuted >= observed}) / (1 + n_perm); permutes y.
double permutation_pvalue(std::span<const double> x, std::span<const double> y,
                          const std::function<double(std::span<const double>,
                                                     std::span<const double>)>& statistic,
                          int n_perm, std::uint64_t seed);

struct CorrelationResult {
  double r_d = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
  std::uint64_t seed = 0;
  bool degenerate = false;
};

// Distance correlation between the upper triangles of two square distance
// matrices; the permutation test jointly permutes rows and columns of dy
// (language labels are exchangeable, pairs are not).
CorrelationResult matrix_distance_correlation(const Matrix& dx, const Matrix& dy, int n_perm,
                                              std::uint64_t seed);

struct GridSpec {
  double lat_min = -89.75;
  double lat_max = 89.75;
  double lon_min = -180.0;
  double lon_max = 179.75;
  double step = 0.5;
};

struct Chi2Surface {
  GridSpec spec;
  std::size_t n_lat = 0;
  std::size_t n_lon = 0;
  std::vector<double> values;  // row-major over (lat index, lon index)

  GeoPoint node(std::size_t i_lat, std::size_t i_lon) const;
  double at(std::size_t i_lat, std::size_t i_lon) const { return values[i_lat * n_lon + i_lon]; }
};

// Mean (weighted) squared residual between the fitted distances d_g and the
// geodesic distances to every grid node; uniform weights 1/n by default.
Chi2Surface chi2_surface(std::span<const GeoPoint> sites, std::span<const double> d_g,
                         const GridSpec& grid, std::span<const double> weights = {},
                         unsigned threads = 0);

double chi2_at(std::span<const GeoPoint> sites, std::span<const double> d_g, const GeoPoint& r,
               std::span<const double> weights = {});

// Grid node of minimal chi^2; ties go to the smallest (lat, lon).
GeoPoint argmin_node(const Chi2Surface& surface);

// Coordinate descent from `start` at sub-cell scale; never increases chi^2.
GeoPoint refine_homeland(std::span<const GeoPoint> sites, std::span<const double> d_g,
                         GeoPoint start, double step, std::span<const double> weights = {});

// 95th percentile of d(r_star, r_k) over K Dirichlet(1, ..., 1) weight draws;
// the per-draw argmins reuse the grid. Reproducible under a fixed seed.
double homeland_uncertainty(std::span<const GeoPoint> sites, std::span<const double> d_g,
                            const GridSpec& grid, int k_draws, std::uint64_t seed,
                            const GeoPoint& r_star, unsigned threads = 0,
                            std::vector<GeoPoint>* draw_argmins = nullptr);

// Wasserstein distance of each language's (truncated) 3-phone distribution to
// the family average.
std::vector<double> phono_to_average(const std::vector<const blocks::BlockDistribution*>& dists,
                                     const transport::AverageDistribution& p_av,
                                     const features::FeatureTable& table,
                                     const features::GroundMetricSpec& metric,
                                     const transport::SinkhornParams& params,
                                     const transport::TruncationPolicy& truncation,
                                     unsigned threads = 0);

// Spearman rank correlation with tie-averaged ranks.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace phonodist::geostat
