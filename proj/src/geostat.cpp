#include "phonodist/geostat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "phonodist/parallel.hpp"
#include "phonodist/rng.hpp"

namespace phonodist::geostat {

namespace {

constexpr double kDeg2Rad = 0.017453292519943295;

double sqr(double x) { return x * x; }

}  // namespace

GeoPoint normalized(GeoPoint p) {
  if (p.lat < -90.0 || p.lat > 90.0) throw std::invalid_argument("latitude out of range");
  double lon = std::fmod(p.lon + 180.0, 360.0);
  if (lon < 0.0) lon += 360.0;
  p.lon = lon - 180.0;
  return p;
}

double geodesic_km(const GeoPoint& a, const GeoPoint& b) {
  const double lat1 = a.lat * kDeg2Rad, lat2 = b.lat * kDeg2Rad;
  const double dlat = (b.lat - a.lat) * kDeg2Rad;
  const double dlon = (b.lon - a.lon) * kDeg2Rad;
  const double h = sqr(std::sin(0.5 * dlat)) +
                   std::cos(lat1) * std::cos(lat2) * sqr(std::sin(0.5 * dlon));
  const double c = 2.0 * std::atan2(std::sqrt(h), std::sqrt(std::max(0.0, 1.0 - h)));
  return kEarthRadiusKm * c;
}

LogFit log_fit(std::span<const std::pair<double, double>> pairs) {
  LogFit fit;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& [d, w] : pairs) {
    if (!(d > 0.0)) {
      ++fit.n_excluded;
      continue;
    }
    const double x = std::log(d);
    sx += x;
    sy += w;
    sxx += x * x;
    sxy += x * w;
    ++fit.n_used;
  }
  if (fit.n_used < 3) {
    throw std::runtime_error("log fit needs at least 3 pairs with positive geographic distance");
  }
  const double n = static_cast<double>(fit.n_used);
  const double var = sxx - sx * sx / n;
  if (var <= 1e-12 * std::max(1.0, sxx)) {
    throw std::runtime_error("log fit is singular: all geographic distances coincide");
  }
  fit.beta = (sxy - sx * sy / n) / var;
  fit.alpha = (sy - fit.beta * sx) / n;
  double ss = 0.0;
  for (const auto& [d, w] : pairs) {
    if (!(d > 0.0)) continue;
    ss += sqr(w - fit.alpha - fit.beta * std::log(d));
  }
  fit.residual_variance = ss / n;
  return fit;
}

double invert_fit(const LogFit& fit, double w, bool* clamped) {
  if (fit.beta == 0.0) throw std::runtime_error("cannot invert a fit with zero slope");
  const double raw = std::exp((w - fit.alpha) / fit.beta);
  double out = raw;
  bool clipped = false;
  if (!(out >= 1.0)) {
    out = 1.0;
    clipped = raw != 1.0;
  }
  if (out > kAntipodalKm) {
    out = kAntipodalKm;
    clipped = true;
  }
  if (clamped) *clamped = clipped;
  return out;
}

DcorResult distance_correlation(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size()) throw std::invalid_argument("distance_correlation: length mismatch");
  if (n < 4) throw std::invalid_argument("distance_correlation needs n >= 4");

  auto centered = [&](std::span<const double> v, std::vector<double>& a) {
    std::vector<double> row_mean(n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = std::abs(v[i] - v[j]);
        a[i * n + j] = d;
        row_mean[i] += d;
      }
      grand += row_mean[i];
      row_mean[i] /= static_cast<double>(n);
    }
    grand /= static_cast<double>(n) * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        a[i * n + j] += grand - row_mean[i] - row_mean[j];
      }
    }
  };

  std::vector<double> a(n * n), b(n * n);
  centered(x, a);
  centered(y, b);
  double vxy = 0.0, vxx = 0.0, vyy = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) {
    vxy += a[k] * b[k];
    vxx += a[k] * a[k];
    vyy += b[k] * b[k];
  }
  DcorResult out;
  if (vxx <= 0.0 || vyy <= 0.0) {
    out.value = 0.0;
    out.degenerate = true;
    return out;
  }
  out.value = std::sqrt(std::max(0.0, vxy / std::sqrt(vxx * vyy)));
  return out;
}

double permutation_pvalue(std::span<const double> x, std::span<const double> y,
                          const std::function<double(std::span<const double>,
                                                     std::span<const double>)>& statistic,
                          int n_perm, std::uint64_t seed) {
  if (n_perm < 1) throw std::invalid_argument("permutation test needs n_perm >= 1");
  const double observed = statistic(x, y);
  std::mt19937_64 g(seed);
  std::vector<double> perm(y.begin(), y.end());
  int at_least = 0;
  for (int k = 0; k < n_perm; ++k) {
    rng::shuffle(perm, g);
    if (statistic(x, perm) >= observed) ++at_least;
  }
  return static_cast<double>(1 + at_least) / static_cast<double>(1 + n_perm);
}

namespace {

std::vector<double> upper_triangle(const Matrix& m) {
  std::vector<double> out;
  out.reserve(m.rows * (m.rows - 1) / 2);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = i + 1; j < m.cols; ++j) out.push_back(m(i, j));
  }
  return out;
}

}  // namespace

CorrelationResult matrix_distance_correlation(const Matrix& dx, const Matrix& dy, int n_perm,
                                              std::uint64_t seed) {
  if (dx.rows != dx.cols || dy.rows != dy.cols || dx.rows != dy.rows) {
    throw std::invalid_argument("matrix_distance_correlation needs square matrices of equal size");
  }
  const std::size_t n = dx.rows;
  if (n < 4) throw std::invalid_argument("matrix_distance_correlation needs at least 4 items");
  if (n_perm < 1) throw std::invalid_argument("permutation test needs n_perm >= 1");

  const std::vector<double> xs = upper_triangle(dx);
  const std::vector<double> ys = upper_triangle(dy);
  const DcorResult obs = distance_correlation(xs, ys);

  std::mt19937_64 g(seed);
  std::vector<std::size_t> perm(n);
  int at_least = 0;
  std::vector<double> ys_perm(ys.size());
  for (int k = 0; k < n_perm; ++k) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng::shuffle(perm, g);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) ys_perm[idx++] = dy(perm[i], perm[j]);
    }
    if (distance_correlation(xs, ys_perm).value >= obs.value) ++at_least;
  }
  CorrelationResult out;
  out.r_d = obs.value;
  out.degenerate = obs.degenerate;
  out.n_permutations = n_perm;
  out.seed = seed;
  out.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + n_perm);
  return out;
}

GeoPoint Chi2Surface::node(std::size_t i_lat, std::size_t i_lon) const {
  return GeoPoint{spec.lat_min + static_cast<double>(i_lat) * spec.step,
                  spec.lon_min + static_cast<double>(i_lon) * spec.step};
}

namespace {

void check_grid(const GridSpec& g) {
  if (!(g.step > 0.0)) throw std::invalid_argument("grid step must be positive");
  if (g.lat_max < g.lat_min || g.lon_max < g.lon_min) {
    throw std::invalid_argument("empty grid bounding box");
  }
}

std::vector<double> resolve_weights(std::span<const double> weights, std::size_t n) {
  std::vector<double> w;
  if (weights.empty()) {
    w.assign(n, 1.0 / static_cast<double>(n));
  } else {
    if (weights.size() != n) throw std::invalid_argument("weights length mismatch");
    w.assign(weights.begin(), weights.end());
  }
  return w;
}

}  // namespace

Chi2Surface chi2_surface(std::span<const GeoPoint> sites, std::span<const double> d_g,
                         const GridSpec& grid, std::span<const double> weights, unsigned threads) {
  check_grid(grid);
  if (sites.empty()) throw std::invalid_argument("chi2_surface needs at least one site");
  if (sites.size() != d_g.size()) throw std::invalid_argument("sites/d_g length mismatch");
  const std::vector<double> w = resolve_weights(weights, sites.size());

  Chi2Surface s;
  s.spec = grid;
  s.n_lat = static_cast<std::size_t>(std::floor((grid.lat_max - grid.lat_min) / grid.step + 1e-9)) + 1;
  s.n_lon = static_cast<std::size_t>(std::floor((grid.lon_max - grid.lon_min) / grid.step + 1e-9)) + 1;
  s.values.assign(s.n_lat * s.n_lon, 0.0);

  parallel_for(s.n_lat, threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < s.n_lon; ++j) {
      const GeoPoint r = s.node(i, j);
      double acc = 0.0;
      for (std::size_t k = 0; k < sites.size(); ++k) {
        acc += w[k] * sqr(d_g[k] - geodesic_km(sites[k], r));
      }
      s.values[i * s.n_lon + j] = acc;
    }
  });
  return s;
}

double chi2_at(std::span<const GeoPoint> sites, std::span<const double> d_g, const GeoPoint& r,
               std::span<const double> weights) {
  const std::vector<double> w = resolve_weights(weights, sites.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    acc += w[k] * sqr(d_g[k] - geodesic_km(sites[k], r));
  }
  return acc;
}

GeoPoint argmin_node(const Chi2Surface& surface) {
  if (surface.values.empty()) throw std::invalid_argument("empty chi2 surface");
  std::size_t best = 0;
  for (std::size_t k = 1; k < surface.values.size(); ++k) {
    if (surface.values[k] < surface.values[best]) best = k;
  }
  return surface.node(best / surface.n_lon, best % surface.n_lon);
}

GeoPoint refine_homeland(std::span<const GeoPoint> sites, std::span<const double> d_g,
                         GeoPoint start, double step, std::span<const double> weights) {
  GeoPoint current = start;
  double value = chi2_at(sites, d_g, current, weights);
  double h = 0.5 * step;
  while (h > step / 64.0) {
    bool improved = false;
    const GeoPoint candidates[4] = {
        {current.lat + h, current.lon},
        {current.lat - h, current.lon},
        {current.lat, current.lon + h},
        {current.lat, current.lon - h},
    };
    for (const GeoPoint& c : candidates) {
      if (c.lat < -90.0 || c.lat > 90.0) continue;
      const double v = chi2_at(sites, d_g, normalized(c), weights);
      if (v < value) {
        value = v;
        current = normalized(c);
        improved = true;
      }
    }
    if (!improved) h *= 0.5;
  }
  return current;
}

double homeland_uncertainty(std::span<const GeoPoint> sites, std::span<const double> d_g,
                            const GridSpec& grid, int k_draws, std::uint64_t seed,
                            const GeoPoint& r_star, unsigned threads,
                            std::vector<GeoPoint>* draw_argmins) {
  if (k_draws < 100) throw std::invalid_argument("homeland uncertainty needs K >= 100 draws");
  check_grid(grid);
  if (sites.size() != d_g.size() || sites.empty()) {
    throw std::invalid_argument("sites/d_g length mismatch");
  }
  const std::size_t n = sites.size();
  const std::size_t n_lat =
      static_cast<std::size_t>(std::floor((grid.lat_max - grid.lat_min) / grid.step + 1e-9)) + 1;
  const std::size_t n_lon =
      static_cast<std::size_t>(std::floor((grid.lon_max - grid.lon_min) / grid.step + 1e-9)) + 1;
  const std::size_t nodes = n_lat * n_lon;

  // Squared residuals per (node, site); the draws only reweight them.
  std::vector<double> resid(nodes * n);
  std::vector<GeoPoint> node_points(nodes);
  parallel_for(n_lat, threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < n_lon; ++j) {
      const std::size_t node = i * n_lon + j;
      const GeoPoint r{grid.lat_min + static_cast<double>(i) * grid.step,
                       grid.lon_min + static_cast<double>(j) * grid.step};
      node_points[node] = r;
      for (std::size_t k = 0; k < n; ++k) {
        resid[node * n + k] = sqr(d_g[k] - geodesic_km(sites[k], r));
      }
    }
  });

  std::vector<GeoPoint> argmins(static_cast<std::size_t>(k_draws));
  parallel_for(static_cast<std::size_t>(k_draws), threads, [&](std::size_t k) {
    std::mt19937_64 g(rng::derive_seed(seed, k));
    const std::vector<double> w = rng::dirichlet_uniform(g, n);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_node = 0;
    for (std::size_t node = 0; node < nodes; ++node) {
      const double* row = &resid[node * n];
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += w[i] * row[i];
      if (acc < best) {
        best = acc;
        best_node = node;
      }
    }
    argmins[k] = node_points[best_node];
  });

  std::vector<double> dists(argmins.size());
  for (std::size_t k = 0; k < argmins.size(); ++k) dists[k] = geodesic_km(r_star, argmins[k]);
  if (draw_argmins) *draw_argmins = std::move(argmins);
  std::sort(dists.begin(), dists.end());
  const std::size_t idx =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(dists.size()))) - 1;
  return dists[std::min(idx, dists.size() - 1)];
}

std::vector<double> phono_to_average(const std::vector<const blocks::BlockDistribution*>& dists,
                                     const transport::AverageDistribution& p_av,
                                     const features::FeatureTable& table,
                                     const features::GroundMetricSpec& metric,
                                     const transport::SinkhornParams& params,
                                     const transport::TruncationPolicy& truncation,
                                     unsigned threads) {
  const transport::SupportDistribution avg = transport::truncate_support(p_av, truncation);
  std::vector<double> out(dists.size(), 0.0);
  std::vector<std::string> errors(dists.size());
  parallel_for(dists.size(), threads, [&](std::size_t i) {
    try {
      const auto d = transport::truncate_distribution(*dists[i], truncation);
      out[i] = transport::wasserstein_between(d, avg, table, metric, params, nullptr);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      throw std::runtime_error("distance to family average, language #" + std::to_string(i) +
                               ": " + errors[i]);
    }
  }
  return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman needs two samples of equal length >= 2");
  }
  const std::size_t n = a.size();
  auto ranks = [&](std::span<const double> v) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // tie-averaged rank
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (ra[i] - ma) * (rb[i] - mb);
    sxx += sqr(ra[i] - ma);
    syy += sqr(rb[i] - mb);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace phonodist::geostat
