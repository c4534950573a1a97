#include "phonodist/entropy.hpp"

#include <gsl/gsl_sf_gamma.h>
#include <gsl/gsl_sf_psi.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace phonodist::entropy {

namespace {

double psi(double x) { return gsl_sf_psi(x); }
double psi1(double x) { return gsl_sf_psi_1(x); }

// lgamma(a + x) - lgamma(a) without cancellation for large a.
double lgamma_diff(double a, double x) {
  if (x == 0.0) return 0.0;
  if (a > 1e5 && a > 100.0 * x) {
    // Taylor expansion in x around a; terms decay like (x/a)^k.
    const double t1 = x * psi(a);
    const double t2 = 0.5 * x * x * psi1(a);
    const double t3 = x * x * x / 6.0 * gsl_sf_psi_n(2, a);
    const double t4 = x * x * x * x / 24.0 * gsl_sf_psi_n(3, a);
    return t1 + t2 + t3 + t4;
  }
  return gsl_sf_lngamma(a + x) - gsl_sf_lngamma(a);
}

struct CountHistogram {
  std::vector<double> count;  // distinct nonzero counts
  std::vector<double> mult;   // multiplicities
  double n = 0.0;             // total samples
  double k1 = 0.0;            // observed support
};

CountHistogram histogram_from(const std::vector<std::pair<double, double>>& count_mult) {
  CountHistogram h;
  for (const auto& [c, m] : count_mult) {
    if (m <= 0.0) continue;
    if (c <= 0.0) throw std::invalid_argument("NSB histogram: counts must be positive");
    h.count.push_back(c);
    h.mult.push_back(m);
    h.n += c * m;
    h.k1 += m;
  }
  if (h.k1 <= 0.0) throw std::invalid_argument("NSB histogram: no observations");
  return h;
}

// Posterior machinery for a symmetric Dirichlet(beta) prior over K bins.
class NsbPosterior {
 public:
  NsbPosterior(const CountHistogram& h, double alphabet) : h_(h), k_(alphabet) {}

  double xi(double beta) const { return psi(k_ * beta + 1.0) - psi(beta + 1.0); }

  double dxi(double beta) const { return k_ * psi1(k_ * beta + 1.0) - psi1(beta + 1.0); }

  // log of the marginal likelihood of the counts given beta.
  double log_evidence(double beta) const {
    double f = -lgamma_diff(k_ * beta, h_.n);
    for (std::size_t g = 0; g < h_.count.size(); ++g) {
      f += h_.mult[g] * lgamma_diff(beta, h_.count[g]);
    }
    return f;
  }

  // Posterior mean of the entropy given beta (Dirichlet posterior n_i + beta).
  double mean_entropy(double beta) const {
    const double lam0 = h_.n + k_ * beta;
    double s = (k_ - h_.k1) * beta * psi(beta + 1.0);
    for (std::size_t g = 0; g < h_.count.size(); ++g) {
      const double lam = h_.count[g] + beta;
      s += h_.mult[g] * lam * psi(lam + 1.0);
    }
    return psi(lam0 + 1.0) - s / lam0;
  }

  // Posterior second moment of the entropy given beta.
  double mean_entropy_sq(double beta) const {
    const double lam0 = h_.n + k_ * beta;
    const double p0 = psi(lam0 + 2.0);
    const double p1 = psi1(lam0 + 2.0);

    double sum_a = 0.0, sum_a2 = 0.0, sum_l2 = 0.0, diag = 0.0;
    auto accumulate = [&](double lam, double m) {
      const double d = psi(lam + 1.0) - p0;
      const double a = lam * d;
      sum_a += m * a;
      sum_a2 += m * a * a;
      sum_l2 += m * lam * lam;
      const double d2 = psi(lam + 2.0) - p0;
      diag += m * lam * (lam + 1.0) * (d2 * d2 + psi1(lam + 2.0) - p1);
    };
    for (std::size_t g = 0; g < h_.count.size(); ++g) accumulate(h_.count[g] + beta, h_.mult[g]);
    if (k_ > h_.k1) accumulate(beta, k_ - h_.k1);

    const double cross = sum_a * sum_a - sum_a2 - p1 * (lam0 * lam0 - sum_l2);
    return (cross + diag) / (lam0 * (lam0 + 1.0));
  }

  // Inverts xi(beta) = target on [beta_lo, beta_hi] (xi is increasing).
  double beta_for_xi(double target, double beta_lo, double beta_hi) const {
    double lo = std::log(beta_lo), hi = std::log(beta_hi);
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 100; ++it) {
      const double beta = std::exp(t);
      const double f = xi(beta) - target;
      if (f > 0.0) hi = t;
      else lo = t;
      const double deriv = dxi(beta) * beta;  // d xi / d log beta
      double step = (deriv > 0.0) ? f / deriv : 0.0;
      double next = t - step;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - t) < 1e-13 * std::max(1.0, std::abs(t))) {
        t = next;
        break;
      }
      t = next;
    }
    return std::exp(t);
  }

 private:
  const CountHistogram& h_;
  double k_;
};

// 16-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr int kGL = 16;
const double kGLx[kGL] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318, -0.7554044083550030,
    -0.6178762444026438, -0.4580167776572274, -0.2816035507792589, -0.0950125098376374,
    0.0950125098376374,  0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,  0.9894009349916499};
const double kGLw[kGL] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928, 0.1246289712555339,
    0.1495959888165767, 0.1691565193950025, 0.1826034150449236, 0.1894506104550685,
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

}  // namespace

Estimator estimator_from_string(std::string_view name) {
  if (name == "plugin") return Estimator::plugin;
  if (name == "miller_madow") return Estimator::miller_madow;
  if (name == "nsb") return Estimator::nsb;
  throw std::runtime_error("unknown entropy estimator '" + std::string(name) + "'");
}

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::plugin: return "plugin";
    case Estimator::miller_madow: return "miller_madow";
    case Estimator::nsb: return "nsb";
  }
  return "?";
}

double entropy_plugin(const blocks::BlockDistribution& dist) {
  if (dist.total == 0) throw std::invalid_argument("entropy of an empty distribution");
  const double n = static_cast<double>(dist.total);
  double s = 0.0;
  for (const auto& [key, c] : dist.counts) {
    const double cd = static_cast<double>(c);
    s += cd * std::log(cd);
  }
  return std::log(n) - s / n;
}

double entropy_miller_madow(const blocks::BlockDistribution& dist) {
  const double k1 = static_cast<double>(dist.counts.size());
  return entropy_plugin(dist) + (k1 - 1.0) / (2.0 * static_cast<double>(dist.total));
}

NsbResult nsb_from_multiplicities(const std::vector<std::pair<double, double>>& count_mult,
                                  double n_samples, double alphabet_size) {
  const CountHistogram h = histogram_from(count_mult);
  if (std::abs(h.n - n_samples) > 1e-6 * std::max(1.0, n_samples)) {
    throw std::invalid_argument("NSB: histogram mass does not match n_samples");
  }
  if (alphabet_size < h.k1) {
    throw std::invalid_argument("NSB: alphabet size " + std::to_string(alphabet_size) +
                                " smaller than observed support " + std::to_string(h.k1));
  }
  if (alphabet_size <= 1.0 + 1e-12) return {0.0, 0.0, {}};

  const NsbPosterior post(h, alphabet_size);
  const double beta_min = 1e-12;
  const double beta_max = 1e12;
  const double ln_k = std::log(alphabet_size);

  // Integrate over t = ln(beta). The flat prior over xi contributes the
  // Jacobian dxi/dt = xi'(beta) * beta, which turns posteriors squashed
  // against the xi = ln K boundary into a smooth, slowly-decaying tail.
  auto log_weight = [&](double t) {
    const double beta = std::exp(t);
    const double jac = post.dxi(beta) * beta;
    if (!(jac > 0.0)) return -std::numeric_limits<double>::infinity();
    return post.log_evidence(beta) + std::log(jac);
  };

  const double t_lo = std::log(beta_min);
  const double t_hi = std::log(beta_max);
  const int scan_n = 257;
  std::vector<double> ts(scan_n), lw(scan_n);
  NsbDiagnostics diag;
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < scan_n; ++i) {
    ts[i] = t_lo + (t_hi - t_lo) * static_cast<double>(i) / (scan_n - 1);
    lw[i] = log_weight(ts[i]);
    ++diag.evaluations;
    if (lw[i] > peak) {
      peak = lw[i];
      diag.beta_peak = std::exp(ts[i]);
      diag.xi_peak = post.xi(diag.beta_peak);
    }
  }
  diag.log_evidence_peak = peak;

  // Integration region: scan intervals within 46 nats of the peak.
  std::vector<std::pair<double, double>> regions;
  {
    int i = 0;
    while (i < scan_n - 1) {
      if (std::max(lw[i], lw[i + 1]) >= peak - 46.0) {
        int j = i;
        while (j < scan_n - 1 && std::max(lw[j], lw[j + 1]) >= peak - 46.0) ++j;
        const int a = std::max(0, i - 1);
        const int b = std::min(scan_n - 1, j + 1);
        regions.emplace_back(ts[a], ts[b]);
        i = j + 1;
      } else {
        ++i;
      }
    }
  }
  if (regions.empty()) regions.emplace_back(t_lo, t_hi);

  auto integrate = [&](int panels_per_region, double* out) {
    double i0 = 0.0, i1 = 0.0, i2 = 0.0;
    for (const auto& [a, b] : regions) {
      const double panel_width = (b - a) / panels_per_region;
      for (int p = 0; p < panels_per_region; ++p) {
        const double lo = a + p * panel_width;
        const double mid = lo + 0.5 * panel_width;
        const double half = 0.5 * panel_width;
        for (int qn = 0; qn < kGL; ++qn) {
          const double t = mid + half * kGLx[qn];
          const double w = std::exp(log_weight(t) - peak) * kGLw[qn] * half;
          ++diag.evaluations;
          if (w <= 0.0) continue;
          const double beta = std::exp(t);
          i0 += w;
          i1 += w * post.mean_entropy(beta);
          i2 += w * post.mean_entropy_sq(beta);
        }
      }
    }
    out[0] = i0;
    out[1] = i1;
    out[2] = i2;
  };

  double prev[3] = {0, 0, 0}, cur[3] = {0, 0, 0};
  int panels = 8;
  integrate(panels, prev);
  bool converged = false;
  for (int round = 0; round < 6; ++round) {
    panels *= 2;
    integrate(panels, cur);
    const double s_prev = prev[1] / std::max(prev[0], 1e-300);
    const double s_cur = cur[1] / std::max(cur[0], 1e-300);
    const double v_prev = prev[2] / std::max(prev[0], 1e-300);
    const double v_cur = cur[2] / std::max(cur[0], 1e-300);
    if (std::abs(s_cur - s_prev) <= 1e-9 * std::max(1.0, std::abs(s_cur)) &&
        std::abs(v_cur - v_prev) <= 1e-8 * std::max(1.0, std::abs(v_cur))) {
      converged = true;
      break;
    }
    prev[0] = cur[0];
    prev[1] = cur[1];
    prev[2] = cur[2];
  }
  diag.panels = panels;
  if (!converged) {
    std::ostringstream os;
    os << "NSB quadrature did not converge: N=" << h.n << " K1=" << h.k1
       << " K=" << alphabet_size << " peak_xi=" << diag.xi_peak << " panels=" << panels;
    throw std::runtime_error(os.str());
  }

  // Boundary strips of xi-mass outside [xi(beta_min), xi(beta_max)]: the
  // evidence is flat there, so treat them as rectangles at the endpoints.
  {
    const double w_lo = std::exp(post.log_evidence(beta_min) - peak) * post.xi(beta_min);
    if (w_lo > 0.0) {
      cur[0] += w_lo;
      cur[1] += w_lo * post.mean_entropy(beta_min);
      cur[2] += w_lo * post.mean_entropy_sq(beta_min);
    }
    const double w_hi =
        std::exp(post.log_evidence(beta_max) - peak) * (ln_k - post.xi(beta_max));
    if (w_hi > 0.0) {
      cur[0] += w_hi;
      cur[1] += w_hi * post.mean_entropy(beta_max);
      cur[2] += w_hi * post.mean_entropy_sq(beta_max);
    }
  }

  NsbResult result;
  result.entropy = cur[1] / cur[0];
  result.stderr_ = std::sqrt(std::max(0.0, cur[2] / cur[0] - result.entropy * result.entropy));
  result.diag = diag;
  return result;
}

NsbResult entropy_nsb(const blocks::BlockDistribution& dist, double alphabet_size) {
  if (dist.total == 0) throw std::invalid_argument("entropy of an empty distribution");
  std::unordered_map<std::uint64_t, double> mult;
  for (const auto& [key, c] : dist.counts) mult[c] += 1.0;
  std::vector<std::pair<double, double>> count_mult;
  count_mult.reserve(mult.size());
  for (const auto& [c, m] : mult) count_mult.emplace_back(static_cast<double>(c), m);
  std::sort(count_mult.begin(), count_mult.end());
  return nsb_from_multiplicities(count_mult, static_cast<double>(dist.total), alphabet_size);
}

namespace {

double nsb_alphabet(const blocks::BlockDistribution& dist, double cap_factor) {
  const double lr = std::pow(static_cast<double>(dist.source_L), static_cast<double>(dist.r));
  const double cap = static_cast<double>(dist.counts.size()) * cap_factor;
  return std::max(static_cast<double>(dist.counts.size()), std::min(lr, cap));
}

double curve_value(const blocks::BlockDistribution& dist, Estimator estimator, double cap_factor,
                   double* stderr_out) {
  switch (estimator) {
    case Estimator::plugin:
      return entropy_plugin(dist);
    case Estimator::miller_madow:
      return entropy_miller_madow(dist);
    case Estimator::nsb: {
      const NsbResult r = entropy_nsb(dist, nsb_alphabet(dist, cap_factor));
      if (stderr_out) *stderr_out = r.stderr_;
      return r.entropy;
    }
  }
  throw std::logic_error("unknown estimator");
}

}  // namespace

EntropyCurve block_entropy_curve(const corpus::PhonemeStream& stream, int r_upper,
                                 Estimator estimator, double alphabet_cap_factor) {
  if (r_upper < 1) throw std::invalid_argument("r_upper must be >= 1");
  if (static_cast<std::size_t>(r_upper) > stream.size()) {
    throw std::invalid_argument("r_upper=" + std::to_string(r_upper) + " exceeds stream length " +
                                std::to_string(stream.size()));
  }
  EntropyCurve curve;
  curve.estimator = estimator;
  curve.values.assign(static_cast<std::size_t>(r_upper) + 1, 0.0);
  if (estimator == Estimator::nsb) curve.stderrs.assign(curve.values.size(), 0.0);
  for (int r = 1; r <= r_upper; ++r) {
    const auto dist = blocks::count_blocks(stream, r);
    double se = 0.0;
    curve.values[static_cast<std::size_t>(r)] =
        curve_value(dist, estimator, alphabet_cap_factor, &se);
    if (estimator == Estimator::nsb) curve.stderrs[static_cast<std::size_t>(r)] = se;
  }
  return curve;
}

GainSequence predictability_gain(const EntropyCurve& curve) {
  if (curve.values.size() < 3) {
    throw std::invalid_argument("predictability gain needs an entropy curve of length >= 3");
  }
  GainSequence g;
  g.values.resize(curve.values.size() - 2);
  for (std::size_t u = 0; u + 2 < curve.values.size(); ++u) {
    g.values[u] = -(curve.values[u + 2] - 2.0 * curve.values[u + 1] + curve.values[u]);
  }
  return g;
}

std::vector<double> gain_jackknife_stderr(const corpus::PhonemeStream& stream, int r_upper,
                                          Estimator estimator, int n_blocks,
                                          double alphabet_cap_factor) {
  if (r_upper < 2) throw std::invalid_argument("gain stderr needs r_upper >= 2");
  const std::size_t n = stream.size();
  if (static_cast<std::size_t>(r_upper) > n) {
    throw std::invalid_argument("r_upper exceeds stream length");
  }
  const int j_total = std::max(2, std::min<int>(n_blocks, static_cast<int>(n / 2)));

  // Leave-one-segment-out entropy curves; windows keyed by start token index.
  std::vector<std::vector<double>> h(static_cast<std::size_t>(j_total));
  for (auto& v : h) v.assign(static_cast<std::size_t>(r_upper) + 1, 0.0);

  for (int r = 1; r <= r_upper; ++r) {
    const auto full = blocks::count_blocks(stream, r);
    if (full.bits == 0) {
      throw std::invalid_argument("gain stderr: r too large for packed block keys");
    }
    std::vector<std::unordered_map<std::uint64_t, std::uint64_t>> seg(
        static_cast<std::size_t>(j_total));
    // Re-walk windows, assigning each to the segment of its start token.
    std::vector<std::uint32_t> ids(n);
    {
      std::unordered_map<std::string_view, std::uint32_t> index;
      for (std::uint32_t i = 0; i < full.alphabet.size(); ++i) index.emplace(full.alphabet[i], i);
      for (std::size_t i = 0; i < n; ++i) ids[i] = index.at(stream.tokens[i]);
    }
    const std::uint64_t mask =
        (r * full.bits == 64) ? ~0ULL : ((1ULL << (r * full.bits)) - 1);
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < n; ++i) {
      key = ((key << full.bits) | ids[i]) & mask;
      if (i + 1 >= static_cast<std::size_t>(r)) {
        const std::size_t start = i + 1 - static_cast<std::size_t>(r);
        const std::size_t s = std::min<std::size_t>(
            static_cast<std::size_t>(j_total) - 1,
            start * static_cast<std::size_t>(j_total) / n);
        ++seg[s][key];
      }
    }
    const double k_full = (estimator == Estimator::nsb)
                              ? nsb_alphabet(full, alphabet_cap_factor)
                              : 0.0;
    for (int j = 0; j < j_total; ++j) {
      blocks::BlockDistribution rep = full;
      for (const auto& [k, c] : seg[static_cast<std::size_t>(j)]) {
        auto it = rep.counts.find(k);
        it->second -= c;
        rep.total -= c;
        if (it->second == 0) rep.counts.erase(it);
      }
      if (rep.total == 0) continue;
      rep.source_N = rep.total + static_cast<std::uint64_t>(r) - 1;
      double value = 0.0;
      switch (estimator) {
        case Estimator::plugin: value = entropy_plugin(rep); break;
        case Estimator::miller_madow: value = entropy_miller_madow(rep); break;
        case Estimator::nsb: {
          const double k_rep = std::max(k_full, static_cast<double>(rep.counts.size()));
          value = entropy_nsb(rep, k_rep).entropy;
          break;
        }
      }
      h[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = value;
    }
  }

  const std::size_t n_gains = static_cast<std::size_t>(r_upper) - 1;
  std::vector<double> mean(n_gains, 0.0);
  std::vector<std::vector<double>> g(static_cast<std::size_t>(j_total),
                                     std::vector<double>(n_gains, 0.0));
  for (int j = 0; j < j_total; ++j) {
    for (std::size_t u = 0; u < n_gains; ++u) {
      const auto& hj = h[static_cast<std::size_t>(j)];
      g[static_cast<std::size_t>(j)][u] = -(hj[u + 2] - 2.0 * hj[u + 1] + hj[u]);
      mean[u] += g[static_cast<std::size_t>(j)][u];
    }
  }
  for (double& m : mean) m /= static_cast<double>(j_total);
  std::vector<double> se(n_gains, 0.0);
  for (std::size_t u = 0; u < n_gains; ++u) {
    double ss = 0.0;
    for (int j = 0; j < j_total; ++j) {
      const double d = g[static_cast<std::size_t>(j)][u] - mean[u];
      ss += d * d;
    }
    se[u] = std::sqrt(ss * static_cast<double>(j_total - 1) / static_cast<double>(j_total));
  }
  return se;
}

OrderEstimate estimate_order(const GainSequence& gains_fine,
                             const std::vector<GainSequence>& gains_coarse, double tolerance) {
  if (gains_fine.values.empty()) {
    throw std::invalid_argument("estimate_order needs at least one gain value");
  }
  OrderEstimate est;
  est.tolerance = tolerance;
  est.fine = gains_fine;
  est.coarse = gains_coarse;

  const auto& g = gains_fine.values;
  int last_above = -1;
  for (std::size_t u = 0; u < g.size(); ++u) {
    if (g[u] > tolerance) last_above = static_cast<int>(u);
  }
  est.m = last_above + 1;
  est.censored = (est.m == static_cast<int>(g.size()));

  est.coarse_confirms = true;
  for (const auto& seq : gains_coarse) {
    for (std::size_t u = static_cast<std::size_t>(est.m); u < seq.values.size(); ++u) {
      if (seq.values[u] > tolerance) {
        est.coarse_confirms = false;
        break;
      }
    }
    if (!est.coarse_confirms) break;
  }
  return est;
}

double default_order_tolerance(const std::vector<double>& gain_stderrs, double floor) {
  double mx = 0.0;
  for (double s : gain_stderrs) mx = std::max(mx, s);
  return std::max(floor, 2.0 * mx);
}

}  // namespace phonodist::entropy
