#include "phonodist/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "phonodist/parallel.hpp"

namespace phonodist::transport {

namespace {

constexpr double kMarginalTol = 1e-9;

double vec_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

void TransportProblem::validate() const {
  if (p.empty() || q.empty()) throw std::invalid_argument("transport problem with empty marginal");
  if (cost.rows != p.size() || cost.cols != q.size()) {
    throw std::invalid_argument("transport cost matrix shape does not match marginals");
  }
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument("transport marginal has a negative entry");
  }
  for (double x : q) {
    if (!(x >= 0.0)) throw std::invalid_argument("transport marginal has a negative entry");
  }
  for (double c : cost.data) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw std::invalid_argument("transport cost must be finite and non-negative");
    }
  }
  if (std::abs(vec_sum(p) - 1.0) > kMarginalTol || std::abs(vec_sum(q) - 1.0) > kMarginalTol) {
    throw std::invalid_argument("transport marginals must sum to 1 within 1e-9");
  }
}

double TransportPlan::max_marginal_violation(const std::vector<double>& p,
                                             const std::vector<double>& q) const {
  double worst = 0.0;
  for (std::size_t i = 0; i < gamma.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < gamma.cols; ++j) s += gamma(i, j);
    worst = std::max(worst, std::abs(s - p[i]));
  }
  for (std::size_t j = 0; j < gamma.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < gamma.rows; ++i) s += gamma(i, j);
    worst = std::max(worst, std::abs(s - q[j]));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Exact solver: transportation simplex with a spanning-tree basis.
// ---------------------------------------------------------------------------

namespace {

struct BasicCell {
  std::size_t i, j;
  double flow;
};

}  // namespace

ExactResult wasserstein_exact(const TransportProblem& problem, std::size_t cap) {
  problem.validate();
  const std::size_t n = problem.p.size();
  const std::size_t m = problem.q.size();
  if (n * m > cap) {
    throw std::runtime_error("exact transport instance of size " + std::to_string(n) + "x" +
                             std::to_string(m) +
                             " exceeds the exact-solver cap; use the Sinkhorn solver");
  }
  const double sp = vec_sum(problem.p);
  const double sq = vec_sum(problem.q);
  if (std::abs(sp - sq) > kMarginalTol) {
    throw std::runtime_error("infeasible transport marginals: masses differ by " +
                             std::to_string(sp - sq));
  }
  // Balance exactly so the simplex sees consistent totals.
  std::vector<double> p = problem.p;
  std::vector<double> q = problem.q;
  if (sq != 0.0) {
    const double scale = sp / sq;
    for (double& x : q) x *= scale;
  }

  // Northwest-corner initial basis: exactly n + m - 1 cells.
  std::vector<BasicCell> basis;
  basis.reserve(n + m - 1);
  {
    std::size_t i = 0, j = 0;
    double a = p[0], b = q[0];
    for (;;) {
      const double f = std::min(a, b);
      basis.push_back({i, j, f});
      a -= f;
      b -= f;
      if (i == n - 1 && j == m - 1) break;
      if (j == m - 1 || (a <= b && i < n - 1)) {
        ++i;
        a = p[i];
      } else {
        ++j;
        b = q[j];
      }
    }
  }
  if (basis.size() != n + m - 1) {
    throw std::logic_error("transportation simplex: bad initial basis size");
  }

  const std::size_t nodes = n + m;
  std::vector<double> u(n, 0.0), v(m, 0.0);
  std::vector<int> parent(nodes), parent_edge(nodes), order(nodes);
  std::vector<std::vector<int>> adj(nodes);

  auto rebuild_adjacency = [&]() {
    for (auto& a : adj) a.clear();
    for (std::size_t e = 0; e < basis.size(); ++e) {
      adj[basis[e].i].push_back(static_cast<int>(e));
      adj[n + basis[e].j].push_back(static_cast<int>(e));
    }
  };

  // BFS over the basis tree from node 0; fills parents, traversal order, duals.
  auto solve_duals = [&]() {
    std::fill(parent.begin(), parent.end(), -2);
    std::size_t head = 0, tail = 0;
    order[tail++] = 0;
    parent[0] = -1;
    u[0] = 0.0;
    while (head < tail) {
      const int x = order[head++];
      for (int e : adj[static_cast<std::size_t>(x)]) {
        const auto& cell = basis[static_cast<std::size_t>(e)];
        const int y = (static_cast<std::size_t>(x) == cell.i)
                          ? static_cast<int>(n + cell.j)
                          : static_cast<int>(cell.i);
        if (parent[static_cast<std::size_t>(y)] != -2) continue;
        parent[static_cast<std::size_t>(y)] = x;
        parent_edge[static_cast<std::size_t>(y)] = e;
        const double c = problem.cost(cell.i, cell.j);
        if (static_cast<std::size_t>(y) >= n) {
          v[static_cast<std::size_t>(y) - n] = c - u[static_cast<std::size_t>(x)];
        } else {
          u[static_cast<std::size_t>(y)] = c - v[static_cast<std::size_t>(x) - n];
        }
        order[tail++] = y;
      }
    }
    if (tail != nodes) throw std::logic_error("transportation simplex: basis not a spanning tree");
  };

  double cost_scale = 1.0;
  for (double c : problem.cost.data) cost_scale = std::max(cost_scale, std::abs(c));
  const double enter_tol = 1e-12 * cost_scale;

  const std::size_t max_pivots = 400 * (n + m) * (n + m) + 10000;
  const std::size_t bland_after = max_pivots / 2;
  std::size_t pivot = 0;
  std::vector<int> depth(nodes, 0);

  for (;; ++pivot) {
    if (pivot > max_pivots) {
      throw std::runtime_error("transportation simplex did not terminate (degenerate cycling?)");
    }
    rebuild_adjacency();
    solve_duals();
    for (std::size_t k = 0; k < nodes; ++k) {  // BFS order: parents first
      const std::size_t x = static_cast<std::size_t>(order[k]);
      const int px = parent[x];
      depth[x] = (px < 0) ? 0 : depth[static_cast<std::size_t>(px)] + 1;
    }

    // Entering arc: most negative reduced cost (Bland's rule past the cap).
    std::size_t ei = 0, ej = 0;
    double best = -enter_tol;
    bool found = false;
    const bool bland = pivot >= bland_after;
    for (std::size_t i = 0; i < n && !(found && bland); ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double red = problem.cost(i, j) - u[i] - v[j];
        if (red < best) {
          best = red;
          ei = i;
          ej = j;
          found = true;
          if (bland) break;
        }
      }
    }
    if (!found) break;  // optimal

    // Unique cycle: path from row node ei to column node n+ej in the tree.
    std::size_t x = ei, y = n + ej;
    std::vector<int> path_x, path_y;  // edges along each side
    while (x != y) {
      if (depth[x] >= depth[y]) {
        path_x.push_back(parent_edge[x]);
        x = static_cast<std::size_t>(parent[x]);
      } else {
        path_y.push_back(parent_edge[y]);
        y = static_cast<std::size_t>(parent[y]);
      }
    }
    // Orient the cycle: the entering arc carries +theta, so the basic edge
    // adjacent to each of its endpoints carries -theta, alternating outward.
    std::vector<std::pair<int, int>> signed_edges;  // (edge, sign)
    for (std::size_t k = 0; k < path_x.size(); ++k) {
      signed_edges.emplace_back(path_x[k], (k % 2 == 0) ? -1 : +1);
    }
    for (std::size_t k = 0; k < path_y.size(); ++k) {
      signed_edges.emplace_back(path_y[k], (k % 2 == 0) ? -1 : +1);
    }

    double theta = std::numeric_limits<double>::infinity();
    int leaving = -1;
    for (const auto& [e, sign] : signed_edges) {
      if (sign < 0) {
        const double f = basis[static_cast<std::size_t>(e)].flow;
        const auto& cell = basis[static_cast<std::size_t>(e)];
        const auto& lead = (leaving >= 0) ? basis[static_cast<std::size_t>(leaving)] : cell;
        if (f < theta - 1e-15 ||
            (leaving >= 0 && std::abs(f - theta) <= 1e-15 &&
             (cell.i < lead.i || (cell.i == lead.i && cell.j < lead.j)))) {
          theta = f;
          leaving = e;
        }
      }
    }
    if (leaving < 0) throw std::logic_error("transportation simplex: unbounded pivot");

    for (const auto& [e, sign] : signed_edges) {
      basis[static_cast<std::size_t>(e)].flow += sign * theta;
    }
    basis[static_cast<std::size_t>(leaving)] = {ei, ej, theta};
  }

  ExactResult result;
  result.pivots = pivot;
  result.plan.gamma = Matrix(n, m, 0.0);
  double objective = 0.0;
  for (const auto& cell : basis) {
    const double f = std::max(0.0, cell.flow);
    result.plan.gamma(cell.i, cell.j) += f;
    objective += f * problem.cost(cell.i, cell.j);
  }
  result.plan.objective = objective;
  result.value = objective;
  double dual = 0.0;
  for (std::size_t i = 0; i < n; ++i) dual += u[i] * p[i];
  for (std::size_t j = 0; j < m; ++j) dual += v[j] * q[j];
  result.duality_gap = std::abs(objective - dual);
  result.u = std::move(u);
  result.v = std::move(v);

  const double violation = result.plan.max_marginal_violation(problem.p, problem.q);
  if (violation > 1e-7) {
    throw std::logic_error("exact transport plan violates marginals by " +
                           std::to_string(violation));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sinkhorn
// ---------------------------------------------------------------------------

namespace {

// Rounds gamma onto the transport polytope (scale rows, scale columns, then
// spread the residual as a rank-one correction).
void round_to_feasible(Matrix& gamma, const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t n = gamma.rows, m = gamma.cols;
  std::vector<double> row(n, 0.0), col(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) row[i] += gamma(i, j);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double s = (row[i] > 0.0) ? std::min(1.0, p[i] / row[i]) : 0.0;
    for (std::size_t j = 0; j < m; ++j) gamma(i, j) *= s;
  }
  for (std::size_t j = 0; j < m; ++j) {
    col[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) col[j] += gamma(i, j);
  }
  for (std::size_t j = 0; j < m; ++j) {
    const double s = (col[j] > 0.0) ? std::min(1.0, q[j] / col[j]) : 0.0;
    for (std::size_t i = 0; i < n; ++i) gamma(i, j) *= s;
  }
  std::vector<double> err_r(n, 0.0), err_c(m, 0.0);
  double total_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += gamma(i, j);
    err_r[i] = p[i] - s;
    total_err += std::abs(err_r[i]);
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += gamma(i, j);
    err_c[j] = q[j] - s;
  }
  if (total_err > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (err_r[i] == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) {
        gamma(i, j) += err_r[i] * err_c[j] / total_err;
      }
    }
  }
}

double logsumexp(const std::vector<double>& row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : row) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : row) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

SinkhornResult wasserstein_sinkhorn(const TransportProblem& problem, double epsilon, int max_iter,
                                    double tol, bool epsilon_scaling) {
  problem.validate();
  if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn epsilon must be positive");
  const std::size_t n = problem.p.size();
  const std::size_t m = problem.q.size();
  const std::vector<double>& p = problem.p;
  const std::vector<double>& q = problem.q;

  double max_cost = 0.0;
  for (double c : problem.cost.data) max_cost = std::max(max_cost, c);

  std::vector<double> f(n, 0.0), g(m, 0.0);  // potentials (log domain)
  bool log_domain = false;
  int iterations = 0;
  double violation = std::numeric_limits<double>::infinity();

  std::vector<double> lp(n), lq(m);
  for (std::size_t i = 0; i < n; ++i) lp[i] = (p[i] > 0.0) ? std::log(p[i]) : -1e300;
  for (std::size_t j = 0; j < m; ++j) lq[j] = (q[j] > 0.0) ? std::log(q[j]) : -1e300;

  // Epsilon annealing schedule, warm-starting the potentials.
  std::vector<double> schedule;
  if (epsilon_scaling && max_cost > 0.0) {
    double e = std::max(epsilon, 0.5 * max_cost);
    while (e > epsilon * 1.0001) {
      schedule.push_back(e);
      e *= 0.5;
    }
  }
  schedule.push_back(epsilon);

  std::vector<double> scratch(std::max(n, m));
  Matrix gamma(n, m, 0.0);

  auto compute_gamma_and_violation = [&](double eps) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        gamma(i, j) = std::exp((f[i] + g[j] - problem.cost(i, j)) / eps + lp[i] + lq[j]);
      }
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gamma(i, j);
      worst = std::max(worst, std::abs(s - p[i]));
    }
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += gamma(i, j);
      worst = std::max(worst, std::abs(s - q[j]));
    }
    return worst;
  };

  Matrix kernel;  // exp(-C/eps), rebuilt per stage in the standard domain
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double eps = schedule[stage];
    const bool final_stage = (stage + 1 == schedule.size());
    const int stage_iters = final_stage ? max_iter : std::min(max_iter, 500);
    const double stage_tol = final_stage ? tol : std::max(1e-4, 10.0 * tol);

    // Standard scaling would overflow exp() here; go straight to log domain.
    double pot_mag = 0.0;
    for (double x : f) pot_mag = std::max(pot_mag, std::abs(x));
    for (double x : g) pot_mag = std::max(pot_mag, std::abs(x));
    if (std::max(max_cost, pot_mag) / eps > 500.0) log_domain = true;

    if (!log_domain) {
      // Standard scaling on a cached kernel. After every su update the row
      // marginals are exact by construction, so only columns need checking.
      kernel = Matrix(n, m, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) kernel(i, j) = std::exp(-problem.cost(i, j) / eps);
      }
      std::vector<double> su(n), sv(m);
      for (std::size_t i = 0; i < n; ++i) su[i] = std::exp(f[i] / eps);
      for (std::size_t j = 0; j < m; ++j) sv[j] = std::exp(g[j] / eps);
      bool underflow = false;
      for (int it = 0; it < stage_iters && !underflow; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          const double* krow = &kernel.data[i * m];
          for (std::size_t j = 0; j < m; ++j) s += krow[j] * sv[j] * q[j];
          if (!(s > 0.0) || !std::isfinite(s)) {
            underflow = true;
            break;
          }
          su[i] = 1.0 / s;
        }
        if (underflow) break;
        for (std::size_t j = 0; j < m; ++j) scratch[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double w = su[i] * p[i];
          const double* krow = &kernel.data[i * m];
          for (std::size_t j = 0; j < m; ++j) scratch[j] += krow[j] * w;
        }
        for (std::size_t j = 0; j < m; ++j) {
          if (!(scratch[j] > 0.0) || !std::isfinite(scratch[j])) {
            underflow = true;
            break;
          }
          sv[j] = 1.0 / scratch[j];
        }
        if (underflow) break;
        ++iterations;
        if ((it + 1) % 10 == 0 || it + 1 == stage_iters) {
          // After the sv update the columns are exact by construction; the
          // residual infeasibility lives in the rows.
          double worst = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            const double* krow = &kernel.data[i * m];
            for (std::size_t j = 0; j < m; ++j) s += krow[j] * sv[j] * q[j];
            worst = std::max(worst, std::abs(su[i] * p[i] * s - p[i]));
          }
          violation = worst;
          if (violation <= stage_tol) break;
        }
      }
      if (!underflow) {
        for (std::size_t i = 0; i < n && !underflow; ++i) {
          underflow = !(su[i] > 0.0) || !std::isfinite(su[i]);
        }
        for (std::size_t j = 0; j < m && !underflow; ++j) {
          underflow = !(sv[j] > 0.0) || !std::isfinite(sv[j]);
        }
      }
      if (!underflow) {
        for (std::size_t i = 0; i < n; ++i) f[i] = eps * std::log(su[i]);
        for (std::size_t j = 0; j < m; ++j) g[j] = eps * std::log(sv[j]);
        continue;
      }
      // Restart this stage with stabilized updates, keeping the potentials
      // from the previous stage as a warm start.
      log_domain = true;
    }

    // Log-domain alternating updates.
    for (int it = 0; it < stage_iters; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        scratch.resize(m);
        for (std::size_t j = 0; j < m; ++j) {
          scratch[j] = (g[j] - problem.cost(i, j)) / eps + lq[j];
        }
        f[i] = -eps * logsumexp(scratch);
      }
      for (std::size_t j = 0; j < m; ++j) {
        scratch.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          scratch[i] = (f[i] - problem.cost(i, j)) / eps + lp[i];
        }
        g[j] = -eps * logsumexp(scratch);
      }
      ++iterations;
      if ((it + 1) % 10 == 0 || it + 1 == stage_iters) {
        violation = compute_gamma_and_violation(eps);
        if (violation <= stage_tol) break;
      }
    }
  }

  const double eps_final = schedule.back();
  violation = compute_gamma_and_violation(eps_final);

  SinkhornResult result;
  result.diag.iterations = iterations;
  result.diag.marginal_violation = violation;
  result.diag.converged = violation <= tol;
  result.diag.log_domain = log_domain;
  result.diag.epsilon = eps_final;

  round_to_feasible(gamma, p, q);
  double objective = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) objective += gamma(i, j) * problem.cost(i, j);
  }
  result.plan.gamma = std::move(gamma);
  result.plan.objective = objective;
  result.value = objective;
  const double rounded_violation = result.plan.max_marginal_violation(p, q);
  if (rounded_violation > 1e-9) {
    throw std::logic_error("rounded Sinkhorn plan violates marginals by " +
                           std::to_string(rounded_violation));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Language-level distances
// ---------------------------------------------------------------------------

void SupportDistribution::validate() const {
  if (support.size() != probs.size()) {
    throw std::logic_error("support distribution: support/probs size mismatch");
  }
  double s = 0.0;
  for (double x : probs) {
    if (!(x >= 0.0)) throw std::logic_error("support distribution: negative probability");
    s += x;
  }
  if (std::abs(s - 1.0) > kMarginalTol) {
    throw std::logic_error("support distribution does not sum to 1");
  }
}

namespace {

features::Triphone triphone_from(const std::vector<corpus::PhonemeToken>& toks) {
  if (toks.size() != 3) throw std::logic_error("expected a 3-phone block");
  return {toks[0], toks[1], toks[2]};
}

}  // namespace

SupportDistribution truncate_distribution(const blocks::BlockDistribution& dist,
                                          const TruncationPolicy& policy) {
  if (dist.r != 3) {
    throw std::invalid_argument("language distances operate on 3-phone distributions, got r=" +
                                std::to_string(dist.r));
  }
  const auto items = dist.items_by_count();
  if (items.empty()) throw std::runtime_error("empty 3-phone distribution");
  const double total = static_cast<double>(dist.total);
  const double target = std::min(1.0, std::max(0.0, policy.mass_coverage));
  SupportDistribution out;
  double covered = 0.0;
  for (const auto& item : items) {
    if (policy.max_support > 0 && out.support.size() >= policy.max_support) break;
    if (covered >= target && !out.support.empty()) break;
    out.support.push_back(triphone_from(dist.unpack(item.key)));
    out.probs.push_back(static_cast<double>(item.count) / total);
    covered += out.probs.back();
  }
  if (out.support.empty()) throw std::runtime_error("empty post-truncation support");
  double s = 0.0;
  for (double x : out.probs) s += x;
  for (double& x : out.probs) x /= s;
  return out;
}

SupportDistribution truncate_support(const SupportDistribution& dist,
                                     const TruncationPolicy& policy) {
  std::vector<std::size_t> idx(dist.support.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
    return dist.support[a] < dist.support[b];
  });
  const double target = std::min(1.0, std::max(0.0, policy.mass_coverage));
  SupportDistribution out;
  double covered = 0.0;
  for (std::size_t k : idx) {
    if (policy.max_support > 0 && out.support.size() >= policy.max_support) break;
    if (covered >= target && !out.support.empty()) break;
    out.support.push_back(dist.support[k]);
    out.probs.push_back(dist.probs[k]);
    covered += dist.probs[k];
  }
  if (out.support.empty()) throw std::runtime_error("empty post-truncation support");
  double s = 0.0;
  for (double x : out.probs) s += x;
  for (double& x : out.probs) x /= s;
  return out;
}

double wasserstein_between(const SupportDistribution& a, const SupportDistribution& b,
                           const features::FeatureTable& table,
                           const features::GroundMetricSpec& metric, const SinkhornParams& params,
                           PairDiagnostics* diag) {
  a.validate();
  b.validate();
  // Canonical orientation: the distance is symmetric, so solve each unordered
  // pair the same way regardless of argument order.
  const bool swap_args = std::tie(b.support, b.probs) < std::tie(a.support, a.probs);
  const SupportDistribution& p_side = swap_args ? b : a;
  const SupportDistribution& q_side = swap_args ? a : b;
  TransportProblem problem;
  problem.p = p_side.probs;
  problem.q = q_side.probs;
  problem.cost = features::ground_metric_matrix(p_side.support, q_side.support, table, metric);
  double mean_cost = 0.0;
  for (double c : problem.cost.data) mean_cost += c;
  mean_cost /= static_cast<double>(problem.cost.data.size());
  double eps = params.epsilon_abs ? *params.epsilon_abs : params.epsilon_factor * mean_cost;
  if (!(eps > 0.0)) eps = 1e-6;  // identical supports with zero cost
  const SinkhornResult r =
      wasserstein_sinkhorn(problem, eps, params.max_iter, params.tol, params.epsilon_scaling);
  if (diag) {
    diag->support_a = a.support.size();
    diag->support_b = b.support.size();
    diag->sinkhorn = r.diag;
  }
  return r.value;
}

double language_distance(const blocks::BlockDistribution& a, const blocks::BlockDistribution& b,
                         const features::FeatureTable& table,
                         const features::GroundMetricSpec& metric, const SinkhornParams& params,
                         const TruncationPolicy& truncation, PairDiagnostics* diag) {
  const SupportDistribution da = truncate_distribution(a, truncation);
  const SupportDistribution db = truncate_distribution(b, truncation);
  return wasserstein_between(da, db, table, metric, params, diag);
}

void DistanceMatrix::validate() const {
  const std::size_t n = labels.size();
  if (values.rows != n || values.cols != n) {
    throw std::logic_error("distance matrix shape does not match labels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (values(i, i) != 0.0) throw std::logic_error("distance matrix has a nonzero diagonal");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(values(i, j))) throw std::logic_error("distance matrix has a non-finite entry");
      if (std::abs(values(i, j) - values(j, i)) > 1e-9) {
        throw std::logic_error("distance matrix is not symmetric");
      }
    }
  }
}

DistanceMatrix distance_matrix(const std::vector<std::string>& labels,
                               const std::vector<const blocks::BlockDistribution*>& dists,
                               const features::FeatureTable& table,
                               const features::GroundMetricSpec& metric,
                               const SinkhornParams& params, const TruncationPolicy& truncation,
                               unsigned threads, std::vector<PairDiagnostics>* pair_diags) {
  if (labels.size() != dists.size()) {
    throw std::invalid_argument("distance_matrix: labels/distributions size mismatch");
  }
  const std::size_t n = labels.size();
  if (n < 2) throw std::invalid_argument("distance_matrix needs at least 2 languages");

  // Truncate once per language.
  std::vector<SupportDistribution> supports(n);
  for (std::size_t i = 0; i < n; ++i) {
    try {
      supports[i] = truncate_distribution(*dists[i], truncation);
    } catch (const std::exception& e) {
      throw std::runtime_error("language '" + labels[i] + "': " + e.what());
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> pair_values(pairs.size(), 0.0);
  std::vector<PairDiagnostics> diags(pairs.size());
  std::vector<std::string> errors(pairs.size());

  parallel_for(pairs.size(), threads, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    try {
      pair_values[k] =
          wasserstein_between(supports[i], supports[j], table, metric, params, &diags[k]);
    } catch (const std::exception& e) {
      errors[k] = "pair (" + labels[i] + ", " + labels[j] + "): " + e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error(e);
  }

  DistanceMatrix dm;
  dm.labels = labels;
  dm.values = Matrix(n, n, 0.0);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    dm.values(i, j) = pair_values[k];
    dm.values(j, i) = pair_values[k];
  }
  dm.variant = std::string(features::to_string(metric.variant));
  dm.epsilon_factor = params.epsilon_abs ? 0.0 : params.epsilon_factor;
  dm.mass_coverage = truncation.mass_coverage;
  if (pair_diags) *pair_diags = std::move(diags);
  dm.validate();
  return dm;
}

AverageDistribution average_distribution(const std::vector<const blocks::BlockDistribution*>& members) {
  if (members.empty()) throw std::invalid_argument("average_distribution of an empty family");
  std::map<features::Triphone, double> acc;
  for (const auto* m : members) {
    if (!m) throw std::invalid_argument("average_distribution: null member");
    if (m->r != 3) throw std::invalid_argument("average_distribution needs r=3 distributions");
    const double total = static_cast<double>(m->total);
    for (const auto& [key, c] : m->counts) {
      acc[triphone_from(m->unpack(key))] += static_cast<double>(c) / total;
    }
  }
  AverageDistribution avg;
  const double k = static_cast<double>(members.size());
  avg.support.reserve(acc.size());
  avg.probs.reserve(acc.size());
  for (const auto& [tri, mass] : acc) {
    avg.support.push_back(tri);
    avg.probs.push_back(mass / k);
  }
  avg.validate();
  return avg;
}

}  // namespace phonodist::transport
