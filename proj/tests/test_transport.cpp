#include "doctest.h"

#include <random>

#include "phonodist/transport.hpp"
#include "phonodist/rng.hpp"
#include "support/synth.hpp"

using namespace phonodist;

namespace {

transport::TransportProblem make_problem(std::vector<double> p, std::vector<double> q,
                                         Matrix cost) {
  transport::TransportProblem pr;
  pr.p = std::move(p);
  pr.q = std::move(q);
  pr.cost = std::move(cost);
  return pr;
}

const features::FeatureTable& shipped_table() {
  static const auto table = features::FeatureTable::load(PHONODIST_DATA_DIR "/features_24.csv");
  return table;
}

blocks::BlockDistribution triphone_dist(const corpus::PhonemeStream& s) {
  return blocks::count_blocks(s, 3);
}

corpus::PhonemeStream synth_language(const std::vector<std::string>& inventory, std::size_t n,
                                     std::uint64_t seed) {
  std::mt19937_64 g(seed);
  // First-order chain over the inventory for non-trivial triphone structure.
  const std::size_t l = inventory.size();
  std::vector<std::vector<double>> rows(l, std::vector<double>(l));
  for (auto& row : rows) {
    double sum = 0.0;
    for (double& x : row) {
      x = 0.05 + rng::uniform01(g);
      sum += x;
    }
    for (double& x : row) x /= sum;
  }
  std::vector<std::string> seq;
  seq.reserve(n);
  std::size_t state = rng::uniform_below(g, l);
  seq.push_back(inventory[state]);
  while (seq.size() < n) {
    const double u = rng::uniform01(g);
    double acc = 0.0;
    std::size_t next = l - 1;
    for (std::size_t i = 0; i < l; ++i) {
      acc += rows[state][i];
      if (u < acc) {
        next = i;
        break;
      }
    }
    seq.push_back(inventory[next]);
    state = next;
  }
  return corpus::PhonemeStream::build("synth", std::move(seq));
}

}  // namespace

TEST_SUITE_BEGIN("transport");

TEST_CASE("exact: identical marginals under a zero-diagonal metric cost 0") {
  Matrix c(2, 2, 0.0);
  c(0, 1) = 1.0;
  c(1, 0) = 1.0;
  const auto r = transport::wasserstein_exact(make_problem({0.3, 0.7}, {0.3, 0.7}, c));
  CHECK(r.value == doctest::Approx(0.0));
  CHECK(r.duality_gap <= 1e-8);
}

TEST_CASE("exact: point masses cost d(x, y)") {
  Matrix c(2, 2, 0.0);
  c(0, 1) = 2.5;
  c(1, 0) = 2.5;
  const auto r = transport::wasserstein_exact(make_problem({1.0, 0.0}, {0.0, 1.0}, c));
  CHECK(r.value == doctest::Approx(2.5));
}

TEST_CASE("exact: half mass moved at unit cost") {
  Matrix c(2, 2, 0.0);
  c(0, 1) = 1.0;
  c(1, 0) = 1.0;
  const auto r = transport::wasserstein_exact(make_problem({0.5, 0.5}, {1.0, 0.0}, c));
  CHECK(r.value == doctest::Approx(0.5));
}

TEST_CASE("exact matches the tiny basis-enumeration oracle") {
  std::mt19937_64 g(31);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng::uniform_below(g, 2);  // 2..3
    const std::size_t m = 2 + rng::uniform_below(g, 2);
    Matrix cost;
    synth::random_metric_cost(g, n, m, cost);
    const auto p = synth::random_simplex(g, n);
    const auto q = synth::random_simplex(g, m);
    const auto exact = transport::wasserstein_exact(make_problem(p, q, cost));
    const double oracle = synth::transport_oracle(p, q, cost);
    CHECK(exact.value == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(exact.duality_gap <= 1e-8);
    CHECK(exact.plan.max_marginal_violation(p, q) <= 1e-9);
  }
}

TEST_CASE("exact: duality gap and feasibility on larger random instances") {
  std::mt19937_64 g(32);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 10 + rng::uniform_below(g, 11);
    const std::size_t m = 10 + rng::uniform_below(g, 11);
    Matrix cost;
    synth::random_metric_cost(g, n, m, cost);
    const auto p = synth::random_simplex(g, n);
    const auto q = synth::random_simplex(g, m);
    const auto r = transport::wasserstein_exact(make_problem(p, q, cost));
    CHECK(r.duality_gap <= 1e-8);
    CHECK(r.plan.max_marginal_violation(p, q) <= 1e-9);
  }
}

TEST_CASE("exact: cap exceeded points to Sinkhorn; infeasible marginals rejected") {
  Matrix c(4, 4, 1.0);
  for (int i = 0; i < 4; ++i) c(i, i) = 0.0;
  auto pr = make_problem({0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}, c);
  CHECK_THROWS_WITH_AS(transport::wasserstein_exact(pr, 8), doctest::Contains("Sinkhorn"),
                       std::runtime_error);
  auto bad = pr;
  bad.q = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(transport::wasserstein_exact(bad), std::invalid_argument);
}

TEST_CASE("exact Wasserstein under a metric cost behaves like a metric") {
  std::mt19937_64 g(33);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t support = 5;
    Matrix cost;
    synth::random_metric_cost(g, support, support, cost);
    // Shared support: symmetrize and zero the diagonal.
    for (std::size_t i = 0; i < support; ++i) {
      cost(i, i) = 0.0;
      for (std::size_t j = i + 1; j < support; ++j) cost(j, i) = cost(i, j);
    }
    const auto p = synth::random_simplex(g, support);
    const auto q = synth::random_simplex(g, support);
    const auto r = synth::random_simplex(g, support);
    const double dpq = transport::wasserstein_exact(make_problem(p, q, cost)).value;
    const double dqp = transport::wasserstein_exact(make_problem(q, p, cost)).value;
    const double dpr = transport::wasserstein_exact(make_problem(p, r, cost)).value;
    const double drq = transport::wasserstein_exact(make_problem(r, q, cost)).value;
    CHECK(dpq == doctest::Approx(dqp).epsilon(1e-9));
    CHECK(dpq <= dpr + drq + 1e-9);
    const double self = transport::wasserstein_exact(make_problem(p, p, cost)).value;
    CHECK(self == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("sinkhorn: near-zero for identical distributions") {
  Matrix c(3, 3, 0.0);
  c(0, 1) = c(1, 0) = 1.0;
  c(0, 2) = c(2, 0) = 2.0;
  c(1, 2) = c(2, 1) = 1.0;
  const std::vector<double> p = {0.2, 0.5, 0.3};
  const auto r = transport::wasserstein_sinkhorn(make_problem(p, p, c), 0.01, 20000, 1e-10);
  CHECK(r.value <= 1e-10 * 2.0 + 1e-6);
}

TEST_CASE("sinkhorn within 1% of exact on 5x5 instances at eps = 0.01 mean cost") {
  std::mt19937_64 g(34);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix cost;
    synth::random_metric_cost(g, 5, 5, cost);
    const auto p = synth::random_simplex(g, 5);
    const auto q = synth::random_simplex(g, 5);
    double mean = 0.0;
    for (double v : cost.data) mean += v;
    mean /= static_cast<double>(cost.data.size());
    const auto pr = make_problem(p, q, cost);
    const auto exact = transport::wasserstein_exact(pr);
    const auto sk = transport::wasserstein_sinkhorn(pr, 0.01 * mean, 200000, 1e-10);
    if (exact.value > 1e-9) {
      CHECK(std::abs(sk.value - exact.value) / exact.value <= 0.01);
    } else {
      CHECK(sk.value <= 1e-6);
    }
  }
}

TEST_CASE("sinkhorn approaches the product coupling for large epsilon") {
  std::mt19937_64 g(35);
  Matrix cost;
  synth::random_metric_cost(g, 4, 6, cost);
  const auto p = synth::random_simplex(g, 4);
  const auto q = synth::random_simplex(g, 6);
  double product_objective = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) product_objective += p[i] * q[j] * cost(i, j);
  }
  double max_cost = 0.0;
  for (double v : cost.data) max_cost = std::max(max_cost, v);
  const auto r = transport::wasserstein_sinkhorn(make_problem(p, q, cost), 1000.0 * max_cost,
                                                 20000, 1e-12, false);
  CHECK(r.value == doctest::Approx(product_objective).epsilon(1e-3));
}

TEST_CASE("sinkhorn switches to log-domain at tiny epsilon instead of failing") {
  std::mt19937_64 g(36);
  Matrix cost;
  synth::random_metric_cost(g, 6, 6, cost);
  const auto p = synth::random_simplex(g, 6);
  const auto q = synth::random_simplex(g, 6);
  double mean = 0.0;
  for (double v : cost.data) mean += v;
  mean /= static_cast<double>(cost.data.size());
  const auto pr = make_problem(p, q, cost);
  const auto r = transport::wasserstein_sinkhorn(pr, 1e-4 * mean, 300000, 1e-9);
  CHECK(r.diag.log_domain);
  const auto exact = transport::wasserstein_exact(pr);
  CHECK(std::abs(r.value - exact.value) / std::max(exact.value, 1e-12) <= 0.02);
}

TEST_CASE("sinkhorn non-convergence is flagged, not thrown") {
  std::mt19937_64 g(37);
  Matrix cost;
  synth::random_metric_cost(g, 8, 8, cost);
  const auto p = synth::random_simplex(g, 8);
  const auto q = synth::random_simplex(g, 8);
  const auto r = transport::wasserstein_sinkhorn(make_problem(p, q, cost), 0.001, 3, 1e-14, false);
  CHECK_FALSE(r.diag.converged);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("language_distance: identical distributions give ~0, symmetric values") {
  const auto& table = shipped_table();
  features::GroundMetricSpec spec;
  transport::TruncationPolicy trunc;
  {
    // Small support and small epsilon so the entropic blur sits far below
    // the assertion scale.
    const auto tiny = triphone_dist(synth_language({"p", "t", "a", "i"}, 1200, 40));
    transport::SinkhornParams small_eps;
    small_eps.epsilon_factor = 0.002;
    const double self = transport::language_distance(tiny, tiny, table, spec, small_eps, trunc);
    CHECK(self <= 1e-6);
  }
  const std::vector<std::string> inv = {"p", "t", "k", "a", "i", "u"};
  const auto a = triphone_dist(synth_language(inv, 2500, 41));
  const auto b = triphone_dist(synth_language(inv, 2500, 42));
  transport::SinkhornParams params;
  const double ab = transport::language_distance(a, b, table, spec, params, trunc);
  const double ba = transport::language_distance(b, a, table, spec, params, trunc);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
  CHECK(ab > 0.0);
}

TEST_CASE("same-process halves are closer than different languages") {
  // Two independent samples of one language vs a structurally different
  // language: the within-language distance must be smaller.
  const std::vector<std::string> inv_a = {"p", "t", "k", "a", "i", "u"};
  const std::vector<std::string> inv_b = {"b", "d", "ɡ", "e", "o", "m"};
  const auto a1 = triphone_dist(synth_language(inv_a, 4000, 50));
  const auto a2 = triphone_dist(synth_language(inv_a, 4000, 51));
  const auto b1 = triphone_dist(synth_language(inv_b, 4000, 52));
  const auto& table = shipped_table();
  features::GroundMetricSpec spec;
  transport::SinkhornParams params;
  transport::TruncationPolicy trunc;
  const double within = transport::language_distance(a1, a2, table, spec, params, trunc);
  const double across1 = transport::language_distance(a1, b1, table, spec, params, trunc);
  const double across2 = transport::language_distance(a2, b1, table, spec, params, trunc);
  CHECK(within < across1);
  CHECK(within < across2);
}

TEST_CASE("truncation stability: 0.99 vs 0.999 changes distances by <= 2%") {
  const std::vector<std::string> inv_a = {"p", "t", "k", "a", "i", "u"};
  const std::vector<std::string> inv_b = {"p", "d", "k", "e", "i", "o"};
  const auto a = triphone_dist(synth_language(inv_a, 5000, 60));
  const auto b = triphone_dist(synth_language(inv_b, 5000, 61));
  const auto& table = shipped_table();
  features::GroundMetricSpec spec;
  transport::SinkhornParams params;
  transport::TruncationPolicy t99{0.99, 0};
  transport::TruncationPolicy t999{0.999, 0};
  const double d99 = transport::language_distance(a, b, table, spec, params, t99);
  const double d999 = transport::language_distance(a, b, table, spec, params, t999);
  CHECK(std::abs(d99 - d999) / d999 <= 0.02);
}

TEST_CASE("distance_matrix: identical languages, symmetry, permutation invariance") {
  const std::vector<std::string> inv = {"p", "t", "a", "i", "s"};
  const auto a = triphone_dist(synth_language(inv, 2000, 70));
  const auto b = triphone_dist(synth_language(inv, 2000, 71));
  const auto c = triphone_dist(synth_language({"b", "d", "e", "o", "m"}, 2000, 72));
  const auto& table = shipped_table();
  features::GroundMetricSpec spec;
  transport::SinkhornParams params;
  transport::TruncationPolicy trunc;

  {
    const auto tiny = triphone_dist(synth_language({"p", "a", "t", "i"}, 1200, 73));
    transport::SinkhornParams small_eps;
    small_eps.epsilon_factor = 0.002;
    const auto same =
        transport::distance_matrix({"x", "y"}, {&tiny, &tiny}, table, spec, small_eps, trunc);
    CHECK(same.values(0, 1) <= 1e-6);
    CHECK(same.values(0, 0) == 0.0);
  }

  const auto m1 =
      transport::distance_matrix({"a", "b", "c"}, {&a, &b, &c}, table, spec, params, trunc);
  m1.validate();
  const auto m2 =
      transport::distance_matrix({"c", "a", "b"}, {&c, &a, &b}, table, spec, params, trunc);
  CHECK(m1.values(0, 1) == doctest::Approx(m2.values(1, 2)).epsilon(1e-12));
  CHECK(m1.values(0, 2) == doctest::Approx(m2.values(0, 1)).epsilon(1e-12));
  CHECK(m1.values(1, 2) == doctest::Approx(m2.values(0, 2)).epsilon(1e-12));
}

TEST_CASE("average_distribution: single member, disjoint point masses, idempotent mean") {
  const auto s1 = corpus::PhonemeStream::build("l1", {"p", "a", "t"});
  const auto s2 = corpus::PhonemeStream::build("l2", {"k", "i", "n"});
  const auto d1 = triphone_dist(s1);
  const auto d2 = triphone_dist(s2);

  const auto single = transport::average_distribution({&d1});
  REQUIRE(single.support.size() == 1);
  CHECK(single.probs[0] == doctest::Approx(1.0));

  const auto avg = transport::average_distribution({&d1, &d2});
  REQUIRE(avg.support.size() == 2);
  CHECK(avg.probs[0] == doctest::Approx(0.5));
  CHECK(avg.probs[1] == doctest::Approx(0.5));

  const auto same = transport::average_distribution({&d1, &d1, &d1});
  REQUIRE(same.support.size() == 1);
  CHECK(same.probs[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(transport::average_distribution({}), std::invalid_argument);
}

TEST_CASE("empty post-truncation support is impossible for non-empty input") {
  const auto s = corpus::PhonemeStream::build("l", {"p", "a", "t", "a"});
  const auto d = triphone_dist(s);
  transport::TruncationPolicy aggressive{0.0, 0};
  const auto t = transport::truncate_distribution(d, aggressive);
  CHECK(t.support.size() >= 1);
  t.validate();
}

TEST_SUITE_END();
