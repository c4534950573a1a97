#include "doctest.h"

#include <cmath>
#include <random>

#include "phonodist/entropy.hpp"
#include "phonodist/rng.hpp"
#include "support/synth.hpp"

using namespace phonodist;

namespace {

blocks::BlockDistribution dist_from_counts(const std::vector<std::uint64_t>& counts) {
  std::vector<std::string> toks;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::uint64_t k = 0; k < counts[i]; ++k) toks.push_back("s" + std::to_string(i));
  }
  auto stream = corpus::PhonemeStream::build("c", std::move(toks));
  return blocks::count_blocks(stream, 1);
}

// Multinomial draw as a r=1 block distribution.
blocks::BlockDistribution multinomial(const std::vector<double>& probs, std::size_t n,
                                      std::uint64_t seed) {
  return blocks::count_blocks(synth::iid_stream(probs.size(), n, seed, probs), 1);
}

}  // namespace

TEST_SUITE_BEGIN("entropy");

TEST_CASE("plug-in entropy on known distributions") {
  CHECK(entropy::entropy_plugin(dist_from_counts({1, 1, 1, 1})) == doctest::Approx(std::log(4.0)));
  CHECK(entropy::entropy_plugin(dist_from_counts({5})) == doctest::Approx(0.0));
  // {a:3, b:1}: -(0.75 ln 0.75 + 0.25 ln 0.25)
  CHECK(entropy::entropy_plugin(dist_from_counts({3, 1})) == doctest::Approx(0.562335).epsilon(1e-5));
}

TEST_CASE("plug-in equals the brute-force oracle to 1e-12") {
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint64_t> counts(1 + rng::uniform_below(g, 12));
    for (auto& c : counts) c = 1 + rng::uniform_below(g, 50);
    CHECK(entropy::entropy_plugin(dist_from_counts(counts)) ==
          doctest::Approx(synth::entropy_oracle(counts)).epsilon(1e-12));
  }
}

TEST_CASE("entropy curve: iid uniform grows like r ln L, constant stream stays zero") {
  const std::size_t l = 4;
  const auto s = synth::iid_stream(l, 200000, 123);
  const auto curve = entropy::block_entropy_curve(s, 3, entropy::Estimator::plugin);
  CHECK(curve.values[0] == 0.0);
  for (int r = 1; r <= 3; ++r) {
    CHECK(curve.values[static_cast<std::size_t>(r)] ==
          doctest::Approx(r * std::log(static_cast<double>(l))).epsilon(5e-3));
  }

  const auto constant = corpus::PhonemeStream::build(
      "const", std::vector<std::string>(500, "a"));
  const auto flat = entropy::block_entropy_curve(constant, 4, entropy::Estimator::plugin);
  for (double h : flat.values) CHECK(h == doctest::Approx(0.0));
}

TEST_CASE("entropy curve rejects r_upper > N") {
  const auto s = synth::iid_stream(3, 10, 5);
  CHECK_THROWS_AS(entropy::block_entropy_curve(s, 11, entropy::Estimator::plugin),
                  std::invalid_argument);
}

TEST_CASE("plug-in H_r is non-decreasing in r on long streams") {
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = synth::iid_stream(3, 5000, 400 + trial);
    const auto curve = entropy::block_entropy_curve(s, 4, entropy::Estimator::plugin);
    for (std::size_t r = 1; r < curve.values.size(); ++r) {
      CHECK(curve.values[r] >= curve.values[r - 1] - 1e-9);
    }
  }
}

TEST_CASE("marginal-consistent entropies are exactly monotone and concave") {
  // Derive H_u, H_{u+1} from the (u+2)-block joint distribution itself; the
  // second difference is then a conditional mutual information and must be
  // non-negative up to float error (1e-9 * H_1 slack).
  std::mt19937_64 g(12);
  for (int trial = 0; trial < 25; ++trial) {
    const auto s = synth::Order2Chain::sample(3, 70 + trial).generate(400, 71 + trial);
    const int u = static_cast<int>(rng::uniform_below(g, 2));
    const auto joint = blocks::count_blocks(s, u + 2);
    std::map<std::vector<std::string>, std::uint64_t> m2, m1l, m1r, m0;
    for (const auto& item : joint.items_by_key()) {
      const auto toks = joint.unpack(item.key);
      m2[toks] += item.count;
      m1l[std::vector<std::string>(toks.begin(), toks.end() - 1)] += item.count;
      m1r[std::vector<std::string>(toks.begin() + 1, toks.end())] += item.count;
      m0[std::vector<std::string>(toks.begin() + 1, toks.end() - 1)] += item.count;
    }
    auto h_of = [](const std::map<std::vector<std::string>, std::uint64_t>& m) {
      std::vector<std::uint64_t> c;
      for (const auto& [k, v] : m) c.push_back(v);
      return synth::entropy_oracle(c);
    };
    const double h2 = h_of(m2), h1l = h_of(m1l), h1r = h_of(m1r), h0 = h_of(m0);
    const double slack = 1e-9 * std::max(1.0, h1l);
    CHECK(h2 >= h1l - slack);  // joint >= marginal
    CHECK(h2 >= h1r - slack);
    // G_u as CMI of the joint distribution: H(left)+H(right)-H(joint)-H(mid) >= 0.
    CHECK(h1l + h1r - h2 - h0 >= -slack);
  }
}

TEST_CASE("predictability gain arithmetic") {
  entropy::EntropyCurve c1;
  c1.values = {0.0, std::log(5.0), 2 * std::log(5.0), 3 * std::log(5.0)};
  const auto g1 = entropy::predictability_gain(c1);
  REQUIRE(g1.values.size() == 2);
  CHECK(g1.values[0] == doctest::Approx(0.0));
  CHECK(g1.values[1] == doctest::Approx(0.0));

  entropy::EntropyCurve c2;
  c2.values = {0.0, 1.0, 1.5, 1.75};
  const auto g2 = entropy::predictability_gain(c2);
  CHECK(g2.values[0] == doctest::Approx(0.5));
  CHECK(g2.values[1] == doctest::Approx(0.25));

  entropy::EntropyCurve short_curve;
  short_curve.values = {0.0, 1.0};
  CHECK_THROWS_AS(entropy::predictability_gain(short_curve), std::invalid_argument);
}

TEST_CASE("NSB: large-sample uniform within 0.01 nats of ln L") {
  std::vector<double> uniform(10, 0.1);
  const auto d = multinomial(uniform, 100000, 2024);
  const auto r = entropy::entropy_nsb(d, 10.0);
  CHECK(std::abs(r.entropy - std::log(10.0)) < 0.01);
  CHECK(r.stderr_ > 0.0);
  CHECK(r.stderr_ < 0.02);
}

TEST_CASE("NSB: single observation is finite, no exception") {
  const auto d = dist_from_counts({1});
  const auto r = entropy::entropy_nsb(d, 100.0);
  CHECK(std::isfinite(r.entropy));
  CHECK(std::isfinite(r.stderr_));
  CHECK(r.entropy >= 0.0);
  CHECK(r.entropy <= std::log(100.0) + 1e-9);
}

TEST_CASE("NSB agrees with plug-in on well-sampled data within 2 stderr") {
  std::mt19937_64 g(13);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> probs = rng::dirichlet_uniform(g, 8);
    const auto d = multinomial(probs, 50000, 500 + trial);
    const auto nsb = entropy::entropy_nsb(d, 8.0);
    const double plug = entropy::entropy_plugin(d);
    CHECK(std::abs(nsb.entropy - plug) <= 2.0 * nsb.stderr_ + 1e-3);
  }
}

TEST_CASE("NSB coverage: uniform synthetic data within 3 stderr in >= 95% of seeds") {
  const std::size_t support = 20;
  const std::size_t n = 2000;  // n / support = 100
  std::vector<double> uniform(support, 1.0 / support);
  const double truth = std::log(static_cast<double>(support));
  int hits = 0;
  for (int seed = 0; seed < 100; ++seed) {
    const auto d = multinomial(uniform, n, 9000 + seed);
    const auto r = entropy::entropy_nsb(d, static_cast<double>(support));
    if (std::abs(r.entropy - truth) <= 3.0 * r.stderr_) ++hits;
  }
  CHECK(hits >= 95);
}

TEST_CASE("NSB rejects an alphabet smaller than the observed support") {
  CHECK_THROWS_AS(entropy::entropy_nsb(dist_from_counts({2, 2, 2}), 2.0), std::invalid_argument);
}

TEST_CASE("order estimation: synthetic order-2 chain and iid control") {
  const auto chain = synth::Order2Chain::sample(5, 77);
  const auto s = chain.generate(100000, 78);
  const auto curve = entropy::block_entropy_curve(s, 5, entropy::Estimator::miller_madow);
  const auto gains = entropy::predictability_gain(curve);
  const auto se = entropy::gain_jackknife_stderr(s, 5, entropy::Estimator::miller_madow);
  const double tol = entropy::default_order_tolerance(se);
  const auto est = entropy::estimate_order(gains, {}, tol);
  CHECK(est.m == 2);
  CHECK_FALSE(est.censored);

  const auto iid = synth::iid_stream(5, 100000, 79);
  const auto icurve = entropy::block_entropy_curve(iid, 5, entropy::Estimator::miller_madow);
  const auto igains = entropy::predictability_gain(icurve);
  const auto ise = entropy::gain_jackknife_stderr(iid, 5, entropy::Estimator::miller_madow);
  const auto iest = entropy::estimate_order(igains, {}, entropy::default_order_tolerance(ise));
  CHECK(iest.m == 0);
}

TEST_CASE("order estimation: censored when all gains exceed the tolerance") {
  entropy::GainSequence gains;
  gains.values = {0.5, 0.4, 0.3};
  const auto est = entropy::estimate_order(gains, {}, 0.01);
  CHECK(est.censored);
  CHECK(est.m == 3);  // r_max - 1 for a curve reaching r_max
}

TEST_CASE("order estimation: coarse evidence confirms but never raises") {
  entropy::GainSequence fine;
  fine.values = {0.5, 0.001};
  entropy::GainSequence coarse_ok;
  coarse_ok.values = {0.4, 0.002, 0.001, 0.0005};
  entropy::GainSequence coarse_bad;
  coarse_bad.values = {0.4, 0.3, 0.2, 0.1};
  const auto confirmed = entropy::estimate_order(fine, {coarse_ok}, 0.01);
  CHECK(confirmed.m == 1);
  CHECK(confirmed.coarse_confirms);
  const auto contested = entropy::estimate_order(fine, {coarse_bad}, 0.01);
  CHECK(contested.m == 1);  // coarse cannot raise the fine-alphabet order
  CHECK_FALSE(contested.coarse_confirms);
}

TEST_CASE("undersampled regime: plug-in is more biased downward than NSB") {
  const std::size_t support = 10000;
  const std::size_t n = 1000;
  std::vector<double> uniform(support, 1.0 / static_cast<double>(support));
  const double truth = std::log(static_cast<double>(support));
  double plug_bias = 0.0, nsb_bias = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    const auto d = multinomial(uniform, n, 40000 + seed);
    plug_bias += entropy::entropy_plugin(d) - truth;
    nsb_bias += entropy::entropy_nsb(d, static_cast<double>(support)).entropy - truth;
  }
  plug_bias /= 5;
  nsb_bias /= 5;
  CHECK(plug_bias < nsb_bias - 0.5);
  CHECK(plug_bias < -1.0);
}

TEST_SUITE_END();
