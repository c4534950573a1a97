#include "doctest.h"

#include <random>

#include "phonodist/features.hpp"
#include "phonodist/geostat.hpp"
#include "phonodist/rng.hpp"
#include "support/synth.hpp"

using namespace phonodist;
using features::FeatureVector;
using features::GroundMetricSpec;
using features::MetricVariant;

namespace {

const features::FeatureTable& shipped_table() {
  static const auto table = features::FeatureTable::load(PHONODIST_DATA_DIR "/features_24.csv");
  return table;
}

FeatureVector random_vector(std::mt19937_64& g) {
  FeatureVector v;
  for (auto& x : v.v) x = static_cast<std::int8_t>(rng::uniform_below(g, 3)) - 1;
  return v;
}

GroundMetricSpec spec_of(MetricVariant variant) {
  GroundMetricSpec s;
  s.variant = variant;
  return s;
}

int feature_index(std::string_view name) {
  for (int i = 0; i < features::kFeatureCount; ++i) {
    if (features::kFeatureNames[static_cast<std::size_t>(i)] == name) return i;
  }
  return -1;
}

}  // namespace

TEST_SUITE_BEGIN("features");

TEST_CASE("shipped table: anterior is + for /t/, - for /S/, 0 for /a/") {
  const auto& table = shipped_table();
  const int ant = feature_index("anterior");
  REQUIRE(ant >= 0);
  CHECK(table.at("t").v[static_cast<std::size_t>(ant)] == 1);
  CHECK(table.at("ʃ").v[static_cast<std::size_t>(ant)] == -1);
  CHECK(table.at("a").v[static_cast<std::size_t>(ant)] == 0);
}

TEST_CASE("shipped table: exactly the 4 constant features are dropped") {
  const auto& table = shipped_table();
  CHECK(table.active_dims().size() == 20);
  for (int d : table.active_dims()) {
    CHECK(d < features::kFeatureCount - 4);
  }
}

TEST_CASE("load rejects wrong arity with the phoneme name") {
  synth::TempDir dir("ft_arity");
  std::string csv = "phoneme";
  for (auto name : features::kFeatureNames) csv += "," + std::string(name);
  csv += "\nq9";
  for (int i = 0; i < 23; ++i) csv += ",+";
  csv += "\n";
  synth::write_file(dir.path() / "t.csv", csv);
  CHECK_THROWS_WITH_AS(features::FeatureTable::load(dir.path() / "t.csv"),
                       doctest::Contains("q9"), std::runtime_error);
}

TEST_CASE("load rejects non-ternary values") {
  synth::TempDir dir("ft_ternary");
  std::string csv = "phoneme";
  for (auto name : features::kFeatureNames) csv += "," + std::string(name);
  csv += "\nzz";
  for (int i = 0; i < 23; ++i) csv += ",0";
  csv += ",2\n";
  synth::write_file(dir.path() / "t.csv", csv);
  CHECK_THROWS_WITH_AS(features::FeatureTable::load(dir.path() / "t.csv"),
                       doctest::Contains("non-ternary"), std::runtime_error);
}

TEST_CASE("embedding concatenates in order and errors on unknown phonemes") {
  const auto& table = shipped_table();
  const auto e = features::embed_triphone("p", "p", "p", table);
  for (int pos = 1; pos < 3; ++pos) {
    for (int i = 0; i < features::kFeatureCount; ++i) {
      CHECK(e.full[static_cast<std::size_t>(pos * features::kFeatureCount + i)] ==
            e.full[static_cast<std::size_t>(i)]);
    }
  }
  const auto abc = features::embed_triphone("a", "b", "k", table);
  const auto cba = features::embed_triphone("k", "b", "a", table);
  CHECK(abc.full != cba.full);  // concatenation is ordered
  CHECK_THROWS_WITH_AS(features::embed_triphone("a", "??", "k", table, "language x"),
                       doctest::Contains("language x"), std::runtime_error);
}

TEST_CASE("phone_distance costs: full edit 1, specified<->unspecified 0.5") {
  FeatureVector x, y;
  for (auto& v : x.v) v = 1;
  y = x;
  CHECK(features::phone_distance(x, y, spec_of(MetricVariant::feature_edit_unweighted)) == 0.0);
  y.v[3] = -1;
  CHECK(features::phone_distance(x, y, spec_of(MetricVariant::feature_edit_unweighted)) ==
        doctest::Approx(1.0));
  y.v[3] = 0;
  CHECK(features::phone_distance(x, y, spec_of(MetricVariant::feature_edit_unweighted)) ==
        doctest::Approx(0.5));
  CHECK(features::phone_distance(x, y, spec_of(MetricVariant::feature_hamming)) ==
        doctest::Approx(1.0));
  CHECK(features::phone_distance(x, y, spec_of(MetricVariant::levenshtein)) == doctest::Approx(1.0));
}

TEST_CASE("weighted variant scales per-feature costs and requires weights") {
  FeatureVector x, y;
  for (auto& v : x.v) v = 1;
  y = x;
  y.v[0] = -1;   // full edit on feature 0
  y.v[5] = 0;    // half edit on feature 5
  GroundMetricSpec spec = spec_of(MetricVariant::feature_edit_weighted);
  CHECK_THROWS_AS(features::phone_distance(x, y, spec), std::runtime_error);
  std::array<double, features::kFeatureCount> w{};
  w.fill(1.0);
  w[0] = 3.0;
  w[5] = 2.0;
  spec.weights = w;
  CHECK(features::phone_distance(x, y, spec) == doctest::Approx(3.0 + 2.0 * 0.5));
}

TEST_CASE("all variants are symmetric with zero self-distance") {
  std::mt19937_64 g(21);
  std::array<double, features::kFeatureCount> w{};
  for (auto& x : w) x = 0.25 + rng::uniform01(g);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(g);
    const auto y = random_vector(g);
    for (auto variant : {MetricVariant::feature_edit_unweighted, MetricVariant::feature_hamming,
                         MetricVariant::feature_edit_weighted, MetricVariant::levenshtein}) {
      GroundMetricSpec spec = spec_of(variant);
      if (variant == MetricVariant::feature_edit_weighted) spec.weights = w;
      CHECK(features::phone_distance(x, x, spec) == 0.0);
      CHECK(features::phone_distance(x, y, spec) == features::phone_distance(y, x, spec));
      CHECK(features::phone_distance(x, y, spec) >= 0.0);
    }
  }
}

TEST_CASE("unweighted edit and hamming satisfy the triangle inequality") {
  std::mt19937_64 g(22);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto x = random_vector(g);
    const auto y = random_vector(g);
    const auto z = random_vector(g);
    for (auto variant : {MetricVariant::feature_edit_unweighted, MetricVariant::feature_hamming}) {
      const auto spec = spec_of(variant);
      const double xy = features::phone_distance(x, y, spec);
      const double xz = features::phone_distance(x, z, spec);
      const double zy = features::phone_distance(z, y, spec);
      CHECK(xy <= xz + zy + 1e-12);
    }
  }
}

TEST_CASE("triphone distance is the position-aligned sum") {
  const auto& table = shipped_table();
  const auto a = features::embed_triphone("b", "u", "k", table);
  const auto b = features::embed_triphone("b", "u", "x", table);
  const auto spec = spec_of(MetricVariant::feature_edit_unweighted);
  const double direct = features::triphone_distance(a, b, spec);
  const double phones = features::phone_distance(table.at("k"), table.at("x"), spec);
  CHECK(direct == doctest::Approx(phones));
  CHECK(features::triphone_distance(a, a, spec) == 0.0);
}

TEST_CASE("buk vs bux is far below the 99th percentile of random triphone pairs") {
  const auto& table = shipped_table();
  const auto spec = spec_of(MetricVariant::feature_edit_unweighted);
  const auto phonemes = table.phonemes();
  std::mt19937_64 g(23);
  const double d_cognate = features::triphone_distance(
      features::embed_triphone("b", "u", "k", table),
      features::embed_triphone("b", "u", "x", table), spec);
  std::vector<double> sample;
  for (int trial = 0; trial < 2000; ++trial) {
    auto pick = [&]() { return phonemes[rng::uniform_below(g, phonemes.size())]; };
    const auto a = features::embed_triphone(pick(), pick(), pick(), table);
    const auto b = features::embed_triphone(pick(), pick(), pick(), table);
    sample.push_back(features::triphone_distance(a, b, spec));
  }
  std::sort(sample.begin(), sample.end());
  const double p99 = sample[static_cast<std::size_t>(0.99 * sample.size())];
  CHECK(d_cognate < p99);
  const double p50 = sample[sample.size() / 2];
  CHECK(d_cognate < p50);
}

TEST_CASE("segment-level levenshtein is 3 for pairwise-distinct triphones") {
  const auto& table = shipped_table();
  const auto spec = spec_of(MetricVariant::levenshtein);
  const char* pairs[][2] = {{"p", "b"}, {"t", "d"}, {"k", "x"}, {"s", "z"},
                            {"i", "u"}, {"m", "n"}, {"e", "o"}};
  for (const auto& pr : pairs) {
    const auto a = features::embed_triphone(pr[0], pr[0], pr[0], table);
    const auto b = features::embed_triphone(pr[1], pr[1], pr[1], table);
    CHECK(features::triphone_distance(a, b, spec) == doctest::Approx(3.0));
  }
}

TEST_CASE("rank agreement between unweighted edit and hamming") {
  const auto& table = shipped_table();
  const auto phonemes = table.phonemes();
  std::mt19937_64 g(24);
  std::vector<double> edit, ham;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& a = table.at(phonemes[rng::uniform_below(g, phonemes.size())]);
    const auto& b = table.at(phonemes[rng::uniform_below(g, phonemes.size())]);
    edit.push_back(features::phone_distance(a, b, spec_of(MetricVariant::feature_edit_unweighted)));
    ham.push_back(features::phone_distance(a, b, spec_of(MetricVariant::feature_hamming)));
  }
  CHECK(geostat::spearman(edit, ham) >= 0.9);
}

TEST_CASE("dropping constant coordinates never changes a distance") {
  // A table with padded constant features: distances on the reduced vectors
  // must equal distances on the full 72-dim concatenation.
  const auto& table = shipped_table();
  const auto phonemes = table.phonemes();
  std::mt19937_64 g(25);
  const auto spec = spec_of(MetricVariant::feature_edit_unweighted);
  for (int trial = 0; trial < 300; ++trial) {
    auto pick = [&]() { return phonemes[rng::uniform_below(g, phonemes.size())]; };
    const auto a = features::embed_triphone(pick(), pick(), pick(), table);
    const auto b = features::embed_triphone(pick(), pick(), pick(), table);
    double full = 0.0;
    for (std::size_t i = 0; i < a.full.size(); ++i) {
      const auto x = a.full[i], y = b.full[i];
      if (x == y) continue;
      full += (x == 0 || y == 0) ? 0.5 : 1.0;
    }
    CHECK(features::triphone_distance(a, b, spec) == doctest::Approx(full).epsilon(1e-12));
  }
}

TEST_CASE("ground metric matrix equals elementwise recomputation") {
  const auto& table = shipped_table();
  const auto phonemes = table.phonemes();
  std::mt19937_64 g(26);
  auto pick = [&]() { return phonemes[rng::uniform_below(g, phonemes.size())]; };
  std::vector<features::Triphone> sup_p, sup_q;
  for (int i = 0; i < 5; ++i) sup_p.push_back({pick(), pick(), pick()});
  for (int j = 0; j < 7; ++j) sup_q.push_back({pick(), pick(), pick()});
  const auto spec = spec_of(MetricVariant::feature_edit_unweighted);
  const auto m = features::ground_metric_matrix(sup_p, sup_q, table, spec);
  REQUIRE(m.rows == 5);
  REQUIRE(m.cols == 7);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 7; ++j) {
      const auto ea = features::embed_triphone(sup_p[i][0], sup_p[i][1], sup_p[i][2], table);
      const auto eb = features::embed_triphone(sup_q[j][0], sup_q[j][1], sup_q[j][2], table);
      CHECK(m(i, j) == doctest::Approx(features::triphone_distance(ea, eb, spec)).epsilon(1e-12));
    }
  }

  // Shared support: symmetric with zero diagonal.
  const auto sym = features::ground_metric_matrix(sup_p, sup_p, table, spec);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(sym(i, i) == 0.0);
    for (std::size_t j = 0; j < 5; ++j) CHECK(sym(i, j) == sym(j, i));
  }

  // Per-pair-max normalization rescales the maximum to 1.
  GroundMetricSpec norm = spec;
  norm.normalization = features::MetricNormalization::per_pair_max;
  const auto nm = features::ground_metric_matrix(sup_p, sup_q, table, norm);
  double mx = 0.0;
  for (double v : nm.data) mx = std::max(mx, v);
  CHECK(mx == doctest::Approx(1.0));
}

TEST_SUITE_END();
