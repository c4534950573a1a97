#include "phonodist/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "phonodist/csv.hpp"
#include "phonodist/utf8.hpp"

namespace phonodist::features {

const std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "syllabic",       "sonorant",   "consonantal",        "continuant",
    "delayed_release", "lateral",    "nasal",              "strident",
    "voice",          "spread_glottis", "constricted_glottis", "anterior",
    "coronal",        "distributed", "labial",             "high",
    "low",            "back",       "round",              "tense",
    "velaric",        "long",       "tone1",              "tone2",
};

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::int8_t parse_value(const std::string& s, const std::string& phoneme) {
  if (s == "+" || s == "+1" || s == "1") return 1;
  if (s == "-" || s == "-1") return -1;
  if (s == "0") return 0;
  throw std::runtime_error("feature table: non-ternary value '" + s + "' for phoneme '" +
                           phoneme + "'");
}

// Modifier letters that may trail a base segment (kept normalization marks).
bool is_trailing_modifier(char32_t c) {
  return c == U'ʰ' || c == U'ʱ' || c == U'ʲ' || c == U'ˤ' ||
         c == U'̃';
}

double edit_cost(std::int8_t a, std::int8_t b) {
  if (a == b) return 0.0;
  if (a == 0 || b == 0) return 0.5;  // specified <-> unspecified, reduced cost
  return 1.0;
}

}  // namespace

FeatureTable FeatureTable::load(const std::filesystem::path& path) {
  const auto rows = csv::read_rows(path, ',', true);
  if (rows.empty()) throw std::runtime_error("feature table " + path.string() + " is empty");
  const auto& header = rows.front().fields;
  if (header.size() != kFeatureCount + 1 || header[0] != "phoneme") {
    throw std::runtime_error("feature table " + path.string() +
                             ": header must be phoneme + 24 feature names");
  }
  for (int i = 0; i < kFeatureCount; ++i) {
    if (header[i + 1] != kFeatureNames[i]) {
      throw std::runtime_error("feature table " + path.string() + ": column " +
                               std::to_string(i + 1) + " must be '" +
                               std::string(kFeatureNames[i]) + "', got '" + header[i + 1] + "'");
    }
  }
  FeatureTable t;
  std::uint64_t h = kFnvOffset;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    if (f.empty() || f[0].empty()) {
      throw std::runtime_error("feature table " + path.string() + " line " +
                               std::to_string(rows[r].line_number) + ": missing phoneme");
    }
    if (f.size() != kFeatureCount + 1) {
      throw std::runtime_error("feature table " + path.string() + " line " +
                               std::to_string(rows[r].line_number) + ": phoneme '" + f[0] +
                               "' has " + std::to_string(f.size() - 1) +
                               " feature values, expected 24");
    }
    FeatureVector v;
    for (int i = 0; i < kFeatureCount; ++i) v.v[i] = parse_value(f[i + 1], f[0]);
    if (!t.table_.emplace(f[0], v).second) {
      throw std::runtime_error("feature table " + path.string() + ": duplicate phoneme '" +
                               f[0] + "'");
    }
    h = fnv1a(h, f[0].data(), f[0].size());
    h = fnv1a(h, v.v.data(), v.v.size());
  }
  t.provenance_ = h;
  t.finalize();
  return t;
}

FeatureTable FeatureTable::from_rows(const std::vector<std::pair<std::string, FeatureVector>>& rows,
                                     std::uint64_t provenance) {
  FeatureTable t;
  for (const auto& [phoneme, v] : rows) {
    if (!t.table_.emplace(phoneme, v).second) {
      throw std::runtime_error("feature table: duplicate phoneme '" + phoneme + "'");
    }
  }
  t.provenance_ = provenance;
  t.finalize();
  return t;
}

void FeatureTable::finalize() {
  if (table_.empty()) throw std::runtime_error("feature table has no entries");
  // The four dataset-constant features must actually be constant.
  for (int i = kFeatureCount - 4; i < kFeatureCount; ++i) {
    const std::int8_t ref = table_.begin()->second.v[i];
    for (const auto& [p, v] : table_) {
      if (v.v[i] != ref) {
        throw std::runtime_error("feature table: feature '" + std::string(kFeatureNames[i]) +
                                 "' must be constant over the dataset but varies at '" + p + "'");
      }
    }
  }
  active_dims_.clear();
  for (int i = 0; i < kFeatureCount; ++i) {
    const std::int8_t ref = table_.begin()->second.v[i];
    bool varies = false;
    for (const auto& [p, v] : table_) {
      if (v.v[i] != ref) {
        varies = true;
        break;
      }
    }
    if (varies) active_dims_.push_back(i);
  }
  mask_hash_ = fnv1a(kFnvOffset, active_dims_.data(), active_dims_.size() * sizeof(int));
}

const FeatureVector& FeatureTable::at(const std::string& phoneme, std::string_view context) const {
  const auto it = table_.find(phoneme);
  if (it == table_.end()) {
    std::string msg = "phoneme '" + phoneme + "' not in feature table";
    if (!context.empty()) msg += " (" + std::string(context) + ")";
    throw std::runtime_error(msg);
  }
  return it->second;
}

const FeatureVector* FeatureTable::find_base(const std::string& phoneme) const {
  auto it = table_.find(phoneme);
  if (it != table_.end()) return &it->second;
  auto cps = utf8::decode(phoneme);
  while (cps.size() > 1 && is_trailing_modifier(cps.back())) {
    cps.pop_back();
    it = table_.find(utf8::encode(cps));
    if (it != table_.end()) return &it->second;
  }
  return nullptr;
}

std::vector<std::string> FeatureTable::phonemes() const {
  std::vector<std::string> out;
  out.reserve(table_.size());
  for (const auto& [p, v] : table_) out.push_back(p);
  return out;
}

std::vector<std::string> FeatureTable::vowel_phonemes() const {
  std::vector<std::string> out;
  for (const auto& [p, v] : table_) {
    if (v.v[0] == 1) out.push_back(p);  // syllabic
  }
  return out;
}

MetricVariant metric_variant_from_string(std::string_view name) {
  if (name == "feature_edit_unweighted") return MetricVariant::feature_edit_unweighted;
  if (name == "feature_edit_weighted") return MetricVariant::feature_edit_weighted;
  if (name == "feature_hamming") return MetricVariant::feature_hamming;
  if (name == "levenshtein") return MetricVariant::levenshtein;
  throw std::runtime_error("unknown metric variant '" + std::string(name) + "'");
}

std::string_view to_string(MetricVariant v) {
  switch (v) {
    case MetricVariant::feature_edit_unweighted: return "feature_edit_unweighted";
    case MetricVariant::feature_edit_weighted: return "feature_edit_weighted";
    case MetricVariant::feature_hamming: return "feature_hamming";
    case MetricVariant::levenshtein: return "levenshtein";
  }
  return "?";
}

std::array<double, kFeatureCount> load_weight_file(const std::filesystem::path& path) {
  const auto rows = csv::read_rows(path, ',', true);
  std::array<double, kFeatureCount> w{};
  std::array<bool, kFeatureCount> seen{};
  for (const auto& row : rows) {
    if (row.fields.size() != 2) {
      throw std::runtime_error("weight file " + path.string() + " line " +
                               std::to_string(row.line_number) + ": expected feature,weight");
    }
    if (row.fields[0] == "feature") continue;  // optional header
    const auto it = std::find(kFeatureNames.begin(), kFeatureNames.end(), row.fields[0]);
    if (it == kFeatureNames.end()) {
      throw std::runtime_error("weight file: unknown feature '" + row.fields[0] + "'");
    }
    const int idx = static_cast<int>(it - kFeatureNames.begin());
    const double value = std::stod(row.fields[1]);
    if (!(value > 0.0)) {
      throw std::runtime_error("weight file: weight for '" + row.fields[0] +
                               "' must be strictly positive");
    }
    w[idx] = value;
    seen[idx] = true;
  }
  for (int i = 0; i < kFeatureCount; ++i) {
    if (!seen[i]) {
      throw std::runtime_error("weight file: missing weight for '" +
                               std::string(kFeatureNames[i]) + "'");
    }
  }
  return w;
}

TriphoneEmbedding embed_triphone(const std::string& p1, const std::string& p2,
                                 const std::string& p3, const FeatureTable& table,
                                 std::string_view context) {
  TriphoneEmbedding e;
  e.symbols = {p1, p2, p3};
  const FeatureVector* vs[3] = {&table.at(p1, context), &table.at(p2, context),
                                &table.at(p3, context)};
  for (int pos = 0; pos < 3; ++pos) {
    for (int i = 0; i < kFeatureCount; ++i) e.full[pos * kFeatureCount + i] = vs[pos]->v[i];
  }
  const auto& dims = table.active_dims();
  e.reduced.reserve(3 * dims.size());
  for (int pos = 0; pos < 3; ++pos) {
    for (int d : dims) e.reduced.push_back(vs[pos]->v[d]);
  }
  e.mask_hash = table.active_mask_hash();
  return e;
}

namespace {

double span_distance(std::span<const std::int8_t> x, std::span<const std::int8_t> y,
                     std::span<const double> weights, MetricVariant variant) {
  if (x.size() != y.size()) throw std::invalid_argument("feature vector arity mismatch");
  switch (variant) {
    case MetricVariant::feature_edit_unweighted: {
      double d = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) d += edit_cost(x[i], y[i]);
      return d;
    }
    case MetricVariant::feature_edit_weighted: {
      double d = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) d += weights[i] * edit_cost(x[i], y[i]);
      return d;
    }
    case MetricVariant::feature_hamming: {
      double d = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] != y[i]) ? 1.0 : 0.0;
      return d;
    }
    case MetricVariant::levenshtein:
      return std::equal(x.begin(), x.end(), y.begin()) ? 0.0 : 1.0;
  }
  return 0.0;
}

}  // namespace

double phone_distance(const FeatureVector& x, const FeatureVector& y, const GroundMetricSpec& spec) {
  std::array<double, kFeatureCount> w{};
  if (spec.variant == MetricVariant::feature_edit_weighted) {
    if (!spec.weights) throw std::runtime_error("weighted metric requires a weight table");
    w = *spec.weights;
  }
  return span_distance(std::span<const std::int8_t>(x.v.data(), kFeatureCount),
                       std::span<const std::int8_t>(y.v.data(), kFeatureCount),
                       std::span<const double>(w.data(), kFeatureCount), spec.variant);
}

double triphone_distance(const TriphoneEmbedding& a, const TriphoneEmbedding& b,
                         const GroundMetricSpec& spec) {
  if (a.mask_hash != b.mask_hash || a.reduced.size() != b.reduced.size()) {
    throw std::invalid_argument("triphone embeddings use different reduction masks");
  }
  if (spec.variant == MetricVariant::levenshtein) {
    double d = 0.0;
    for (int pos = 0; pos < 3; ++pos) d += (a.symbols[pos] == b.symbols[pos]) ? 0.0 : 1.0;
    return d;
  }
  if (spec.variant == MetricVariant::feature_edit_weighted) {
    if (!spec.weights) throw std::runtime_error("weighted metric requires a weight table");
    // Weighted sums must be expressed on the full 72 dims so weights line up.
    std::array<double, 3 * kFeatureCount> w{};
    for (int pos = 0; pos < 3; ++pos) {
      for (int i = 0; i < kFeatureCount; ++i) w[pos * kFeatureCount + i] = (*spec.weights)[i];
    }
    return span_distance(std::span<const std::int8_t>(a.full.data(), a.full.size()),
                         std::span<const std::int8_t>(b.full.data(), b.full.size()),
                         std::span<const double>(w.data(), w.size()), spec.variant);
  }
  // Constant dims contribute zero cost, so the reduced vectors give the same
  // value as the full 72-dim concatenation.
  return span_distance(std::span<const std::int8_t>(a.reduced.data(), a.reduced.size()),
                       std::span<const std::int8_t>(b.reduced.data(), b.reduced.size()), {},
                       spec.variant);
}

Matrix ground_metric_matrix(std::span<const Triphone> support_p, std::span<const Triphone> support_q,
                            const FeatureTable& table, const GroundMetricSpec& spec) {
  std::vector<TriphoneEmbedding> ep, eq;
  ep.reserve(support_p.size());
  eq.reserve(support_q.size());
  for (const auto& t : support_p) ep.push_back(embed_triphone(t[0], t[1], t[2], table));
  for (const auto& t : support_q) eq.push_back(embed_triphone(t[0], t[1], t[2], table));

  Matrix m(support_p.size(), support_q.size());
  for (std::size_t i = 0; i < ep.size(); ++i) {
    for (std::size_t j = 0; j < eq.size(); ++j) {
      m(i, j) = triphone_distance(ep[i], eq[j], spec);
    }
  }
  if (spec.normalization == MetricNormalization::per_pair_max) {
    double mx = 0.0;
    for (double v : m.data) mx = std::max(mx, v);
    if (mx > 0.0) {
      for (double& v : m.data) v /= mx;
    }
  }
  return m;
}

}  // namespace phonodist::features
