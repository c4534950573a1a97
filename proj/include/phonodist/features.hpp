#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phonodist/matrix.hpp"

namespace phonodist::features {

inline constexpr int kFeatureCount = 24;

// Fixed feature order used by the table file. The last four (velaric, long
// and the two tonal features) are constant over the dataset and dropped from
// the working embedding at load time.
extern const std::array<std::string_view, kFeatureCount> kFeatureNames;

// Ternary feature values: +1 present, -1 absent, 0 unspecified.
struct FeatureVector {
  std::array<std::int8_t, kFeatureCount> v{};

  bool operator==(const FeatureVector& o) const { return v == o.v; }
  std::int8_t operator[](std::size_t i) const { return v[i]; }
};

class FeatureTable {
 public:
  // Loads a CSV with header `phoneme,<24 feature names>` and values +/-/0.
  static FeatureTable load(const std::filesystem::path& path);
  static FeatureTable from_rows(const std::vector<std::pair<std::string, FeatureVector>>& rows,
                                std::uint64_t provenance = 0);

  bool contains(const std::string& phoneme) const { return table_.count(phoneme) > 0; }
  const FeatureVector& at(const std::string& phoneme, std::string_view context = {}) const;
  // Lookup that retries after stripping trailing modifier letters (aspiration
  // marks, palatalization, etc.); used for class maps, not for embeddings.
  const FeatureVector* find_base(const std::string& phoneme) const;

  std::vector<std::string> phonemes() const;        // sorted
  std::vector<std::string> vowel_phonemes() const;  // syllabic == +1

  // Indices of features that vary across the table (the working dimensions).
  const std::vector<int>& active_dims() const { return active_dims_; }
  std::uint64_t active_mask_hash() const { return mask_hash_; }
  std::uint64_t provenance_hash() const { return provenance_; }
  std::size_t size() const { return table_.size(); }

 private:
  void finalize();

  std::map<std::string, FeatureVector> table_;
  std::vector<int> active_dims_;
  std::uint64_t mask_hash_ = 0;
  std::uint64_t provenance_ = 0;
};

using Triphone = std::array<std::string, 3>;

struct TriphoneEmbedding {
  Triphone symbols;
  std::array<std::int8_t, 3 * kFeatureCount> full{};
  std::vector<std::int8_t> reduced;  // constant dims dropped, 3 * active_dims
  std::uint64_t mask_hash = 0;
};

enum class MetricVariant {
  feature_edit_unweighted,
  feature_edit_weighted,
  feature_hamming,
  levenshtein,
};

enum class MetricNormalization { none, per_pair_max };

MetricVariant metric_variant_from_string(std::string_view name);
std::string_view to_string(MetricVariant v);

struct GroundMetricSpec {
  MetricVariant variant = MetricVariant::feature_edit_unweighted;
  // Per-feature salience weights, strictly positive; required for the
  // weighted variant and ignored otherwise.
  std::optional<std::array<double, kFeatureCount>> weights;
  MetricNormalization normalization = MetricNormalization::none;
};

// Reads a `feature,weight` CSV covering all 24 features.
std::array<double, kFeatureCount> load_weight_file(const std::filesystem::path& path);

TriphoneEmbedding embed_triphone(const std::string& p1, const std::string& p2,
                                 const std::string& p3, const FeatureTable& table,
                                 std::string_view context = {});

// Distance between two single-phone feature vectors.
double phone_distance(const FeatureVector& x, const FeatureVector& y, const GroundMetricSpec& spec);

// Position-aligned sum over the three phones (symbol equality for the
// levenshtein variant). Throws if the reduction masks differ.
double triphone_distance(const TriphoneEmbedding& a, const TriphoneEmbedding& b,
                         const GroundMetricSpec& spec);

// Cost matrix between two triphone supports. Symmetric with zero diagonal
// when the supports coincide elementwise.
Matrix ground_metric_matrix(std::span<const Triphone> support_p, std::span<const Triphone> support_q,
                            const FeatureTable& table, const GroundMetricSpec& spec);

}  // namespace phonodist::features
