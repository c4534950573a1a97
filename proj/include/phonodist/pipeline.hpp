#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phonodist/cluster.hpp"
#include "phonodist/corpus.hpp"
#include "phonodist/entropy.hpp"
#include "phonodist/features.hpp"
#include "phonodist/geostat.hpp"
#include "phonodist/transport.hpp"

namespace phonodist::pipeline {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kVersion = "0.1.0";

// Raised for unusable configuration or missing prerequisites; maps to exit 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EntropyConfig {
  int r_upper = 0;         // 0 = auto: min(r_max + 1, 5)
  int coarse_r_upper = 0;  // 0 = auto: min(coarse r_max, 10)
  int jackknife_blocks = 20;
  double tolerance_floor = 0.01;
  double alphabet_cap_factor = 1e6;
};

struct GridConfig {
  geostat::GridSpec spec;
  bool refine = true;
};

struct PipelineConfig {
  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path manifest = "manifest.csv";
  std::filesystem::path feature_table = "data/features_24.csv";
  std::filesystem::path out_dir = "out";
  std::filesystem::path lexicon_dir;            // optional (validate)
  std::filesystem::path reference_lexicon_dir;  // optional (validate)

  corpus::NormalizationPolicy normalization;
  int r = 3;  // block size for the distance pipeline (triphones)
  entropy::Estimator estimator = entropy::Estimator::nsb;
  EntropyConfig entropy_cfg;

  features::GroundMetricSpec metric;
  std::filesystem::path weights_file;  // weighted variant only

  transport::SinkhornParams sinkhorn;
  transport::TruncationPolicy truncation{0.999, 8000};

  std::string family_filter;  // empty = all languages
  std::vector<std::string> exclude_flags = {"colonial-transplant"};

  GridConfig grid;
  int homeland_draws = 2000;
  int permutations = 999;
  std::uint64_t seed = 12345;
  unsigned threads = 0;
  cluster::WardMode ward_mode = cluster::WardMode::squared;

  // Canonical JSON text of the fully-resolved config and its hash.
  std::string canonical_json() const;
  std::string config_hash() const;
};

// Loads defaults, merges an optional JSON config file on top.
PipelineConfig load_config(const std::optional<std::filesystem::path>& config_file);

std::uint64_t hash_file(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);

// Pipeline stages; return process exit codes (0 ok, 1 partial failures).
// Configuration problems and missing prerequisites throw ConfigError.
int cmd_normalize(const PipelineConfig& config);
int cmd_validate(const PipelineConfig& config);
int cmd_entropy(const PipelineConfig& config);
int cmd_distmat(const PipelineConfig& config);
int cmd_cluster(const PipelineConfig& config);
int cmd_geo(const PipelineConfig& config);
int cmd_homeland(const PipelineConfig& config);
int cmd_all(const PipelineConfig& config);

// Stream cache helpers (one token file per language under out/streams).
void write_stream_file(const std::filesystem::path& path, const corpus::PhonemeStream& stream,
                       const std::string& config_hash);
corpus::PhonemeStream read_stream_file(const std::filesystem::path& path,
                                       const std::string& language_id);

// Distance-matrix CSV (config-hash comment, header row/column of ids).
void write_distance_matrix_csv(const std::filesystem::path& path,
                               const transport::DistanceMatrix& matrix,
                               const std::string& config_hash);
transport::DistanceMatrix read_distance_matrix_csv(const std::filesystem::path& path);

}  // namespace phonodist::pipeline
