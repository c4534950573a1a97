#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "phonodist/corpus.hpp"
#include "phonodist/features.hpp"

namespace phonodist::blocks {

// Sparse distribution of overlapping r-phone blocks. Blocks are stored as
// packed symbol-id keys; when r symbols do not fit into 64 bits the keys
// index an explicit table of distinct blocks instead (bits == 0).
struct BlockDistribution {
  int r = 1;
  std::vector<corpus::PhonemeToken> alphabet;  // sorted; id == index
  std::unordered_map<std::uint64_t, std::uint64_t> counts;
  std::uint64_t total = 0;     // N - r + 1
  std::uint64_t source_N = 0;  // stream length
  std::uint32_t source_L = 0;  // inventory size
  int bits = 16;               // bits per symbol in the packed key; 0 = extended
  std::vector<std::vector<std::uint32_t>> extended;  // lex-sorted distinct blocks

  std::vector<corpus::PhonemeToken> unpack(std::uint64_t key) const;
  std::uint64_t pack(std::span<const corpus::PhonemeToken> block) const;

  struct Item {
    std::uint64_t key;
    std::uint64_t count;
  };
  // Deterministic orders: by count descending (key ascending on ties) and by key.
  std::vector<Item> items_by_count() const;
  std::vector<Item> items_by_key() const;

  double probability(std::uint64_t key) const;
  void validate() const;  // totals and probability-sum invariants
};

// Counts all N - r + 1 overlapping windows. Throws if r < 1 or r > N.
BlockDistribution count_blocks(const corpus::PhonemeStream& stream, int r);

// Largest r with L^r <= N (equals floor(ln N / ln L), computed exactly).
int r_max(std::uint64_t n, std::uint64_t l);

struct CoarseScheme {
  std::string name;
  std::map<corpus::PhonemeToken, std::string> class_map;
};

// Maps each token through the class map; output length equals input length.
corpus::PhonemeStream coarse_grain(const corpus::PhonemeStream& stream, const CoarseScheme& scheme);

enum class CoarseKind { cons_vow, voicing, openness, backness };

std::string_view to_string(CoarseKind k);

// Builds a class map for the given inventory from the feature table:
// vowels are syllabic=+1; voicing uses voice, openness uses low/high,
// backness uses back (+1 back, -1 front, 0 central). Tokens missing from the
// table fall back to their base segment (modifier letters stripped); tokens
// that still resolve nowhere are left out of the map, which makes
// coarse_grain fail with the phoneme name.
CoarseScheme make_coarse_scheme(CoarseKind kind, const features::FeatureTable& table,
                                const std::set<corpus::PhonemeToken>& inventory);

// Cache format: header `N=<n>\tL=<l>\tr=<r>` then rows
// `tok|tok|...<TAB>count` sorted by count descending.
void write_block_cache(const BlockDistribution& dist, const std::filesystem::path& path,
                       const std::string& comment = {});
BlockDistribution read_block_cache(const std::filesystem::path& path);

}  // namespace phonodist::blocks
