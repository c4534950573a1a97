#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace phonodist::corpus {

// One IPA segment, possibly multi-codepoint (affricate, aspirated stop, ...).
using PhonemeToken = std::string;

struct PhonemeStream {
  std::string language_id;
  std::vector<PhonemeToken> tokens;
  std::set<PhonemeToken> inventory;

  std::size_t size() const { return tokens.size(); }
  std::size_t inventory_size() const { return inventory.size(); }

  // Validates: non-empty tokens without whitespace, N >= 1. Language streams
  // produced by normalize_stream additionally require an inventory of >= 2.
  static PhonemeStream build(std::string language_id, std::vector<PhonemeToken> tokens);
};

struct NormalizationPolicy {
  bool strip_suprasegmentals = true;
  bool strip_length = true;
  bool long_consonant_doubling = true;
  // Modifier categories whose marks stay attached to their base segment.
  std::set<std::string> keep_set = {"aspiration", "palatalization", "pharyngealization",
                                    "murmur", "nasalization"};
  std::vector<char32_t> custom_removals;

  std::set<char32_t> kept_modifier_codepoints() const;
};

// Longest-match tokenizer over a known segment inventory.
class Segmenter {
 public:
  Segmenter(const std::vector<std::string>& segments, const std::vector<std::string>& vowels);

  // Length (in codepoints) of the longest known segment starting at pos; 0 if none.
  std::size_t match(const std::vector<char32_t>& cps, std::size_t pos) const;
  bool is_vowel(const std::string& segment) const;
  bool known(const std::string& segment) const { return segments_.count(segment) > 0; }
  std::size_t size() const { return segments_.size(); }

 private:
  std::set<std::string> segments_;
  std::set<std::u32string> segments32_;
  std::set<std::u32string> vowels32_;
  std::size_t max_len_ = 1;
};

struct NormalizationStats {
  std::size_t words = 0;
  std::size_t stripped_suprasegmentals = 0;
  std::size_t stripped_length_marks = 0;
  std::size_t stripped_unknown_diacritics = 0;
  std::size_t stripped_custom = 0;
  std::size_t doubled_consonants = 0;
};

// Tokenizes raw IPA text into a normalized stream: word boundaries removed,
// suprasegmentals and length marks handled per policy, kept modifiers
// attached to their base segment. Throws on unsegmentable codepoints (error
// message includes the offending context window).
PhonemeStream normalize_stream(std::string_view raw, const NormalizationPolicy& policy,
                               const Segmenter& segmenter, std::string language_id = "",
                               NormalizationStats* stats = nullptr);

struct EditOp {
  enum class Kind { substitute, insert, erase };
  Kind kind;
  std::size_t a_pos;  // position in a
  std::size_t b_pos;  // position in b
  PhonemeToken from;  // token removed/replaced (substitute, erase)
  PhonemeToken to;    // token added (substitute, insert)
};

struct EditResult {
  std::size_t distance = 0;
  std::vector<EditOp> ops;  // minimal edit script transforming a into b
};

EditResult levenshtein(std::span<const PhonemeToken> a, std::span<const PhonemeToken> b);

struct LanguageRecord {
  std::string id;
  std::string name;
  std::string family;
  std::string genus;
  double latitude = 0.0;
  double longitude = 0.0;
  std::set<std::string> excluded_flags;
};

// CSV manifest `id,name,family,genus,latitude,longitude,flags` with
// '|'-separated flags. Rejects duplicate ids and out-of-range coordinates.
std::vector<LanguageRecord> load_manifest(const std::filesystem::path& path,
                                          std::vector<std::string>* warnings = nullptr);

struct ValidationReport {
  std::size_t n_compared = 0;
  double match_fraction = 0.0;
  std::map<std::size_t, std::size_t> distance_histogram;
  // Fractions over distance-1 pairs; sum to 1 when such pairs exist.
  double sub_fraction = 0.0;
  double ins_fraction = 0.0;
  double del_fraction = 0.0;
};

// Compares word-keyed transcriptions over the key intersection. Throws if the
// intersection is empty.
ValidationReport validate_against_lexicon(
    const std::map<std::string, std::vector<PhonemeToken>>& corpus_words,
    const std::map<std::string, std::vector<PhonemeToken>>& reference);

// TSV `word<TAB>transcription`; transcriptions are normalized per policy but
// keyed by word (boundaries inside an entry are not expected).
std::map<std::string, std::vector<PhonemeToken>> load_lexicon(const std::filesystem::path& path,
                                                              const NormalizationPolicy& policy,
                                                              const Segmenter& segmenter);

}  // namespace phonodist::corpus
