#include "phonodist/corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "phonodist/csv.hpp"
#include "phonodist/utf8.hpp"

namespace phonodist::corpus {

namespace {

constexpr char32_t kModAspiration = U'ʰ';       // ʰ
constexpr char32_t kModMurmur = U'ʱ';           // ʱ
constexpr char32_t kModPalatalization = U'ʲ';   // ʲ
constexpr char32_t kModPharyngealization = U'ˤ';  // ˤ
constexpr char32_t kModNasalization = U'̃';     // combining tilde
constexpr char32_t kLengthLong = U'ː';          // ː
constexpr char32_t kLengthHalf = U'ˑ';          // ˑ

bool is_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v' ||
         c == U' ' || c == U' ' || c == U'​' || c == U'　';
}

bool is_length_mark(char32_t c) { return c == kLengthLong || c == kLengthHalf; }

// Stress, breaks, linking and tone marks removed by strip_suprasegmentals.
bool is_suprasegmental(char32_t c) {
  switch (c) {
    case U'ˈ':  // primary stress
    case U'ˌ':  // secondary stress
    case U'.':       // syllable break
    case U'|':       // minor group
    case U'‖':  // major group
    case U'‿':  // linking
    case U'↗':  // global rise
    case U'↘':  // global fall
      return true;
    default:
      break;
  }
  if (c >= U'˥' && c <= U'˩') return true;  // tone letters
  // Combining tone/stress diacritics.
  switch (c) {
    case U'̀':
    case U'́':
    case U'̂':
    case U'̄':
    case U'̋':
    case U'̌':
    case U'̏':
    case U'᷄':
    case U'᷅':
    case U'᷈':
      return true;
    default:
      return false;
  }
}

bool is_combining_mark(char32_t c) {
  return (c >= 0x0300 && c <= 0x036F) || (c >= 0x1AB0 && c <= 0x1AFF) ||
         (c >= 0x1DC0 && c <= 0x1DFF) || (c >= 0x20D0 && c <= 0x20FF);
}

bool is_modifier_letter(char32_t c) { return c >= 0x02B0 && c <= 0x02FF; }

std::string context_window(const std::vector<char32_t>& cps, std::size_t pos) {
  const std::size_t lo = pos >= 4 ? pos - 4 : 0;
  const std::size_t hi = std::min(cps.size(), pos + 5);
  std::string out;
  for (std::size_t i = lo; i < hi; ++i) {
    if (i == pos) out += '[';
    utf8::append(out, cps[i]);
    if (i == pos) out += ']';
  }
  return out;
}

bool token_has_whitespace(const std::string& t) {
  for (char32_t c : utf8::decode(t)) {
    if (is_space(c)) return true;
  }
  return false;
}

}  // namespace

PhonemeStream PhonemeStream::build(std::string language_id, std::vector<PhonemeToken> tokens) {
  if (tokens.empty()) {
    throw std::runtime_error("phoneme stream '" + language_id + "' is empty");
  }
  PhonemeStream s;
  s.language_id = std::move(language_id);
  for (const auto& t : tokens) {
    if (t.empty()) throw std::runtime_error("phoneme stream contains an empty token");
    if (token_has_whitespace(t)) {
      throw std::runtime_error("phoneme token '" + t + "' contains whitespace");
    }
  }
  s.inventory.insert(tokens.begin(), tokens.end());
  s.tokens = std::move(tokens);
  return s;
}

std::set<char32_t> NormalizationPolicy::kept_modifier_codepoints() const {
  std::set<char32_t> kept;
  if (keep_set.count("aspiration")) kept.insert(kModAspiration);
  if (keep_set.count("murmur")) kept.insert(kModMurmur);
  if (keep_set.count("palatalization")) kept.insert(kModPalatalization);
  if (keep_set.count("pharyngealization")) kept.insert(kModPharyngealization);
  if (keep_set.count("nasalization")) kept.insert(kModNasalization);
  return kept;
}

Segmenter::Segmenter(const std::vector<std::string>& segments,
                     const std::vector<std::string>& vowels) {
  for (const auto& s : segments) {
    if (s.empty()) continue;
    const auto cps = utf8::decode(s);
    segments_.insert(s);
    segments32_.insert(std::u32string(cps.begin(), cps.end()));
    max_len_ = std::max(max_len_, cps.size());
  }
  for (const auto& v : vowels) {
    const auto cps = utf8::decode(v);
    vowels32_.insert(std::u32string(cps.begin(), cps.end()));
  }
  if (segments_.empty()) throw std::invalid_argument("segmenter needs a non-empty inventory");
}

std::size_t Segmenter::match(const std::vector<char32_t>& cps, std::size_t pos) const {
  const std::size_t cap = std::min(max_len_, cps.size() - pos);
  std::u32string probe;
  probe.reserve(cap);
  std::size_t best = 0;
  for (std::size_t len = 1; len <= cap; ++len) {
    probe.push_back(cps[pos + len - 1]);
    if (segments32_.count(probe)) best = len;
  }
  return best;
}

bool Segmenter::is_vowel(const std::string& segment) const {
  const auto cps = utf8::decode(segment);
  std::u32string s(cps.begin(), cps.end());
  if (vowels32_.count(s)) return true;
  // Modifier-bearing tokens classify by their base segment.
  while (s.size() > 1) {
    s.pop_back();
    if (vowels32_.count(s)) return true;
    if (segments32_.count(s)) return false;
  }
  return false;
}

namespace {

std::vector<PhonemeToken> tokenize_text(std::string_view raw, const NormalizationPolicy& policy,
                                        const Segmenter& segmenter, const std::string& language_id,
                                        NormalizationStats* stats) {
  NormalizationStats local;
  NormalizationStats& st = stats ? *stats : local;
  const std::set<char32_t> kept = policy.kept_modifier_codepoints();
  const std::set<char32_t> custom(policy.custom_removals.begin(), policy.custom_removals.end());
  for (char32_t c : kept) {
    if (custom.count(c)) {
      throw std::invalid_argument("normalization policy: kept modifier U+" +
                                  std::to_string(static_cast<std::uint32_t>(c)) +
                                  " also listed in custom_removals");
    }
  }

  const auto all = utf8::decode(raw);
  std::vector<PhonemeToken> tokens;
  tokens.reserve(all.size());

  std::size_t i = 0;
  while (i < all.size()) {
    while (i < all.size() && is_space(all[i])) ++i;
    if (i >= all.size()) break;
    // Gather one whitespace-delimited word, applying codepoint-level removals.
    std::vector<char32_t> word;
    while (i < all.size() && !is_space(all[i])) {
      const char32_t c = all[i++];
      if (custom.count(c)) {
        ++st.stripped_custom;
        continue;
      }
      if (kept.count(c)) {
        word.push_back(c);
        continue;
      }
      if (policy.strip_suprasegmentals && is_suprasegmental(c)) {
        ++st.stripped_suprasegmentals;
        continue;
      }
      word.push_back(c);
    }
    if (word.empty()) continue;
    ++st.words;

    const std::size_t word_start_token = tokens.size();
    std::size_t pos = 0;
    while (pos < word.size()) {
      const char32_t c = word[pos];
      if (is_length_mark(c)) {
        if (tokens.size() > word_start_token) {
          PhonemeToken& last = tokens.back();
          if (!segmenter.is_vowel(last) && policy.long_consonant_doubling) {
            tokens.push_back(last);  // long consonants are analyzed as double
            ++st.doubled_consonants;
          } else if (policy.strip_length || !segmenter.is_vowel(last)) {
            ++st.stripped_length_marks;
          } else {
            utf8::append(last, c);  // length kept attached
          }
        } else {
          ++st.stripped_unknown_diacritics;
        }
        ++pos;
        continue;
      }
      const std::size_t m = segmenter.match(word, pos);
      if (m > 0) {
        std::string token;
        for (std::size_t k = 0; k < m; ++k) utf8::append(token, word[pos + k]);
        pos += m;
        // Absorb kept modifiers that were not part of a longer table entry.
        while (pos < word.size() && kept.count(word[pos])) {
          utf8::append(token, word[pos]);
          ++pos;
        }
        tokens.push_back(std::move(token));
        continue;
      }
      if (is_combining_mark(c) || is_modifier_letter(c)) {
        ++st.stripped_unknown_diacritics;
        ++pos;
        continue;
      }
      throw std::runtime_error("unsegmentable codepoint U+" +
                               [](char32_t cp) {
                                 std::ostringstream os;
                                 os << std::hex << std::uppercase << static_cast<std::uint32_t>(cp);
                                 return os.str();
                               }(c) +
                               " in '" + language_id + "', context \"" + context_window(word, pos) +
                               "\"");
    }
  }
  return tokens;
}

}  // namespace

PhonemeStream normalize_stream(std::string_view raw, const NormalizationPolicy& policy,
                               const Segmenter& segmenter, std::string language_id,
                               NormalizationStats* stats) {
  auto tokens = tokenize_text(raw, policy, segmenter, language_id, stats);
  if (tokens.empty()) {
    throw std::runtime_error("normalization of '" + language_id + "' produced an empty stream");
  }
  PhonemeStream s = PhonemeStream::build(std::move(language_id), std::move(tokens));
  if (s.inventory_size() < 2) {
    throw std::runtime_error("normalized stream '" + s.language_id +
                             "' has a degenerate inventory (need at least 2 distinct phonemes)");
  }
  return s;
}

EditResult levenshtein(std::span<const PhonemeToken> a, std::span<const PhonemeToken> b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
      const std::size_t del = at(i - 1, j) + 1;
      const std::size_t ins = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, del, ins});
    }
  }
  EditResult result;
  result.distance = at(n, m);
  // Backtrack; prefer diagonal, then deletion, then insertion.
  std::size_t i = n, j = m;
  std::vector<EditOp> rev;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1)) {
      if (a[i - 1] != b[j - 1]) {
        rev.push_back({EditOp::Kind::substitute, i - 1, j - 1, a[i - 1], b[j - 1]});
      }
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      rev.push_back({EditOp::Kind::erase, i - 1, j, a[i - 1], {}});
      --i;
    } else {
      rev.push_back({EditOp::Kind::insert, i, j - 1, {}, b[j - 1]});
      --j;
    }
  }
  result.ops.assign(rev.rbegin(), rev.rend());
  return result;
}

std::vector<LanguageRecord> load_manifest(const std::filesystem::path& path,
                                          std::vector<std::string>* warnings) {
  const auto rows = csv::read_rows(path, ',', true);
  std::vector<LanguageRecord> records;
  if (rows.empty()) {
    if (warnings) warnings->push_back("manifest " + path.string() + " is empty");
    return records;
  }
  std::size_t start = 0;
  if (!rows[0].fields.empty() && rows[0].fields[0] == "id") start = 1;  // header
  std::set<std::string> seen;
  for (std::size_t r = start; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const auto lineref = path.filename().string() + ":" + std::to_string(row.line_number);
    if (row.fields.size() != 7) {
      throw std::runtime_error("manifest " + lineref + ": expected 7 fields "
                               "(id,name,family,genus,latitude,longitude,flags), got " +
                               std::to_string(row.fields.size()));
    }
    LanguageRecord rec;
    rec.id = row.fields[0];
    rec.name = row.fields[1];
    rec.family = row.fields[2];
    rec.genus = row.fields[3];
    if (rec.id.empty()) throw std::runtime_error("manifest " + lineref + ": empty id");
    try {
      rec.latitude = std::stod(row.fields[4]);
      rec.longitude = std::stod(row.fields[5]);
    } catch (const std::exception&) {
      throw std::runtime_error("manifest " + lineref + ": unparseable coordinate");
    }
    if (rec.latitude < -90.0 || rec.latitude > 90.0) {
      throw std::runtime_error("manifest " + lineref + ": latitude " + row.fields[4] +
                               " out of range [-90, 90]");
    }
    if (rec.longitude < -180.0 || rec.longitude > 180.0) {
      throw std::runtime_error("manifest " + lineref + ": longitude " + row.fields[5] +
                               " out of range [-180, 180]");
    }
    if (!row.fields[6].empty()) {
      std::stringstream ss(row.fields[6]);
      std::string flag;
      while (std::getline(ss, flag, '|')) {
        if (!flag.empty()) rec.excluded_flags.insert(flag);
      }
    }
    if (!seen.insert(rec.id).second) {
      throw std::runtime_error("manifest " + lineref + ": duplicate id '" + rec.id + "'");
    }
    records.push_back(std::move(rec));
  }
  if (records.empty() && warnings) {
    warnings->push_back("manifest " + path.string() + " has a header but no records");
  }
  return records;
}

ValidationReport validate_against_lexicon(
    const std::map<std::string, std::vector<PhonemeToken>>& corpus_words,
    const std::map<std::string, std::vector<PhonemeToken>>& reference) {
  ValidationReport report;
  std::size_t matches = 0;
  std::size_t d1_sub = 0, d1_ins = 0, d1_del = 0;
  for (const auto& [word, ours] : corpus_words) {
    const auto it = reference.find(word);
    if (it == reference.end()) continue;
    ++report.n_compared;
    const EditResult e = levenshtein(ours, it->second);
    ++report.distance_histogram[e.distance];
    if (e.distance == 0) {
      ++matches;
    } else if (e.distance == 1) {
      switch (e.ops.front().kind) {
        case EditOp::Kind::substitute: ++d1_sub; break;
        case EditOp::Kind::insert: ++d1_ins; break;
        case EditOp::Kind::erase: ++d1_del; break;
      }
    }
  }
  if (report.n_compared == 0) {
    throw std::runtime_error("no shared words between corpus and reference lexicon");
  }
  report.match_fraction = static_cast<double>(matches) / static_cast<double>(report.n_compared);
  const std::size_t d1 = d1_sub + d1_ins + d1_del;
  if (d1 > 0) {
    report.sub_fraction = static_cast<double>(d1_sub) / static_cast<double>(d1);
    report.ins_fraction = static_cast<double>(d1_ins) / static_cast<double>(d1);
    report.del_fraction = static_cast<double>(d1_del) / static_cast<double>(d1);
  }
  return report;
}

std::map<std::string, std::vector<PhonemeToken>> load_lexicon(const std::filesystem::path& path,
                                                              const NormalizationPolicy& policy,
                                                              const Segmenter& segmenter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open lexicon " + path.string());
  std::map<std::string, std::vector<PhonemeToken>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("lexicon " + path.filename().string() + ":" +
                               std::to_string(lineno) + ": expected word<TAB>transcription");
    }
    const std::string word = line.substr(0, tab);
    const std::string transcription = line.substr(tab + 1);
    if (word.empty() || transcription.empty()) continue;
    auto tokens = tokenize_text(transcription, policy, segmenter, word, nullptr);
    if (tokens.empty()) continue;
    out[word] = std::move(tokens);
  }
  return out;
}

}  // namespace phonodist::corpus
