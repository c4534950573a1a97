#include "phonodist/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace phonodist::blocks {

namespace {

// Minimal bits per symbol id.
int bits_for_alphabet(std::size_t l) {
  int bits = 1;
  while ((1ULL << bits) < l) ++bits;
  return bits;
}

}  // namespace

std::vector<corpus::PhonemeToken> BlockDistribution::unpack(std::uint64_t key) const {
  std::vector<corpus::PhonemeToken> out(static_cast<std::size_t>(r));
  if (bits == 0) {
    const auto& ids = extended.at(static_cast<std::size_t>(key));
    for (std::size_t pos = 0; pos < ids.size(); ++pos) out[pos] = alphabet.at(ids[pos]);
    return out;
  }
  const std::uint64_t mask = (1ULL << bits) - 1;
  for (int pos = r - 1; pos >= 0; --pos) {
    out[static_cast<std::size_t>(pos)] = alphabet.at(static_cast<std::size_t>(key & mask));
    key >>= bits;
  }
  return out;
}

std::uint64_t BlockDistribution::pack(std::span<const corpus::PhonemeToken> block) const {
  if (static_cast<int>(block.size()) != r) {
    throw std::invalid_argument("block length does not match r");
  }
  std::vector<std::uint32_t> ids;
  ids.reserve(block.size());
  for (const auto& tok : block) {
    const auto it = std::lower_bound(alphabet.begin(), alphabet.end(), tok);
    if (it == alphabet.end() || *it != tok) {
      throw std::runtime_error("token '" + tok + "' not in block alphabet");
    }
    ids.push_back(static_cast<std::uint32_t>(it - alphabet.begin()));
  }
  if (bits == 0) {
    const auto it = std::lower_bound(extended.begin(), extended.end(), ids);
    if (it == extended.end() || *it != ids) {
      throw std::runtime_error("block not present in the extended key table");
    }
    return static_cast<std::uint64_t>(it - extended.begin());
  }
  std::uint64_t key = 0;
  for (std::uint32_t id : ids) key = (key << bits) | id;
  return key;
}

std::vector<BlockDistribution::Item> BlockDistribution::items_by_count() const {
  std::vector<Item> items;
  items.reserve(counts.size());
  for (const auto& [k, c] : counts) items.push_back({k, c});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.key < b.key;
  });
  return items;
}

std::vector<BlockDistribution::Item> BlockDistribution::items_by_key() const {
  std::vector<Item> items;
  items.reserve(counts.size());
  for (const auto& [k, c] : counts) items.push_back({k, c});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.key < b.key; });
  return items;
}

double BlockDistribution::probability(std::uint64_t key) const {
  const auto it = counts.find(key);
  if (it == counts.end()) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(total);
}

void BlockDistribution::validate() const {
  std::uint64_t sum = 0;
  for (const auto& [k, c] : counts) {
    if (c == 0) throw std::logic_error("block distribution stores a zero count");
    sum += c;
  }
  if (sum != total) throw std::logic_error("block counts do not sum to total");
  if (total != source_N - static_cast<std::uint64_t>(r) + 1) {
    throw std::logic_error("block total != N - r + 1");
  }
  double psum = 0.0;
  for (const auto& [k, c] : counts) {
    psum += static_cast<double>(c) / static_cast<double>(total);
  }
  if (std::abs(psum - 1.0) > 1e-12) throw std::logic_error("block probabilities do not sum to 1");
}

BlockDistribution count_blocks(const corpus::PhonemeStream& stream, int r) {
  const std::size_t n = stream.size();
  if (r < 1) throw std::invalid_argument("block size r must be >= 1");
  if (static_cast<std::size_t>(r) > n) {
    throw std::invalid_argument("block size r=" + std::to_string(r) +
                                " exceeds stream length N=" + std::to_string(n));
  }
  BlockDistribution dist;
  dist.r = r;
  dist.alphabet.assign(stream.inventory.begin(), stream.inventory.end());
  dist.source_N = n;
  dist.source_L = static_cast<std::uint32_t>(dist.alphabet.size());
  dist.bits = bits_for_alphabet(dist.alphabet.size());

  // Token ids along the stream.
  std::vector<std::uint32_t> ids(n);
  {
    std::unordered_map<std::string_view, std::uint32_t> index;
    index.reserve(dist.alphabet.size() * 2);
    for (std::uint32_t i = 0; i < dist.alphabet.size(); ++i) {
      index.emplace(dist.alphabet[i], i);
    }
    for (std::size_t i = 0; i < n; ++i) ids[i] = index.at(stream.tokens[i]);
  }

  if (r * dist.bits > 64) {
    // Blocks too wide for packed keys: key = index into the sorted table of
    // distinct blocks.
    dist.bits = 0;
    std::map<std::vector<std::uint32_t>, std::uint64_t> acc;
    for (std::size_t i = 0; i + static_cast<std::size_t>(r) <= n; ++i) {
      ++acc[std::vector<std::uint32_t>(ids.begin() + static_cast<long>(i),
                                       ids.begin() + static_cast<long>(i) + r)];
    }
    dist.extended.reserve(acc.size());
    std::uint64_t key = 0;
    for (auto& [block, count] : acc) {
      dist.extended.push_back(block);
      dist.counts.emplace(key++, count);
    }
  } else {
    const std::uint64_t mask =
        (r * dist.bits == 64) ? ~0ULL : ((1ULL << (r * dist.bits)) - 1);
    std::uint64_t key = 0;
    dist.counts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      key = ((key << dist.bits) | ids[i]) & mask;
      if (i + 1 >= static_cast<std::size_t>(r)) ++dist.counts[key];
    }
  }
  dist.total = n - static_cast<std::size_t>(r) + 1;
  return dist;
}

int r_max(std::uint64_t n, std::uint64_t l) {
  if (l < 2) throw std::invalid_argument("r_max: inventory size L must be >= 2");
  if (n < 2) throw std::invalid_argument("r_max: stream length N must be >= 2");
  // Largest r with L^r <= N, via exact integer powers.
  int r = 0;
  std::uint64_t power = 1;
  while (power <= n / l) {
    power *= l;
    ++r;
  }
  return r;
}

corpus::PhonemeStream coarse_grain(const corpus::PhonemeStream& stream, const CoarseScheme& scheme) {
  if (scheme.class_map.empty()) {
    throw std::runtime_error("coarse scheme '" + scheme.name + "' has an empty class map");
  }
  std::vector<corpus::PhonemeToken> out;
  out.reserve(stream.size());
  for (const auto& tok : stream.tokens) {
    const auto it = scheme.class_map.find(tok);
    if (it == scheme.class_map.end()) {
      throw std::runtime_error("coarse scheme '" + scheme.name + "' does not cover phoneme '" +
                               tok + "'");
    }
    out.push_back(it->second);
  }
  return corpus::PhonemeStream::build(stream.language_id + ":" + scheme.name, std::move(out));
}

std::string_view to_string(CoarseKind k) {
  switch (k) {
    case CoarseKind::cons_vow: return "cons_vow";
    case CoarseKind::voicing: return "voicing";
    case CoarseKind::openness: return "openness";
    case CoarseKind::backness: return "backness";
  }
  return "?";
}

CoarseScheme make_coarse_scheme(CoarseKind kind, const features::FeatureTable& table,
                                const std::set<corpus::PhonemeToken>& inventory) {
  // Feature indices in the fixed 24-feature order.
  constexpr int kVoice = 8, kHigh = 15, kLow = 16, kBack = 17;
  CoarseScheme scheme;
  scheme.name = std::string(to_string(kind));
  for (const auto& tok : inventory) {
    const features::FeatureVector* v = table.find_base(tok);
    if (!v) continue;  // left uncovered; coarse_grain reports the phoneme
    const bool vowel = v->v[0] == 1;  // syllabic
    std::string label;
    switch (kind) {
      case CoarseKind::cons_vow:
        label = vowel ? "Vow" : "Cons";
        break;
      case CoarseKind::voicing:
        label = vowel ? "Vowel" : (v->v[kVoice] == 1 ? "Voiced" : "Unvoiced");
        break;
      case CoarseKind::openness:
        if (!vowel) label = "Cons";
        else if (v->v[kLow] == 1) label = "Open";
        else if (v->v[kHigh] == 1) label = "Close";
        else label = "Mid";  // neither high nor low
        break;
      case CoarseKind::backness:
        if (!vowel) label = "Cons";
        else if (v->v[kBack] == 1) label = "Back";
        else if (v->v[kBack] == -1) label = "Front";
        else label = "Central";
        break;
    }
    scheme.class_map[tok] = label;
  }
  return scheme;
}

void write_block_cache(const BlockDistribution& dist, const std::filesystem::path& path,
                       const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write block cache " + path.string());
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "N=" << dist.source_N << "\tL=" << dist.source_L << "\tr=" << dist.r << "\n";
  for (const auto& item : dist.items_by_count()) {
    const auto toks = dist.unpack(item.key);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (i) out << '|';
      out << toks[i];
    }
    out << '\t' << item.count << "\n";
  }
  if (!out) throw std::runtime_error("failed writing block cache " + path.string());
}

BlockDistribution read_block_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open block cache " + path.string());
  std::string line;
  std::uint64_t n = 0, l = 0;
  int r = 0;
  bool have_header = false;
  std::vector<std::pair<std::vector<corpus::PhonemeToken>, std::uint64_t>> rows;
  std::set<corpus::PhonemeToken> alphabet_set;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      unsigned long long nn = 0, ll = 0;
      if (std::sscanf(line.c_str(), "N=%llu\tL=%llu\tr=%d", &nn, &ll, &r) != 3) {
        throw std::runtime_error("block cache " + path.string() + ": bad header '" + line + "'");
      }
      n = nn;
      l = ll;
      have_header = true;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("block cache " + path.string() + ": bad row '" + line + "'");
    }
    std::vector<corpus::PhonemeToken> toks;
    std::stringstream ss(line.substr(0, tab));
    std::string tok;
    while (std::getline(ss, tok, '|')) toks.push_back(tok);
    if (static_cast<int>(toks.size()) != r) {
      throw std::runtime_error("block cache " + path.string() + ": block arity != r in '" + line +
                               "'");
    }
    const std::uint64_t count = std::stoull(line.substr(tab + 1));
    for (const auto& t : toks) alphabet_set.insert(t);
    rows.emplace_back(std::move(toks), count);
  }
  if (!have_header) throw std::runtime_error("block cache " + path.string() + ": missing header");

  BlockDistribution dist;
  dist.r = r;
  dist.source_N = n;
  dist.source_L = static_cast<std::uint32_t>(l);
  dist.alphabet.assign(alphabet_set.begin(), alphabet_set.end());
  dist.bits = bits_for_alphabet(std::max<std::size_t>(dist.alphabet.size(), 1));
  if (r * dist.bits > 64) {
    dist.bits = 0;
    std::set<std::vector<std::uint32_t>> blocks_sorted;
    auto to_ids = [&](const std::vector<corpus::PhonemeToken>& toks) {
      std::vector<std::uint32_t> out;
      for (const auto& t : toks) {
        const auto it = std::lower_bound(dist.alphabet.begin(), dist.alphabet.end(), t);
        out.push_back(static_cast<std::uint32_t>(it - dist.alphabet.begin()));
      }
      return out;
    };
    for (const auto& [toks, count] : rows) blocks_sorted.insert(to_ids(toks));
    dist.extended.assign(blocks_sorted.begin(), blocks_sorted.end());
  }
  std::uint64_t total = 0;
  for (const auto& [toks, count] : rows) {
    dist.counts[dist.pack(toks)] += count;
    total += count;
  }
  dist.total = total;
  if (total != n - static_cast<std::uint64_t>(r) + 1) {
    throw std::runtime_error("block cache " + path.string() + ": counts do not sum to N - r + 1");
  }
  return dist;
}

}  // namespace phonodist::blocks
