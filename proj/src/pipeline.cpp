#include "phonodist/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "phonodist/blocks.hpp"
#include "phonodist/csv.hpp"
#include "phonodist/parallel.hpp"
#include "phonodist/rng.hpp"

namespace phonodist::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

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

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Timestamped step timings for the run manifest.
class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct Failure {
  std::string id;
  std::string error;
};

json failures_json(const std::vector<Failure>& failures) {
  json arr = json::array();
  for (const auto& f : failures) arr.push_back({{"id", f.id}, {"error", f.error}});
  return arr;
}

}  // namespace

std::uint64_t hash_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  return fnv1a(kFnvOffset, bytes.data(), bytes.size());
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const PipelineConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["corpus_dir"] = c.corpus_dir.string();
  j["manifest"] = c.manifest.string();
  j["feature_table"] = c.feature_table.string();
  j["out_dir"] = c.out_dir.string();
  j["lexicon_dir"] = c.lexicon_dir.string();
  j["reference_lexicon_dir"] = c.reference_lexicon_dir.string();
  j["normalization"] = {
      {"strip_suprasegmentals", c.normalization.strip_suprasegmentals},
      {"strip_length", c.normalization.strip_length},
      {"long_consonant_doubling", c.normalization.long_consonant_doubling},
      {"keep", std::vector<std::string>(c.normalization.keep_set.begin(),
                                        c.normalization.keep_set.end())},
      {"custom_removals", std::vector<std::uint32_t>(c.normalization.custom_removals.begin(),
                                                     c.normalization.custom_removals.end())},
  };
  j["r"] = c.r;
  j["estimator"] = std::string(entropy::to_string(c.estimator));
  j["entropy"] = {
      {"r_upper", c.entropy_cfg.r_upper},
      {"coarse_r_upper", c.entropy_cfg.coarse_r_upper},
      {"jackknife_blocks", c.entropy_cfg.jackknife_blocks},
      {"tolerance_floor", c.entropy_cfg.tolerance_floor},
      {"alphabet_cap_factor", c.entropy_cfg.alphabet_cap_factor},
  };
  j["metric"] = {
      {"variant", std::string(features::to_string(c.metric.variant))},
      {"weights_file", c.weights_file.string()},
      {"normalization",
       c.metric.normalization == features::MetricNormalization::none ? "none" : "per_pair_max"},
  };
  j["sinkhorn"] = {
      {"epsilon_factor", c.sinkhorn.epsilon_factor},
      {"epsilon_abs", c.sinkhorn.epsilon_abs ? *c.sinkhorn.epsilon_abs : 0.0},
      {"max_iter", c.sinkhorn.max_iter},
      {"tol", c.sinkhorn.tol},
      {"epsilon_scaling", c.sinkhorn.epsilon_scaling},
  };
  j["truncation"] = {
      {"mass_coverage", c.truncation.mass_coverage},
      {"max_support", c.truncation.max_support},
  };
  j["family_filter"] = c.family_filter;
  j["exclude_flags"] = c.exclude_flags;
  j["grid"] = {
      {"lat_min", c.grid.spec.lat_min}, {"lat_max", c.grid.spec.lat_max},
      {"lon_min", c.grid.spec.lon_min}, {"lon_max", c.grid.spec.lon_max},
      {"step", c.grid.spec.step},       {"refine", c.grid.refine},
  };
  j["homeland_draws"] = c.homeland_draws;
  j["permutations"] = c.permutations;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["ward_mode"] = c.ward_mode == cluster::WardMode::squared ? "squared" : "direct";
  return j;
}

void config_from_json(const json& j, PipelineConfig& c) {
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).template get<std::decay_t<decltype(out)>>();
  };
  if (j.contains("corpus_dir")) c.corpus_dir = j.at("corpus_dir").get<std::string>();
  if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
  if (j.contains("feature_table")) c.feature_table = j.at("feature_table").get<std::string>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("lexicon_dir")) c.lexicon_dir = j.at("lexicon_dir").get<std::string>();
  if (j.contains("reference_lexicon_dir")) {
    c.reference_lexicon_dir = j.at("reference_lexicon_dir").get<std::string>();
  }
  if (j.contains("normalization")) {
    const auto& n = j.at("normalization");
    if (n.contains("strip_suprasegmentals")) {
      c.normalization.strip_suprasegmentals = n.at("strip_suprasegmentals").get<bool>();
    }
    if (n.contains("strip_length")) c.normalization.strip_length = n.at("strip_length").get<bool>();
    if (n.contains("long_consonant_doubling")) {
      c.normalization.long_consonant_doubling = n.at("long_consonant_doubling").get<bool>();
    }
    if (n.contains("keep")) {
      const auto keep = n.at("keep").get<std::vector<std::string>>();
      c.normalization.keep_set = std::set<std::string>(keep.begin(), keep.end());
    }
    if (n.contains("custom_removals")) {
      const auto cr = n.at("custom_removals").get<std::vector<std::uint32_t>>();
      c.normalization.custom_removals.assign(cr.begin(), cr.end());
    }
  }
  get("r", c.r);
  if (j.contains("estimator")) {
    c.estimator = entropy::estimator_from_string(j.at("estimator").get<std::string>());
  }
  if (j.contains("entropy")) {
    const auto& e = j.at("entropy");
    if (e.contains("r_upper")) c.entropy_cfg.r_upper = e.at("r_upper").get<int>();
    if (e.contains("coarse_r_upper")) c.entropy_cfg.coarse_r_upper = e.at("coarse_r_upper").get<int>();
    if (e.contains("jackknife_blocks")) {
      c.entropy_cfg.jackknife_blocks = e.at("jackknife_blocks").get<int>();
    }
    if (e.contains("tolerance_floor")) {
      c.entropy_cfg.tolerance_floor = e.at("tolerance_floor").get<double>();
    }
    if (e.contains("alphabet_cap_factor")) {
      c.entropy_cfg.alphabet_cap_factor = e.at("alphabet_cap_factor").get<double>();
    }
  }
  if (j.contains("metric")) {
    const auto& m = j.at("metric");
    if (m.contains("variant")) {
      c.metric.variant = features::metric_variant_from_string(m.at("variant").get<std::string>());
    }
    if (m.contains("weights_file")) c.weights_file = m.at("weights_file").get<std::string>();
    if (m.contains("normalization")) {
      const auto norm = m.at("normalization").get<std::string>();
      if (norm == "none") c.metric.normalization = features::MetricNormalization::none;
      else if (norm == "per_pair_max") {
        c.metric.normalization = features::MetricNormalization::per_pair_max;
      } else {
        throw ConfigError("metric.normalization must be 'none' or 'per_pair_max'");
      }
    }
  }
  if (j.contains("sinkhorn")) {
    const auto& sk = j.at("sinkhorn");
    if (sk.contains("epsilon_factor")) c.sinkhorn.epsilon_factor = sk.at("epsilon_factor").get<double>();
    if (sk.contains("epsilon_abs")) {
      const double e = sk.at("epsilon_abs").get<double>();
      if (e > 0.0) c.sinkhorn.epsilon_abs = e;
    }
    if (sk.contains("max_iter")) c.sinkhorn.max_iter = sk.at("max_iter").get<int>();
    if (sk.contains("tol")) c.sinkhorn.tol = sk.at("tol").get<double>();
    if (sk.contains("epsilon_scaling")) c.sinkhorn.epsilon_scaling = sk.at("epsilon_scaling").get<bool>();
  }
  if (j.contains("truncation")) {
    const auto& t = j.at("truncation");
    if (t.contains("mass_coverage")) c.truncation.mass_coverage = t.at("mass_coverage").get<double>();
    if (t.contains("max_support")) c.truncation.max_support = t.at("max_support").get<std::size_t>();
  }
  get("family_filter", c.family_filter);
  if (j.contains("exclude_flags")) {
    c.exclude_flags = j.at("exclude_flags").get<std::vector<std::string>>();
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (g.contains("lat_min")) c.grid.spec.lat_min = g.at("lat_min").get<double>();
    if (g.contains("lat_max")) c.grid.spec.lat_max = g.at("lat_max").get<double>();
    if (g.contains("lon_min")) c.grid.spec.lon_min = g.at("lon_min").get<double>();
    if (g.contains("lon_max")) c.grid.spec.lon_max = g.at("lon_max").get<double>();
    if (g.contains("step")) c.grid.spec.step = g.at("step").get<double>();
    if (g.contains("refine")) c.grid.refine = g.at("refine").get<bool>();
  }
  get("homeland_draws", c.homeland_draws);
  get("permutations", c.permutations);
  get("seed", c.seed);
  get("threads", c.threads);
  if (j.contains("ward_mode")) {
    const auto mode = j.at("ward_mode").get<std::string>();
    if (mode == "squared") c.ward_mode = cluster::WardMode::squared;
    else if (mode == "direct") c.ward_mode = cluster::WardMode::direct;
    else throw ConfigError("ward_mode must be 'squared' or 'direct'");
  }
}

}  // namespace

std::string PipelineConfig::canonical_json() const { return config_to_json(*this).dump(2); }

std::string PipelineConfig::config_hash() const {
  const std::string text = canonical_json();
  return hash_hex(fnv1a(kFnvOffset, text.data(), text.size()));
}

PipelineConfig load_config(const std::optional<fs::path>& config_file) {
  PipelineConfig c;
  if (config_file) {
    if (!fs::exists(*config_file)) {
      throw ConfigError("config file " + config_file->string() + " does not exist");
    }
    json j;
    try {
      j = read_json_file(*config_file);
    } catch (const std::exception& e) {
      throw ConfigError("cannot parse config " + config_file->string() + ": " + e.what());
    }
    try {
      config_from_json(j, c);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("bad config " + config_file->string() + ": " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Stage manifests / caching
// ---------------------------------------------------------------------------

namespace {

struct StageIO {
  std::map<std::string, std::string> inputs;  // path -> hash hex
  std::vector<std::string> outputs;
};

void add_input(StageIO& io, const fs::path& p) { io.inputs[p.string()] = hash_hex(hash_file(p)); }

bool cache_hit(const PipelineConfig& config, const std::string& stage, const StageIO& io) {
  const fs::path manifest_path = config.out_dir / (stage + ".manifest.json");
  if (!fs::exists(manifest_path)) return false;
  json j;
  try {
    j = read_json_file(manifest_path);
  } catch (const std::exception&) {
    return false;
  }
  if (!j.contains("config_hash") || j.at("config_hash") != config.config_hash()) return false;
  if (!j.contains("inputs") || !j.contains("outputs")) return false;
  json inputs = json::object();
  for (const auto& [k, v] : io.inputs) inputs[k] = v;
  if (j.at("inputs") != inputs) return false;
  for (const auto& out : j.at("outputs")) {
    if (!fs::exists(fs::path(out.get<std::string>()))) return false;
  }
  return true;
}

void write_stage_manifest(const PipelineConfig& config, const std::string& stage,
                          const StageIO& io, double elapsed_ms) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = stage;
  j["config_hash"] = config.config_hash();
  json inputs = json::object();
  for (const auto& [k, v] : io.inputs) inputs[k] = v;
  j["inputs"] = inputs;
  j["outputs"] = io.outputs;
  j["versions"] = {{"phonodist", std::string(kVersion)}};
  j["timings_ms"] = elapsed_ms;
  write_json_file(config.out_dir / (stage + ".manifest.json"), j);
}

std::vector<corpus::LanguageRecord> load_manifest_checked(const PipelineConfig& config) {
  if (!fs::exists(config.manifest)) {
    throw ConfigError("manifest " + config.manifest.string() + " does not exist");
  }
  std::vector<std::string> warnings;
  auto records = corpus::load_manifest(config.manifest, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return records;
}

features::FeatureTable load_table_checked(const PipelineConfig& config) {
  if (!fs::exists(config.feature_table)) {
    throw ConfigError("feature table " + config.feature_table.string() + " does not exist");
  }
  return features::FeatureTable::load(config.feature_table);
}

corpus::Segmenter segmenter_from_table(const features::FeatureTable& table) {
  return corpus::Segmenter(table.phonemes(), table.vowel_phonemes());
}

features::GroundMetricSpec resolve_metric(const PipelineConfig& config) {
  features::GroundMetricSpec spec = config.metric;
  if (spec.variant == features::MetricVariant::feature_edit_weighted) {
    if (config.weights_file.empty()) {
      throw ConfigError("metric variant feature_edit_weighted requires metric.weights_file");
    }
    spec.weights = features::load_weight_file(config.weights_file);
  }
  return spec;
}

bool is_excluded(const corpus::LanguageRecord& rec, const PipelineConfig& config) {
  for (const auto& flag : config.exclude_flags) {
    if (rec.excluded_flags.count(flag)) return true;
  }
  return false;
}

fs::path stream_path(const PipelineConfig& config, const std::string& id) {
  return config.out_dir / "streams" / (id + ".tokens.txt");
}

fs::path blocks_path(const PipelineConfig& config, const std::string& id, int r) {
  return config.out_dir / "blocks" / (id + ".r" + std::to_string(r) + ".tsv");
}

}  // namespace

void write_stream_file(const fs::path& path, const corpus::PhonemeStream& stream,
                       const std::string& config_hash) {
  std::ostringstream os;
  os << "# config " << config_hash << "\n";
  for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
    if (i) os << ' ';
    os << stream.tokens[i];
  }
  os << "\n";
  write_text_file(path, os.str());
}

corpus::PhonemeStream read_stream_file(const fs::path& path, const std::string& language_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open stream file " + path.string());
  std::vector<corpus::PhonemeToken> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
  }
  return corpus::PhonemeStream::build(language_id, std::move(tokens));
}

void write_distance_matrix_csv(const fs::path& path, const transport::DistanceMatrix& matrix,
                               const std::string& config_hash) {
  std::ostringstream os;
  os << "# config " << config_hash << "\n";
  for (const auto& label : matrix.labels) os << ',' << csv::escape(label);
  os << "\n";
  for (std::size_t i = 0; i < matrix.labels.size(); ++i) {
    os << csv::escape(matrix.labels[i]);
    for (std::size_t j = 0; j < matrix.labels.size(); ++j) {
      os << ',' << format_double(matrix.values(i, j));
    }
    os << "\n";
  }
  write_text_file(path, os.str());
}

transport::DistanceMatrix read_distance_matrix_csv(const fs::path& path) {
  const auto rows = csv::read_rows(path, ',', true);
  if (rows.size() < 2) throw std::runtime_error("distance matrix " + path.string() + " is empty");
  transport::DistanceMatrix m;
  const auto& header = rows[0].fields;
  if (header.size() < 2 || !header[0].empty()) {
    throw std::runtime_error("distance matrix " + path.string() + ": bad header");
  }
  m.labels.assign(header.begin() + 1, header.end());
  const std::size_t n = m.labels.size();
  if (rows.size() != n + 1) {
    throw std::runtime_error("distance matrix " + path.string() + ": row count mismatch");
  }
  m.values = Matrix(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = rows[i + 1].fields;
    if (f.size() != n + 1 || f[0] != m.labels[i]) {
      throw std::runtime_error("distance matrix " + path.string() + ": bad row " +
                               std::to_string(i + 1));
    }
    for (std::size_t j = 0; j < n; ++j) m.values(i, j) = std::stod(f[j + 1]);
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// normalize
// ---------------------------------------------------------------------------

int cmd_normalize(const PipelineConfig& config) {
  StageTimer timer;
  const auto records = load_manifest_checked(config);
  if (records.empty()) throw ConfigError("manifest has no languages");
  const auto table = load_table_checked(config);
  const auto segmenter = segmenter_from_table(table);

  StageIO io;
  add_input(io, config.manifest);
  add_input(io, config.feature_table);
  std::vector<const corpus::LanguageRecord*> present;
  std::vector<Failure> failures;
  for (const auto& rec : records) {
    const fs::path src = config.corpus_dir / (rec.id + ".txt");
    if (!fs::exists(src)) {
      failures.push_back({rec.id, "corpus file " + src.string() + " does not exist"});
      continue;
    }
    add_input(io, src);
    present.push_back(&rec);
  }
  for (const auto* rec : present) {
    io.outputs.push_back(stream_path(config, rec->id).string());
    io.outputs.push_back((config.out_dir / "streams" / (rec->id + ".stats.json")).string());
  }
  io.outputs.push_back((config.out_dir / "normalize.summary.json").string());

  if (failures.empty() && cache_hit(config, "normalize", io)) {
    std::cout << "normalize: cache hit\n";
    return 0;
  }

  const std::string chash = config.config_hash();
  std::vector<Failure> norm_failures(present.size());
  std::vector<json> stats_rows(present.size());
  parallel_for(present.size(), config.threads, [&](std::size_t k) {
    const auto& rec = *present[k];
    try {
      const std::string raw = read_file(config.corpus_dir / (rec.id + ".txt"));
      corpus::NormalizationStats stats;
      const auto stream =
          corpus::normalize_stream(raw, config.normalization, segmenter, rec.id, &stats);
      write_stream_file(stream_path(config, rec.id), stream, chash);
      json sj;
      sj["schema_version"] = kSchemaVersion;
      sj["config_hash"] = chash;
      sj["language"] = rec.id;
      sj["N"] = stream.size();
      sj["L"] = stream.inventory_size();
      sj["words"] = stats.words;
      sj["stripped_suprasegmentals"] = stats.stripped_suprasegmentals;
      sj["stripped_length_marks"] = stats.stripped_length_marks;
      sj["stripped_unknown_diacritics"] = stats.stripped_unknown_diacritics;
      sj["stripped_custom"] = stats.stripped_custom;
      sj["doubled_consonants"] = stats.doubled_consonants;
      stats_rows[k] = std::move(sj);
    } catch (const std::exception& e) {
      norm_failures[k] = {rec.id, e.what()};
    }
  });
  json ok = json::array();
  for (std::size_t k = 0; k < present.size(); ++k) {
    if (!norm_failures[k].id.empty()) {
      failures.push_back(norm_failures[k]);
      continue;
    }
    write_json_file(config.out_dir / "streams" / (present[k]->id + ".stats.json"), stats_rows[k]);
    ok.push_back(present[k]->id);
  }

  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["config_hash"] = chash;
  summary["ok"] = ok;
  summary["failures"] = failures_json(failures);
  write_json_file(config.out_dir / "normalize.summary.json", summary);

  if (failures.empty()) write_stage_manifest(config, "normalize", io, timer.elapsed_ms());
  for (const auto& f : failures) {
    std::cerr << "normalize: " << f.id << ": " << f.error << "\n";
  }
  return failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

int cmd_validate(const PipelineConfig& config) {
  StageTimer timer;
  if (config.lexicon_dir.empty() || config.reference_lexicon_dir.empty()) {
    throw ConfigError("validate needs lexicon_dir and reference_lexicon_dir in the config");
  }
  if (!fs::exists(config.lexicon_dir) || !fs::exists(config.reference_lexicon_dir)) {
    throw ConfigError("lexicon directories do not exist");
  }
  const auto records = load_manifest_checked(config);
  const auto table = load_table_checked(config);
  const auto segmenter = segmenter_from_table(table);
  const std::string chash = config.config_hash();

  StageIO io;
  add_input(io, config.manifest);
  add_input(io, config.feature_table);
  std::vector<Failure> failures;
  json ok = json::array();
  std::size_t n_checked = 0;
  for (const auto& rec : records) {
    const fs::path ours = config.lexicon_dir / (rec.id + ".tsv");
    const fs::path ref = config.reference_lexicon_dir / (rec.id + ".tsv");
    if (!fs::exists(ours) || !fs::exists(ref)) continue;
    ++n_checked;
    add_input(io, ours);
    add_input(io, ref);
    try {
      const auto corpus_words = corpus::load_lexicon(ours, config.normalization, segmenter);
      const auto reference = corpus::load_lexicon(ref, config.normalization, segmenter);
      const auto report = corpus::validate_against_lexicon(corpus_words, reference);
      json rj;
      rj["schema_version"] = kSchemaVersion;
      rj["config_hash"] = chash;
      rj["language"] = rec.id;
      rj["n_compared"] = report.n_compared;
      rj["match_fraction"] = report.match_fraction;
      json hist = json::object();
      for (const auto& [d, cnt] : report.distance_histogram) hist[std::to_string(d)] = cnt;
      rj["distance_histogram"] = hist;
      rj["op_breakdown"] = {{"substitution", report.sub_fraction},
                            {"insertion", report.ins_fraction},
                            {"deletion", report.del_fraction}};
      const fs::path out = config.out_dir / "validation" / (rec.id + ".report.json");
      write_json_file(out, rj);
      io.outputs.push_back(out.string());
      ok.push_back(rec.id);
    } catch (const std::exception& e) {
      failures.push_back({rec.id, e.what()});
    }
  }
  if (n_checked == 0) {
    throw ConfigError("no languages have both a corpus lexicon and a reference lexicon");
  }
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["config_hash"] = chash;
  summary["ok"] = ok;
  summary["failures"] = failures_json(failures);
  write_json_file(config.out_dir / "validate.summary.json", summary);
  io.outputs.push_back((config.out_dir / "validate.summary.json").string());
  if (failures.empty()) write_stage_manifest(config, "validate", io, timer.elapsed_ms());
  return failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// entropy
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> cached_language_ids(const PipelineConfig& config,
                                             const std::vector<corpus::LanguageRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& rec : records) {
    if (fs::exists(stream_path(config, rec.id))) ids.push_back(rec.id);
  }
  if (ids.empty()) {
    throw ConfigError("no cached streams under " + (config.out_dir / "streams").string() +
                      "; run 'phonodist normalize' first");
  }
  return ids;
}

}  // namespace

int cmd_entropy(const PipelineConfig& config) {
  StageTimer timer;
  const auto records = load_manifest_checked(config);
  const auto table = load_table_checked(config);
  const auto ids = cached_language_ids(config, records);
  const std::string chash = config.config_hash();

  StageIO io;
  add_input(io, config.manifest);
  add_input(io, config.feature_table);
  for (const auto& id : ids) add_input(io, stream_path(config, id));
  for (const auto& id : ids) {
    io.outputs.push_back((config.out_dir / "entropy" / (id + ".json")).string());
  }
  io.outputs.push_back((config.out_dir / "entropy.summary.json").string());
  if (cache_hit(config, "entropy", io)) {
    std::cout << "entropy: cache hit\n";
    return 0;
  }

  const blocks::CoarseKind kinds[4] = {blocks::CoarseKind::cons_vow, blocks::CoarseKind::voicing,
                                       blocks::CoarseKind::openness, blocks::CoarseKind::backness};
  std::vector<Failure> failures(ids.size());
  std::vector<json> outputs(ids.size());
  parallel_for(ids.size(), config.threads, [&](std::size_t k) {
    const std::string& id = ids[k];
    try {
      const auto stream = read_stream_file(stream_path(config, id), id);
      const auto n = stream.size();
      const auto l = stream.inventory_size();
      const int rmax = blocks::r_max(n, l);
      int r_upper = config.entropy_cfg.r_upper > 0 ? config.entropy_cfg.r_upper
                                                   : std::min(std::max(rmax + 1, 3), 5);
      r_upper = std::min<int>(r_upper, static_cast<int>(n));
      if (r_upper < 2) throw std::runtime_error("stream too short for gain estimation");

      const auto curve = entropy::block_entropy_curve(stream, r_upper, config.estimator,
                                                      config.entropy_cfg.alphabet_cap_factor);
      const auto gains = entropy::predictability_gain(curve);
      const auto stderrs = entropy::gain_jackknife_stderr(
          stream, r_upper, config.estimator, config.entropy_cfg.jackknife_blocks,
          config.entropy_cfg.alphabet_cap_factor);
      const double tolerance =
          entropy::default_order_tolerance(stderrs, config.entropy_cfg.tolerance_floor);

      json coarse_json = json::object();
      std::vector<entropy::GainSequence> coarse_gains;
      for (const auto kind : kinds) {
        const auto scheme = blocks::make_coarse_scheme(kind, table, stream.inventory);
        json cj;
        try {
          const auto cstream = blocks::coarse_grain(stream, scheme);
          const auto cl = cstream.inventory_size();
          if (cl < 2) throw std::runtime_error("coarse alphabet is degenerate");
          const int crmax = blocks::r_max(cstream.size(), cl);
          int cr_upper = config.entropy_cfg.coarse_r_upper > 0 ? config.entropy_cfg.coarse_r_upper
                                                               : std::min(crmax, 10);
          cr_upper = std::max(cr_upper, 3);
          cr_upper = std::min<int>(cr_upper, static_cast<int>(cstream.size()));
          const auto ccurve = entropy::block_entropy_curve(
              cstream, cr_upper, config.estimator, config.entropy_cfg.alphabet_cap_factor);
          const auto cgains = entropy::predictability_gain(ccurve);
          coarse_gains.push_back(cgains);
          cj["L"] = cl;
          cj["H"] = ccurve.values;
          cj["G"] = cgains.values;
        } catch (const std::exception& e) {
          cj["error"] = e.what();
        }
        coarse_json[std::string(blocks::to_string(kind))] = cj;
      }

      const auto order = entropy::estimate_order(gains, coarse_gains, tolerance);

      json oj;
      oj["schema_version"] = kSchemaVersion;
      oj["config_hash"] = chash;
      oj["language"] = id;
      oj["estimator"] = std::string(entropy::to_string(config.estimator));
      oj["N"] = n;
      oj["L"] = l;
      oj["r_max"] = rmax;
      oj["H"] = curve.values;
      if (!curve.stderrs.empty()) oj["H_stderr"] = curve.stderrs;
      oj["G"] = gains.values;
      oj["G_stderr"] = stderrs;
      oj["tolerance"] = tolerance;
      oj["order"] = order.m;
      oj["censored"] = order.censored;
      oj["coarse_confirms"] = order.coarse_confirms;
      oj["coarse"] = coarse_json;
      outputs[k] = std::move(oj);
    } catch (const std::exception& e) {
      failures[k] = {id, e.what()};
    }
  });

  std::vector<Failure> failed;
  json ok = json::array();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!failures[k].id.empty()) {
      failed.push_back(failures[k]);
      continue;
    }
    write_json_file(config.out_dir / "entropy" / (ids[k] + ".json"), outputs[k]);
    ok.push_back(ids[k]);
  }
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["config_hash"] = chash;
  summary["ok"] = ok;
  summary["failures"] = failures_json(failed);
  write_json_file(config.out_dir / "entropy.summary.json", summary);
  if (failed.empty()) write_stage_manifest(config, "entropy", io, timer.elapsed_ms());
  for (const auto& f : failed) std::cerr << "entropy: " << f.id << ": " << f.error << "\n";
  return failed.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// distmat
// ---------------------------------------------------------------------------

int cmd_distmat(const PipelineConfig& config) {
  StageTimer timer;
  if (config.r != 3) {
    throw ConfigError("the distance pipeline is defined on 3-phones; config r must be 3");
  }
  const auto records = load_manifest_checked(config);
  const auto table = load_table_checked(config);
  const auto metric = resolve_metric(config);
  const auto ids = cached_language_ids(config, records);
  const std::string chash = config.config_hash();

  StageIO io;
  add_input(io, config.manifest);
  add_input(io, config.feature_table);
  for (const auto& id : ids) add_input(io, stream_path(config, id));
  io.outputs.push_back((config.out_dir / "distmat" / "matrix.csv").string());
  io.outputs.push_back((config.out_dir / "distmat" / "matrix.meta.json").string());
  io.outputs.push_back((config.out_dir / "distmat.summary.json").string());
  // Block caches are also outputs, but only for languages that pass checks.

  std::vector<Failure> failures;
  std::vector<std::string> usable;
  std::vector<blocks::BlockDistribution> dists;
  for (const auto& id : ids) {
    try {
      const auto stream = read_stream_file(stream_path(config, id), id);
      if (stream.size() < 3) throw std::runtime_error("stream shorter than one triphone");
      // Every inventory token must be embeddable.
      for (const auto& tok : stream.inventory) {
        if (!table.contains(tok)) {
          throw std::runtime_error("phoneme '" + tok + "' missing from the feature table");
        }
      }
      auto dist = blocks::count_blocks(stream, 3);
      const fs::path bp = blocks_path(config, id, 3);
      fs::create_directories(bp.parent_path());
      blocks::write_block_cache(dist, bp, "config " + chash);
      io.outputs.push_back(bp.string());
      usable.push_back(id);
      dists.push_back(std::move(dist));
    } catch (const std::exception& e) {
      failures.push_back({id, e.what()});
    }
  }
  if (usable.size() < 2) {
    throw ConfigError("distmat needs at least 2 usable languages (" +
                      std::to_string(usable.size()) + " available)");
  }
  if (failures.empty() && cache_hit(config, "distmat", io)) {
    std::cout << "distmat: cache hit\n";
    return 0;
  }

  std::vector<const blocks::BlockDistribution*> dist_ptrs;
  for (const auto& d : dists) dist_ptrs.push_back(&d);
  std::vector<transport::PairDiagnostics> diags;
  const auto matrix = transport::distance_matrix(usable, dist_ptrs, table, metric, config.sinkhorn,
                                                 config.truncation, config.threads, &diags);
  write_distance_matrix_csv(config.out_dir / "distmat" / "matrix.csv", matrix, chash);

  json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["config_hash"] = chash;
  meta["variant"] = matrix.variant;
  meta["epsilon_factor"] = config.sinkhorn.epsilon_factor;
  meta["epsilon_abs"] = config.sinkhorn.epsilon_abs ? *config.sinkhorn.epsilon_abs : 0.0;
  meta["mass_coverage"] = config.truncation.mass_coverage;
  meta["max_support"] = config.truncation.max_support;
  meta["labels"] = usable;
  json pairs = json::array();
  std::size_t k = 0;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    for (std::size_t j = i + 1; j < usable.size(); ++j, ++k) {
      pairs.push_back({{"a", usable[i]},
                       {"b", usable[j]},
                       {"support_a", diags[k].support_a},
                       {"support_b", diags[k].support_b},
                       {"iterations", diags[k].sinkhorn.iterations},
                       {"violation", diags[k].sinkhorn.marginal_violation},
                       {"converged", diags[k].sinkhorn.converged},
                       {"epsilon", diags[k].sinkhorn.epsilon}});
    }
  }
  meta["pairs"] = pairs;
  write_json_file(config.out_dir / "distmat" / "matrix.meta.json", meta);

  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["config_hash"] = chash;
  summary["ok"] = usable;
  summary["failures"] = failures_json(failures);
  write_json_file(config.out_dir / "distmat.summary.json", summary);
  if (failures.empty()) write_stage_manifest(config, "distmat", io, timer.elapsed_ms());
  for (const auto& f : failures) std::cerr << "distmat: " << f.id << ": " << f.error << "\n";
  return failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

int cmd_cluster(const PipelineConfig& config) {
  StageTimer timer;
  const fs::path matrix_path = config.out_dir / "distmat" / "matrix.csv";
  if (!fs::exists(matrix_path)) {
    throw ConfigError("distance matrix " + matrix_path.string() +
                      " does not exist; run 'phonodist distmat' first");
  }
  const auto records = load_manifest_checked(config);
  const auto matrix = read_distance_matrix_csv(matrix_path);
  {
    std::set<std::string> known;
    for (const auto& rec : records) known.insert(rec.id);
    for (const auto& label : matrix.labels) {
      if (!known.count(label)) {
        throw ConfigError("matrix label '" + label + "' is not in the manifest");
      }
    }
  }
  const std::string chash = config.config_hash();

  StageIO io;
  add_input(io, matrix_path);
  add_input(io, config.manifest);
  io.outputs = {(config.out_dir / "cluster" / "tree.newick").string(),
                (config.out_dir / "cluster" / "leaf_order.csv").string(),
                (config.out_dir / "cluster" / "merges.csv").string()};
  if (cache_hit(config, "cluster", io)) {
    std::cout << "cluster: cache hit\n";
    return 0;
  }

  const auto tree = cluster::ward_linkage(matrix, config.ward_mode);
  const auto order = cluster::leaf_order(tree);

  write_text_file(config.out_dir / "cluster" / "tree.newick",
                  "[config " + chash + "]" + cluster::export_newick(tree) + "\n");
  {
    std::ostringstream os;
    os << "# config " << chash << "\nlanguage\n";
    for (const auto& label : order) os << csv::escape(label) << "\n";
    write_text_file(config.out_dir / "cluster" / "leaf_order.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "# config " << chash << "\na,b,height,size\n";
    for (const auto& m : tree.merges) {
      os << m.a << ',' << m.b << ',' << format_double(m.height) << ',' << m.size << "\n";
    }
    write_text_file(config.out_dir / "cluster" / "merges.csv", os.str());
  }
  write_stage_manifest(config, "cluster", io, timer.elapsed_ms());
  return 0;
}

// ---------------------------------------------------------------------------
// geo
// ---------------------------------------------------------------------------

namespace {

struct ScopeData {
  std::string scope;  // "all" or "family"
  std::vector<std::string> ids;
  std::vector<geostat::GeoPoint> points;
  Matrix w;      // phonological distances
  Matrix d_geo;  // geodesic distances
};

ScopeData build_scope(const std::string& scope, const std::vector<std::string>& ids,
                      const std::map<std::string, const corpus::LanguageRecord*>& by_id,
                      const transport::DistanceMatrix& matrix) {
  ScopeData s;
  s.scope = scope;
  std::map<std::string, std::size_t> matrix_index;
  for (std::size_t i = 0; i < matrix.labels.size(); ++i) matrix_index[matrix.labels[i]] = i;
  s.ids = ids;
  const std::size_t n = ids.size();
  s.points.reserve(n);
  s.w = Matrix(n, n, 0.0);
  s.d_geo = Matrix(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = by_id.at(ids[i]);
    s.points.push_back(geostat::normalized({rec->latitude, rec->longitude}));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = matrix.values(matrix_index.at(ids[i]), matrix_index.at(ids[j]));
      const double d = geostat::geodesic_km(s.points[i], s.points[j]);
      s.w(i, j) = s.w(j, i) = w;
      s.d_geo(i, j) = s.d_geo(j, i) = d;
    }
  }
  return s;
}

}  // namespace

int cmd_geo(const PipelineConfig& config) {
  StageTimer timer;
  const fs::path matrix_path = config.out_dir / "distmat" / "matrix.csv";
  if (!fs::exists(matrix_path)) {
    throw ConfigError("distance matrix " + matrix_path.string() +
                      " does not exist; run 'phonodist distmat' first");
  }
  const auto records = load_manifest_checked(config);
  const auto matrix = read_distance_matrix_csv(matrix_path);
  const std::string chash = config.config_hash();

  std::map<std::string, const corpus::LanguageRecord*> by_id;
  for (const auto& rec : records) by_id[rec.id] = &rec;

  std::vector<std::string> all_ids, family_ids;
  for (const auto& label : matrix.labels) {
    const auto it = by_id.find(label);
    if (it == by_id.end()) {
      throw ConfigError("matrix label '" + label + "' is not in the manifest");
    }
    if (is_excluded(*it->second, config)) continue;
    all_ids.push_back(label);
    if (config.family_filter.empty() || it->second->family == config.family_filter) {
      family_ids.push_back(label);
    }
  }

  StageIO io;
  add_input(io, matrix_path);
  add_input(io, config.manifest);
  io.outputs = {(config.out_dir / "geo" / "scatter_all.csv").string(),
                (config.out_dir / "geo" / "scatter_family.csv").string(),
                (config.out_dir / "geo" / "fit.json").string(),
                (config.out_dir / "geo" / "correlation_all.json").string(),
                (config.out_dir / "geo" / "correlation_family.json").string()};
  if (cache_hit(config, "geo", io)) {
    std::cout << "geo: cache hit\n";
    return 0;
  }

  std::vector<Failure> failures;
  json fits;
  fits["schema_version"] = kSchemaVersion;
  fits["config_hash"] = chash;

  const ScopeData scopes[2] = {build_scope("all", all_ids, by_id, matrix),
                               build_scope("family", family_ids, by_id, matrix)};
  for (const auto& scope : scopes) {
    const std::size_t n = scope.ids.size();
    // Scatter data (all unordered pairs).
    {
      std::ostringstream os;
      os << "# config " << chash << "\nid_a,id_b,d_geo_km,w\n";
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          os << csv::escape(scope.ids[i]) << ',' << csv::escape(scope.ids[j]) << ','
             << format_double(scope.d_geo(i, j)) << ',' << format_double(scope.w(i, j)) << "\n";
        }
      }
      write_text_file(config.out_dir / "geo" / ("scatter_" + scope.scope + ".csv"), os.str());
    }
    // Fit.
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(scope.d_geo(i, j), scope.w(i, j));
    }
    try {
      if (pairs.size() < 3) throw std::runtime_error("fewer than 3 usable pairs");
      const auto fit = geostat::log_fit(pairs);
      fits[scope.scope] = {{"alpha", fit.alpha},
                           {"beta", fit.beta},
                           {"residual_variance", fit.residual_variance},
                           {"n_used", fit.n_used},
                           {"n_excluded", fit.n_excluded},
                           {"n_languages", n}};
    } catch (const std::exception& e) {
      failures.push_back({"fit:" + scope.scope, e.what()});
      fits[scope.scope] = {{"error", e.what()}};
    }
    // Correlation with permutation test.
    json cj;
    cj["schema_version"] = kSchemaVersion;
    cj["config_hash"] = chash;
    cj["scope"] = scope.scope;
    cj["n_languages"] = n;
    try {
      const std::uint64_t seed =
          rng::derive_seed(config.seed, scope.scope == "all" ? 1001 : 1002);
      const auto corr = geostat::matrix_distance_correlation(scope.d_geo, scope.w,
                                                             config.permutations, seed);
      cj["r_d"] = corr.r_d;
      cj["p_value"] = corr.p_value;
      cj["n_permutations"] = corr.n_permutations;
      cj["seed"] = corr.seed;
      cj["degenerate"] = corr.degenerate;
    } catch (const std::exception& e) {
      failures.push_back({"correlation:" + scope.scope, e.what()});
      cj["error"] = e.what();
    }
    write_json_file(config.out_dir / "geo" / ("correlation_" + scope.scope + ".json"), cj);
  }
  write_json_file(config.out_dir / "geo" / "fit.json", fits);
  if (failures.empty()) write_stage_manifest(config, "geo", io, timer.elapsed_ms());
  for (const auto& f : failures) std::cerr << "geo: " << f.id << ": " << f.error << "\n";
  return failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// homeland
// ---------------------------------------------------------------------------

int cmd_homeland(const PipelineConfig& config) {
  StageTimer timer;
  const fs::path fit_path = config.out_dir / "geo" / "fit.json";
  if (!fs::exists(fit_path)) {
    throw ConfigError("fit file " + fit_path.string() + " does not exist; run 'phonodist geo' first");
  }
  const auto records = load_manifest_checked(config);
  const auto table = load_table_checked(config);
  const auto metric = resolve_metric(config);
  const std::string chash = config.config_hash();
  if (config.homeland_draws < 100) {
    throw ConfigError("homeland_draws must be at least 100 (paper setting: 2000)");
  }

  // Included languages: family filter plus exclusion flags; need block caches.
  std::vector<const corpus::LanguageRecord*> included;
  for (const auto& rec : records) {
    if (is_excluded(rec, config)) continue;
    if (!config.family_filter.empty() && rec.family != config.family_filter) continue;
    if (!fs::exists(blocks_path(config, rec.id, 3))) continue;
    included.push_back(&rec);
  }
  if (included.size() < 3) {
    throw ConfigError("homeland inference needs at least 3 included languages with block caches "
                      "(found " + std::to_string(included.size()) + "); run 'phonodist distmat' first");
  }

  StageIO io;
  add_input(io, config.manifest);
  add_input(io, config.feature_table);
  add_input(io, fit_path);
  for (const auto* rec : included) add_input(io, blocks_path(config, rec->id, 3));
  io.outputs = {(config.out_dir / "homeland" / "chi2_surface.csv").string(),
                (config.out_dir / "homeland" / "summary.json").string()};
  if (cache_hit(config, "homeland", io)) {
    std::cout << "homeland: cache hit\n";
    return 0;
  }

  const json fits = read_json_file(fit_path);
  if (!fits.contains("family") || fits.at("family").contains("error")) {
    throw ConfigError("fit.json has no usable family-scope fit");
  }
  geostat::LogFit fit;
  fit.alpha = fits.at("family").at("alpha").get<double>();
  fit.beta = fits.at("family").at("beta").get<double>();

  std::vector<blocks::BlockDistribution> dists;
  dists.reserve(included.size());
  for (const auto* rec : included) {
    dists.push_back(blocks::read_block_cache(blocks_path(config, rec->id, 3)));
  }
  std::vector<const blocks::BlockDistribution*> dist_ptrs;
  for (const auto& d : dists) dist_ptrs.push_back(&d);

  const auto p_av = transport::average_distribution(dist_ptrs);
  const auto d_p = geostat::phono_to_average(dist_ptrs, p_av, table, metric, config.sinkhorn,
                                             config.truncation, config.threads);
  std::vector<double> d_g(d_p.size());
  std::vector<std::string> clamped_ids;
  std::vector<geostat::GeoPoint> sites;
  for (std::size_t i = 0; i < included.size(); ++i) {
    bool clamped = false;
    d_g[i] = geostat::invert_fit(fit, d_p[i], &clamped);
    if (clamped) clamped_ids.push_back(included[i]->id);
    sites.push_back(geostat::normalized({included[i]->latitude, included[i]->longitude}));
  }

  const auto surface =
      geostat::chi2_surface(sites, d_g, config.grid.spec, {}, config.threads);
  const geostat::GeoPoint node = geostat::argmin_node(surface);
  const geostat::GeoPoint r_star =
      config.grid.refine
          ? geostat::refine_homeland(sites, d_g, node, config.grid.spec.step, {})
          : node;
  const std::uint64_t seed = rng::derive_seed(config.seed, 2001);
  const double radius = geostat::homeland_uncertainty(sites, d_g, config.grid.spec,
                                                      config.homeland_draws, seed, r_star,
                                                      config.threads, nullptr);

  {
    std::ostringstream os;
    os << "# config " << chash << "\nlat,lon,chi2\n";
    for (std::size_t i = 0; i < surface.n_lat; ++i) {
      for (std::size_t j = 0; j < surface.n_lon; ++j) {
        const auto p = surface.node(i, j);
        os << format_double(p.lat) << ',' << format_double(p.lon) << ','
           << format_double(surface.at(i, j)) << "\n";
      }
    }
    write_text_file(config.out_dir / "homeland" / "chi2_surface.csv", os.str());
  }
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["config_hash"] = chash;
  summary["family"] = config.family_filter.empty() ? "all" : config.family_filter;
  summary["n_languages"] = included.size();
  json langs = json::array();
  for (std::size_t i = 0; i < included.size(); ++i) {
    langs.push_back({{"id", included[i]->id},
                     {"d_p", d_p[i]},
                     {"d_g_km", d_g[i]}});
  }
  summary["languages"] = langs;
  summary["fit"] = {{"alpha", fit.alpha}, {"beta", fit.beta}};
  summary["grid_node"] = {{"lat", node.lat}, {"lon", node.lon}};
  summary["refined"] = config.grid.refine;
  summary["r_star"] = {{"lat", r_star.lat}, {"lon", r_star.lon}};
  summary["radius_km"] = radius;
  summary["K"] = config.homeland_draws;
  summary["seed"] = seed;
  summary["clamped"] = clamped_ids;
  write_json_file(config.out_dir / "homeland" / "summary.json", summary);
  write_stage_manifest(config, "homeland", io, timer.elapsed_ms());
  return 0;
}

int cmd_all(const PipelineConfig& config) {
  int worst = 0;
  worst = std::max(worst, cmd_normalize(config));
  worst = std::max(worst, cmd_entropy(config));
  worst = std::max(worst, cmd_distmat(config));
  worst = std::max(worst, cmd_cluster(config));
  worst = std::max(worst, cmd_geo(config));
  worst = std::max(worst, cmd_homeland(config));
  return worst;
}

}  // namespace phonodist::pipeline
