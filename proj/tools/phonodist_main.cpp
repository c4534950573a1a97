// phonodist — phonological distance pipeline CLI.
//
// Subcommands mirror the pipeline stages:
//   normalize  tokenize and normalize IPA corpora
//   validate   compare word transcriptions against a reference lexicon
//   entropy    block entropies, predictability gains, Markov order
//   distmat    pairwise Wasserstein distance matrix
//   cluster    Ward clustering (newick + leaf order + merges)
//   geo        phonology/geography scatter, log fit, distance correlation
//   homeland   chi^2 homeland surface with Dirichlet uncertainty
//   all        run the full pipeline in order

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "phonodist/pipeline.hpp"

int main(int argc, char** argv) {
  using phonodist::pipeline::PipelineConfig;

  CLI::App app{"phonological distances, Markov analysis and homeland inference"};
  app.require_subcommand(1);

  std::optional<std::string> config_file;
  app.add_option("-c,--config", config_file, "JSON config file");

  // Flag overrides applied on top of the config file.
  std::optional<std::string> corpus_dir, manifest, feature_table, out_dir, family, estimator,
      metric_variant, ward_mode, weights_file, lexicon_dir, reference_lexicon_dir;
  std::optional<int> r, permutations, homeland_draws, max_iter;
  std::optional<double> epsilon_factor, mass_coverage, tol;
  std::optional<std::size_t> max_support;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<double> grid_step, lat_min, lat_max, lon_min, lon_max;
  std::optional<bool> refine;

  app.add_option("--corpus-dir", corpus_dir, "directory with <id>.txt IPA files");
  app.add_option("--manifest", manifest, "language manifest CSV");
  app.add_option("--feature-table", feature_table, "articulatory feature CSV");
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--lexicon-dir", lexicon_dir, "word-keyed corpus lexicons (validate)");
  app.add_option("--reference-lexicon-dir", reference_lexicon_dir,
                 "word-keyed reference lexicons (validate)");
  app.add_option("--family", family, "family filter for geo/homeland scopes");
  app.add_option("--estimator", estimator, "entropy estimator: plugin|miller_madow|nsb");
  app.add_option("--metric-variant", metric_variant,
                 "feature_edit_unweighted|feature_edit_weighted|feature_hamming|levenshtein");
  app.add_option("--weights-file", weights_file, "per-feature weights (weighted variant)");
  app.add_option("--ward-mode", ward_mode, "squared|direct");
  app.add_option("--r", r, "block size for the distance pipeline (must be 3)");
  app.add_option("--epsilon-factor", epsilon_factor, "Sinkhorn epsilon as a fraction of mean cost");
  app.add_option("--sinkhorn-max-iter", max_iter, "Sinkhorn iteration cap");
  app.add_option("--sinkhorn-tol", tol, "Sinkhorn marginal tolerance");
  app.add_option("--mass-coverage", mass_coverage, "support truncation mass coverage");
  app.add_option("--max-support", max_support, "support truncation hard cap (0 = unlimited)");
  app.add_option("--permutations", permutations, "permutation-test replicates");
  app.add_option("--K", homeland_draws, "homeland uncertainty weight draws");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", threads, "worker threads (0 = hardware)");
  app.add_option("--grid-step", grid_step, "homeland grid step in degrees");
  app.add_option("--lat-min", lat_min, "grid bounding box");
  app.add_option("--lat-max", lat_max, "grid bounding box");
  app.add_option("--lon-min", lon_min, "grid bounding box");
  app.add_option("--lon-max", lon_max, "grid bounding box");
  app.add_option("--refine", refine, "refine the homeland argmin below grid scale");

  int (*command)(const PipelineConfig&) = nullptr;
  app.add_subcommand("normalize", "normalize IPA corpora into token streams")
      ->callback([&]() { command = phonodist::pipeline::cmd_normalize; });
  app.add_subcommand("validate", "compare transcriptions against a reference lexicon")
      ->callback([&]() { command = phonodist::pipeline::cmd_validate; });
  app.add_subcommand("entropy", "block entropies, gains and Markov order")
      ->callback([&]() { command = phonodist::pipeline::cmd_entropy; });
  app.add_subcommand("distmat", "pairwise Wasserstein distance matrix")
      ->callback([&]() { command = phonodist::pipeline::cmd_distmat; });
  app.add_subcommand("cluster", "Ward clustering of the distance matrix")
      ->callback([&]() { command = phonodist::pipeline::cmd_cluster; });
  app.add_subcommand("geo", "geography correlation and log fit")
      ->callback([&]() { command = phonodist::pipeline::cmd_geo; });
  app.add_subcommand("homeland", "chi^2 homeland inference")
      ->callback([&]() { command = phonodist::pipeline::cmd_homeland; });
  app.add_subcommand("all", "run the full pipeline")
      ->callback([&]() { command = phonodist::pipeline::cmd_all; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    PipelineConfig config = phonodist::pipeline::load_config(
        config_file ? std::optional<std::filesystem::path>(*config_file) : std::nullopt);
    if (corpus_dir) config.corpus_dir = *corpus_dir;
    if (manifest) config.manifest = *manifest;
    if (feature_table) config.feature_table = *feature_table;
    if (out_dir) config.out_dir = *out_dir;
    if (lexicon_dir) config.lexicon_dir = *lexicon_dir;
    if (reference_lexicon_dir) config.reference_lexicon_dir = *reference_lexicon_dir;
    if (family) config.family_filter = *family;
    if (estimator) config.estimator = phonodist::entropy::estimator_from_string(*estimator);
    if (metric_variant) {
      config.metric.variant = phonodist::features::metric_variant_from_string(*metric_variant);
    }
    if (weights_file) config.weights_file = *weights_file;
    if (ward_mode) {
      if (*ward_mode == "squared") config.ward_mode = phonodist::cluster::WardMode::squared;
      else if (*ward_mode == "direct") config.ward_mode = phonodist::cluster::WardMode::direct;
      else throw phonodist::pipeline::ConfigError("--ward-mode must be squared or direct");
    }
    if (r) config.r = *r;
    if (epsilon_factor) config.sinkhorn.epsilon_factor = *epsilon_factor;
    if (max_iter) config.sinkhorn.max_iter = *max_iter;
    if (tol) config.sinkhorn.tol = *tol;
    if (mass_coverage) config.truncation.mass_coverage = *mass_coverage;
    if (max_support) config.truncation.max_support = *max_support;
    if (permutations) config.permutations = *permutations;
    if (homeland_draws) config.homeland_draws = *homeland_draws;
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (grid_step) config.grid.spec.step = *grid_step;
    if (lat_min) config.grid.spec.lat_min = *lat_min;
    if (lat_max) config.grid.spec.lat_max = *lat_max;
    if (lon_min) config.grid.spec.lon_min = *lon_min;
    if (lon_max) config.grid.spec.lon_max = *lon_max;
    if (refine) config.grid.refine = *refine;

    return command(config);
  } catch (const phonodist::pipeline::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
