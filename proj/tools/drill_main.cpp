// SPDX-License-Identifier: Apache-2.0
// Command-line front end: train, eval, ablate, bands, bench, params, synth.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "drill/commands.hpp"
#include "drill/error.hpp"
#include "drill/synthetic.hpp"

namespace fs = std::filesystem;
using namespace drill;

namespace {

// Exit codes, one per error family.
enum Exit : int { ok = 0, failure = 1, config = 2, data = 3, divergence = 4, load = 5 };

int report(const char* kind, const std::exception& e, int code) {
  std::cerr << "drill: " << kind << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language models with pluggable output layers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--config", config_path, "Run config file");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides run.out_dir)");
  auto* seed_opt = app.add_option("--seed", seed, "Single seed (overrides run.seeds)");
  app.add_option("--threads", threads, "Worker threads for matrix products")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train one model per seed");
  auto* ablate = app.add_subcommand("ablate", "Train every ablate.kinds variant for every seed");
  auto* bench = app.add_subcommand("bench", "Time training epochs of bench.kinds");
  auto* params = app.add_subcommand("params", "Parameter counts of the configured model");

  auto* eval = app.add_subcommand("eval", "Perplexity of a checkpoint");
  std::string eval_ckpt, eval_split = "test", eval_losses;
  eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--losses", eval_losses, "Write per-token losses to this CSV");

  auto* bands = app.add_subcommand("bands", "Frequency-band loss comparison of two checkpoints");
  std::string band_base, band_comp, band_split = "test", band_csv;
  bands->add_option("baseline", band_base, "Baseline checkpoint")->required();
  bands->add_option("comparison", band_comp, "Comparison checkpoint")->required();
  bands->add_option("--split", band_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  bands->add_option("--csv", band_csv, "Report path (default <out>/bands.csv)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic Zipfian corpus");
  SyntheticSpec spec;
  Index synth_train = 200000, synth_valid = 20000, synth_test = 20000;
  std::string synth_dir;
  synth->add_option("dir", synth_dir, "Directory for train.txt, valid.txt, test.txt")->required();
  synth->add_option("--vocab", spec.vocab, "Word types")->check(CLI::PositiveNumber);
  synth->add_option("--classes", spec.classes, "Latent classes")->check(CLI::PositiveNumber);
  synth->add_option("--train-tokens", synth_train)->check(CLI::PositiveNumber);
  synth->add_option("--valid-tokens", synth_valid)->check(CLI::PositiveNumber);
  synth->add_option("--test-tokens", synth_test)->check(CLI::PositiveNumber);
  synth->add_option("--corpus-seed", spec.seed, "Seed of the text source");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      write_corpus(generate_corpus(spec, synth_train, synth_valid, synth_test), synth_dir);
      std::cout << "wrote " << synth_dir << '\n';
      return ok;
    }
    if (config_path.empty()) throw ConfigError("--config is required for this command");

    CommandOptions options;
    if (*out_opt) options.out_dir = fs::path(out_dir);
    if (*seed_opt) options.seed = seed;
    options.threads = threads;
    options.progress = &std::cerr;
    const RunConfig cfg = prepare_run(load_run_config(config_path), options);
    validate_paths(cfg);

    if (train->parsed()) {
      for (const SeedResult& r : cmd_train(cfg, options.progress)) {
        std::cout << "seed " << r.seed << " best_val_ppl " << r.best_val_ppl << " test_ppl " << r.test_ppl << '\n';
      }
      std::cout << "wrote " << (cfg.out_dir / "summary.csv").string() << '\n';
    } else if (ablate->parsed()) {
      for (const AblationRow& r : cmd_ablate(cfg, options.progress)) {
        std::cout << r.variant << " params " << r.output_params << " val_ppl " << r.val_ppl << " test_ppl "
                  << r.test_ppl << '\n';
      }
      std::cout << "wrote " << (cfg.out_dir / "ablation.csv").string() << '\n';
    } else if (bench->parsed()) {
      write_bench_table(cmd_bench(cfg, options.progress), std::cout);
    } else if (params->parsed()) {
      const ParamReport r = cmd_params(cfg);
      std::cout << "embedding " << r.embedding << "\nencoder " << r.encoder << "\noutput " << r.output << "\ntotal "
                << r.total << '\n';
    } else if (eval->parsed()) {
      std::optional<fs::path> losses;
      if (!eval_losses.empty()) losses = eval_losses;
      const EvalResult r = cmd_eval(cfg, eval_ckpt, eval_split, losses);
      std::cout << eval_split << " perplexity " << r.perplexity << " over " << r.scored_tokens << " tokens\n";
    } else if (bands->parsed()) {
      const fs::path csv = band_csv.empty() ? cfg.out_dir / "bands.csv" : fs::path(band_csv);
      cmd_bands(cfg, band_base, band_comp, band_split, csv).write_table(std::cout);
    }
    return ok;
  } catch (const ConfigError& e) {
    return report("config error", e, config);
  } catch (const DataError& e) {
    return report("data error", e, data);
  } catch (const DivergenceError& e) {
    return report("diverged", e, divergence);
  } catch (const LoadError& e) {
    return report("checkpoint error", e, load);
  } catch (const std::exception& e) {
    return report("error", e, failure);
  }
}
