// SPDX-License-Identifier: Apache-2.0
#include "drill/commands.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "drill/error.hpp"
#include "drill/model.hpp"
#include "drill/training.hpp"

namespace drill {

namespace {

std::string fmt(Real v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << config_comment(cfg);
  return out;
}

void say(std::ostream* progress, const std::string& line) {
  if (progress != nullptr) *progress << line << std::endl;
}

struct RunRequest {
  OutputConfig output;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  std::string tag;  // label used in progress lines
};

SeedResult train_one(const RunConfig& cfg, const Dataset& data, const RunRequest& req, std::ostream* progress) {
  ModelConfig mc{data.vocab.size(), cfg.encoder, req.output};
  LanguageModel model(mc, req.seed);
  TrainConfig tc = cfg.training;
  tc.seed = req.seed;

  std::filesystem::create_directories(req.dir);
  const std::string suffix = "seed" + std::to_string(req.seed);
  const std::filesystem::path ckpt = req.dir / ("best_" + suffix + ".ckpt");
  TrainOptions opts;
  opts.checkpoint_path = ckpt;
  opts.config_echo = render_run_config(cfg);
  opts.vocab_hash = data.vocab.hash();
  opts.eval = cfg.eval;
  opts.on_epoch = [&](const EpochRecord& r) {
    say(progress, req.tag + " seed " + std::to_string(req.seed) + " epoch " + std::to_string(r.epoch) +
                      " train_loss " + fmt(r.train_loss) + " val_ppl " + fmt(r.val_ppl, 3) + " lr " +
                      fmt(r.lr, 5) + " (" + fmt(r.seconds, 1) + "s)");
  };
  const TrainingLog log = train(model, data.train, data.valid, tc, opts);
  {
    std::ofstream out = open_csv(req.dir / ("log_" + suffix + ".csv"), cfg);
    log.write_csv(out);
  }
  const LanguageModel best = load_checkpoint(ckpt);
  SeedResult r;
  r.seed = req.seed;
  r.best_val_ppl = log.best_val_ppl;
  r.best_epoch = log.best_epoch;
  r.test_ppl = perplexity(best, data.test, cfg.eval);
  say(progress, req.tag + " seed " + std::to_string(req.seed) + " best val_ppl " + fmt(r.best_val_ppl, 3) +
                    " (epoch " + std::to_string(r.best_epoch) + ") test_ppl " + fmt(r.test_ppl, 3));
  return r;
}

void require_hash(const std::string& have, const std::string& want, const std::filesystem::path& path) {
  if (have != want) {
    throw DataError("vocabulary hash mismatch: " + path.string() + " was trained on vocab " + have +
                    ", the configured data has vocab " + want);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig prepare_run(RunConfig cfg, const CommandOptions& options) {
  if (options.out_dir) cfg.out_dir = *options.out_dir;
  if (options.seed) cfg.seeds = {*options.seed};
  if (options.threads < 1) throw ConfigError("--threads must be >= 1");
  Eigen::setNbThreads(options.threads);
  return cfg;
}

std::span<const TokenId> Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, valid or test)");
}

Dataset load_dataset(const RunConfig& cfg) {
  validate_paths(cfg);
  Dataset d{Vocab::build_from_file(cfg.data.train, cfg.data.min_count), {}, {}, {}};
  d.train = d.vocab.encode_file(cfg.data.train);
  d.valid = d.vocab.encode_file(cfg.data.valid);
  d.test = d.vocab.encode_file(cfg.data.test);
  if (d.valid.size() < 2 || d.test.size() < 2) throw DataError("validation and test splits need at least two tokens");
  return d;
}

Real median(std::vector<Real> values) {
  if (values.empty()) throw DataError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string config_comment(const RunConfig& cfg) {
  std::istringstream in(render_run_config(cfg));
  std::string out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out += "# " + line + '\n';
  }
  return out;
}

std::vector<SeedResult> cmd_train(const RunConfig& cfg, std::ostream* progress) {
  const Dataset data = load_dataset(cfg);
  say(progress, "vocab " + std::to_string(data.vocab.size()) + " types, train " + std::to_string(data.train.size()) +
                    " tokens, hash " + data.vocab.hash());
  std::vector<SeedResult> rows;
  for (std::uint64_t seed : cfg.seeds) {
    rows.push_back(train_one(cfg, data, RunRequest{cfg.output, seed, cfg.out_dir, "train"}, progress));
  }
  std::ofstream out = open_csv(cfg.out_dir / "summary.csv", cfg);
  out << "seed,best_val_ppl,test_ppl\n";
  std::vector<Real> vals, tests;
  for (const SeedResult& r : rows) {
    out << r.seed << ',' << fmt(r.best_val_ppl) << ',' << fmt(r.test_ppl) << '\n';
    vals.push_back(r.best_val_ppl);
    tests.push_back(r.test_ppl);
  }
  out << "median," << fmt(median(vals)) << ',' << fmt(median(tests)) << '\n';
  return rows;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream* progress) {
  if (cfg.ablate_kinds.empty()) throw ConfigError("ablate.kinds is empty");
  std::vector<Variant> variants;
  for (const std::string& spec : cfg.ablate_kinds) variants.push_back(parse_variant(spec, cfg.output));
  for (std::size_t i = 0; i < variants.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (variants[i].label == variants[j].label) throw ConfigError("duplicate ablation variant " + variants[i].label);
    }
  }
  const Dataset data = load_dataset(cfg);
  const Index d = cfg.encoder.embed_size, dh = cfg.encoder.final_size();

  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    AblationRow row;
    row.variant = v.label;
    row.output_params =
        param_count(v.output.kind, data.vocab.size(), d, dh, v.output.joint_dim > 0 ? v.output.joint_dim : d,
                    v.output.depth);
    for (std::uint64_t seed : cfg.seeds) {
      row.runs.push_back(train_one(cfg, data, RunRequest{v.output, seed, cfg.out_dir / v.label, v.label}, progress));
    }
    std::vector<Real> vals, tests;
    for (const SeedResult& r : row.runs) {
      vals.push_back(r.best_val_ppl);
      tests.push_back(r.test_ppl);
    }
    row.val_ppl = median(vals);
    row.test_ppl = median(tests);
    rows.push_back(std::move(row));
  }

  std::ofstream table = open_csv(cfg.out_dir / "ablation.csv", cfg);
  table << "variant,output_params,val_ppl,test_ppl\n";
  std::ofstream runs = open_csv(cfg.out_dir / "ablation_runs.csv", cfg);
  runs << "variant,seed,best_epoch,val_ppl,test_ppl\n";
  for (const AblationRow& r : rows) {
    table << r.variant << ',' << r.output_params << ',' << fmt(r.val_ppl) << ',' << fmt(r.test_ppl) << '\n';
    for (const SeedResult& s : r.runs) {
      runs << r.variant << ',' << s.seed << ',' << s.best_epoch << ',' << fmt(s.best_val_ppl) << ','
           << fmt(s.test_ppl) << '\n';
    }
  }
  return rows;
}

BandReport cmd_bands(const RunConfig& cfg, const std::filesystem::path& baseline,
                     const std::filesystem::path& comparison, const std::string& split,
                     const std::filesystem::path& csv_path) {
  const Checkpoint base_ck = read_checkpoint(baseline);
  const Checkpoint comp_ck = read_checkpoint(comparison);
  if (base_ck.meta.vocab_hash != comp_ck.meta.vocab_hash) {
    throw DataError("vocabulary hash mismatch between " + baseline.string() + " (" + base_ck.meta.vocab_hash +
                    ") and " + comparison.string() + " (" + comp_ck.meta.vocab_hash + ")");
  }
  const Dataset data = load_dataset(cfg);
  require_hash(base_ck.meta.vocab_hash, data.vocab.hash(), baseline);

  auto rebuild = [](const Checkpoint& ck) {
    LanguageModel m(ck.model_config, 0);
    restore_parameters(m, ck);
    return m;
  };
  const LanguageModel base = rebuild(base_ck);
  const LanguageModel comp = rebuild(comp_ck);
  const std::span<const TokenId> ids = data.split(split);
  const PerTokenLoss lb = per_token_losses(base, ids, cfg.eval);
  const PerTokenLoss lc = per_token_losses(comp, ids, cfg.eval);
  const BandReport report = band_compare(lb, lc, assign_bands(data.vocab, cfg.band_boundaries), cfg.band_weighting);
  std::ofstream out = open_csv(csv_path, cfg);
  report.write_csv(out);
  return report;
}

std::vector<BenchRow> cmd_bench(const RunConfig& cfg, std::ostream* progress) {
  using Clock = std::chrono::steady_clock;
  if (cfg.bench_kinds.empty()) throw ConfigError("bench.kinds is empty");
  if (cfg.bench_repetitions < 3) throw ConfigError("bench.repetitions must be >= 3");
  std::vector<Variant> variants;
  for (const std::string& spec : cfg.bench_kinds) variants.push_back(parse_variant(spec, cfg.output));

  const Dataset data = load_dataset(cfg);
  std::vector<Window> windows = bptt_windows(batchify(data.train, cfg.training.batch_size), cfg.training.bptt_len);
  if (cfg.bench_max_windows > 0 && static_cast<Index>(windows.size()) > cfg.bench_max_windows) {
    windows.resize(static_cast<std::size_t>(cfg.bench_max_windows));
  }
  const std::uint64_t seed = cfg.seeds.front();

  std::vector<BenchRow> rows;
  for (const Variant& v : variants) {
    LanguageModel model(ModelConfig{data.vocab.size(), cfg.encoder, v.output}, seed);
    std::unique_ptr<Optimizer> opt = make_optimizer(cfg.training.optimizer);
    Rng rng(seed);
    BenchRow row;
    row.variant = v.label;
    for (Index rep = 0; rep <= cfg.bench_repetitions; ++rep) {
      const auto t0 = Clock::now();
      train_epoch(model, windows, *opt, cfg.training.lr, cfg.training.clip_norm, rng);
      const Real secs = std::chrono::duration<Real>(Clock::now() - t0).count();
      if (rep > 0) row.repetitions.push_back(secs);  // rep 0 is the warm-up
      say(progress, "bench " + v.label + (rep == 0 ? " warm-up " : " rep " + std::to_string(rep) + " ") +
                        fmt(secs, 3) + "s");
    }
    Real total = 0.0;
    for (Real s : row.repetitions) total += s;
    row.seconds_per_epoch = total / static_cast<Real>(row.repetitions.size());
    rows.push_back(std::move(row));
  }

  std::size_t ref = 0;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (variants[i].output.kind == OutputKind::weight_tying) {
      ref = i;
      break;
    }
  }
  for (BenchRow& r : rows) r.ratio = r.seconds_per_epoch / rows[ref].seconds_per_epoch;

  std::ofstream out = open_csv(cfg.out_dir / "bench.csv", cfg);
  out << "variant,seconds_per_epoch,ratio\n";
  for (const BenchRow& r : rows) out << r.variant << ',' << fmt(r.seconds_per_epoch) << ',' << fmt(r.ratio, 3) << '\n';
  return rows;
}

void write_bench_table(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << std::left << std::setw(28) << "variant" << std::right << std::setw(14) << "sec/epoch" << std::setw(10)
      << "ratio" << '\n';
  for (const BenchRow& r : rows) {
    out << std::left << std::setw(28) << r.variant << std::right << std::setw(14) << fmt(r.seconds_per_epoch, 3)
        << std::setw(10) << fmt(r.ratio, 3) << '\n';
  }
}

EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& split,
                    const std::optional<std::filesystem::path>& losses_csv) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Dataset data = load_dataset(cfg);
  require_hash(ck.meta.vocab_hash, data.vocab.hash(), checkpoint);
  LanguageModel model(ck.model_config, 0);
  restore_parameters(model, ck);
  const PerTokenLoss losses = per_token_losses(model, data.split(split), cfg.eval);
  if (losses_csv) {
    std::ofstream out = open_csv(*losses_csv, cfg);
    losses.write_csv(out);
  }
  return EvalResult{std::exp(losses.mean()), losses.size()};
}

ParamReport cmd_params(const RunConfig& cfg) {
  validate_paths(cfg);
  const Vocab vocab = Vocab::build_from_file(cfg.data.train, cfg.data.min_count);
  LanguageModel model(model_config(cfg, vocab.size()), cfg.seeds.front());
  const ParamReport report = param_report(model);
  std::ofstream out = open_csv(cfg.out_dir / "params.csv", cfg);
  report.write_csv(out);
  return report;
}

}  // namespace drill
