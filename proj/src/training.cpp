// SPDX-License-Identifier: Apache-2.0
#include "drill/training.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "drill/config.hpp"
#include "drill/error.hpp"

namespace drill {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("training.lr must be > 0");
  if (!(cfg.lr_decay_factor > 0.0 && cfg.lr_decay_factor < 1.0)) {
    throw ConfigError("training.lr_decay_factor must be in (0, 1)");
  }
  if (cfg.patience < 1) throw ConfigError("training.patience must be >= 1");
  if (!(cfg.clip_norm > 0.0)) throw ConfigError("training.clip_norm must be > 0");
  if (cfg.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (cfg.bptt_len < 1) throw ConfigError("training.bptt_len must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Optimizers

namespace {

class Sgd final : public Optimizer {
 public:
  OptimizerKind kind() const override { return OptimizerKind::sgd; }
  void step(std::span<Parameter* const> params, Real lr) override {
    for (Parameter* p : params) p->value.mat() -= lr * p->grad.mat();
    ++steps_;
  }
  std::int64_t steps() const override { return steps_; }
  NamedTensors state() const override { return {}; }
  void load_state(std::int64_t steps, const NamedTensors& state) override {
    if (!state.empty()) throw LoadError("sgd optimizer carries no state tensors");
    steps_ = steps;
  }

 private:
  std::int64_t steps_ = 0;
};

class Adam final : public Optimizer {
 public:
  static constexpr Real kBeta1 = 0.9;
  static constexpr Real kBeta2 = 0.999;
  static constexpr Real kEps = 1e-8;

  OptimizerKind kind() const override { return OptimizerKind::adam; }

  void step(std::span<Parameter* const> params, Real lr) override {
    ++steps_;
    const Real c1 = 1.0 - std::pow(kBeta1, static_cast<Real>(steps_));
    const Real c2 = 1.0 - std::pow(kBeta2, static_cast<Real>(steps_));
    for (Parameter* p : params) {
      auto [it, fresh] = moments_.try_emplace(p->name);
      if (fresh) {
        it->second.first = Tensor::zeros(p->value.rows(), p->value.cols());
        it->second.second = Tensor::zeros(p->value.rows(), p->value.cols());
      }
      Matrix& m = it->second.first.mat();
      Matrix& v = it->second.second.mat();
      const Matrix& g = p->grad.mat();
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      p->value.mat().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }
  }

  std::int64_t steps() const override { return steps_; }

  NamedTensors state() const override {
    NamedTensors out;
    for (const auto& [name, mv] : moments_) {
      out.emplace_back("adam.m/" + name, mv.first);
      out.emplace_back("adam.v/" + name, mv.second);
    }
    return out;
  }

  void load_state(std::int64_t steps, const NamedTensors& state) override {
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
    for (const auto& [key, t] : state) {
      if (key.rfind("adam.m/", 0) == 0) {
        moments[key.substr(7)].first = t;
      } else if (key.rfind("adam.v/", 0) == 0) {
        moments[key.substr(7)].second = t;
      } else {
        throw LoadError("unexpected adam state tensor '" + key + "'");
      }
    }
    for (const auto& [name, mv] : moments) {
      if (!mv.first.same_shape(mv.second) || mv.first.empty()) {
        throw LoadError("adam moments for '" + name + "' are incomplete or mismatched");
      }
    }
    moments_ = std::move(moments);
    steps_ = steps;
  }

 private:
  std::int64_t steps_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind) {
  if (kind == OptimizerKind::adam) return std::make_unique<Adam>();
  return std::make_unique<Sgd>();
}

Real clip_gradients(std::span<Parameter* const> params, Real clip_norm) {
  Real sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.mat().squaredNorm();
  const Real norm = std::sqrt(sq);
  if (!(norm > clip_norm)) return 1.0;
  const Real factor = clip_norm / norm;
  for (Parameter* p : params) p->grad.mat() *= factor;
  return factor;
}

PlateauSchedule::PlateauSchedule(Real lr, Real factor, Index patience)
    : lr_(lr), factor_(factor), patience_(patience), best_(std::numeric_limits<Real>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("lr decay factor must be in (0, 1)");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool PlateauSchedule::observe(Real metric) {
  if (metric < best_) {
    best_ = metric;
    stale_ = 0;
    return false;
  }
  if (++stale_ < patience_) return false;
  lr_ *= factor_;
  stale_ = 0;
  ++decays_;
  return true;
}

void TrainingLog::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,val_ppl,lr,seconds\n";
  char buf[160];
  for (const EpochRecord& r : epochs) {
    std::snprintf(buf, sizeof buf, "%lld,%.10f,%.6f,%.10g,%.4f\n", static_cast<long long>(r.epoch), r.train_loss,
                  r.val_ppl, r.lr, r.seconds);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Training loop

Real train_epoch(LanguageModel& model, std::span<const Window> windows, Optimizer& optimizer, Real lr,
                 Real clip_norm, Rng& rng) {
  if (windows.empty()) throw DataError("training split yields no windows");
  const std::vector<Parameter*> params = model.parameters();
  RecurrentState state = model.encoder().zero_state(windows.front().batch);
  Real total = 0.0;
  std::int64_t tokens = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Window& w = windows[i];
    zero_grads(params);
    Tape tape;
    Real loss_value = 0.0;
    try {
      Var loss = model.window_loss(tape, w, state, Mode::train, rng);
      loss_value = loss.value()(0, 0);
      if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at window " + std::to_string(i) + ": " + e.what());
    }
    clip_gradients(params, clip_norm);
    optimizer.step(params, lr);
    const auto n = static_cast<std::int64_t>(w.targets.size());
    total += loss_value * static_cast<Real>(n);
    tokens += n;
  }
  return total / static_cast<Real>(tokens);
}

TrainingLog train(LanguageModel& model, std::span<const TokenId> train_ids, std::span<const TokenId> valid_ids,
                  const TrainConfig& cfg, const TrainOptions& options) {
  using Clock = std::chrono::steady_clock;
  validate(cfg);
  if (valid_ids.empty()) throw DataError("validation split is empty");
  const auto run_start = Clock::now();

  const BatchedCorpus corpus = batchify(train_ids, cfg.batch_size);
  const std::vector<Window> windows = bptt_windows(corpus, cfg.bptt_len);
  std::unique_ptr<Optimizer> optimizer = make_optimizer(cfg.optimizer);
  PlateauSchedule schedule(cfg.lr, cfg.lr_decay_factor, cfg.patience);
  std::seed_seq seq{cfg.seed, std::uint64_t{0x747261696eULL}};
  Rng rng(seq);

  TrainingLog log;
  log.best_val_ppl = std::numeric_limits<Real>::infinity();
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = schedule.lr();
    rec.train_loss = train_epoch(model, windows, *optimizer, schedule.lr(), cfg.clip_norm, rng);
    rec.val_ppl = perplexity(model, valid_ids, options.eval);
    if (!std::isfinite(rec.val_ppl)) {
      throw DivergenceError("validation perplexity is not finite after epoch " + std::to_string(epoch));
    }
    if (rec.val_ppl < log.best_val_ppl) {
      log.best_val_ppl = rec.val_ppl;
      log.best_epoch = epoch;
      if (options.checkpoint_path) {
        save_checkpoint(*options.checkpoint_path, model,
                        CheckpointMeta{options.config_echo, options.vocab_hash, epoch, rec.val_ppl}, optimizer.get());
      }
    }
    schedule.observe(rec.val_ppl);
    rec.seconds = std::chrono::duration<Real>(Clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  log.total_seconds = std::chrono::duration<Real>(Clock::now() - run_start).count();
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr std::string_view kMagic = "DRILL-CHECKPOINT";
constexpr std::string_view kEndManifest = "end-manifest";

void put_f64(std::string& out, Real v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  std::memcpy(bytes, &bits, 8);
  out.append(bytes, 8);
}

Real get_f64(const char* p) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, p, 8);
  return std::bit_cast<Real>(bits);
}

std::string fmt17(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_block(std::ostream& out, std::string_view key, const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  out << key << ' ' << lines.size() << '\n';
  for (const std::string& l : lines) out << l << '\n';
}

struct Entry {
  std::string section;  // "param" or "optim"
  std::string name;
  Index rows = 0, cols = 0;
  std::uint64_t offset = 0;
};

/// Line reader over the manifest part of a checkpoint.
class Manifest {
 public:
  Manifest(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  std::string line() {
    const auto nl = data_.find('\n', pos_);
    if (nl == std::string::npos) fail("truncated manifest");
    std::string out = data_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return out;
  }

  std::string value(std::string_view key) {
    const std::string l = line();
    if (l.size() < key.size() + 1 || l.compare(0, key.size(), key) != 0 || l[key.size()] != ' ') {
      fail("expected '" + std::string(key) + "', found '" + l + "'");
    }
    return l.substr(key.size() + 1);
  }

  std::int64_t integer(std::string_view key) {
    const std::string v = value(key);
    try {
      std::size_t used = 0;
      const long long n = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      fail(std::string(key) + " is not an integer");
    }
  }

  std::string block(std::string_view key) {
    const std::int64_t n = integer(key);
    if (n < 0) fail(std::string(key) + " has a negative line count");
    std::string out;
    for (std::int64_t i = 0; i < n; ++i) out += line() + '\n';
    return out;
  }

  std::size_t position() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw LoadError("checkpoint " + path_.string() + ": " + what);
  }

 private:
  const std::string& data_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, LanguageModel& model, const CheckpointMeta& meta,
                     const Optimizer* optimizer) {
  std::vector<Entry> entries;
  std::vector<const Tensor*> tensors;
  std::uint64_t offset = 0;
  auto add = [&](std::string section, const std::string& name, const Tensor& t) {
    entries.push_back({std::move(section), name, t.rows(), t.cols(), offset});
    tensors.push_back(&t);
    offset += static_cast<std::uint64_t>(t.size()) * 8;
  };
  for (const Parameter* p : model.parameters()) add("param", p->name, p->value);
  const NamedTensors opt_state = optimizer ? optimizer->state() : NamedTensors{};
  for (const auto& [name, t] : opt_state) add("optim", name, t);

  std::ostringstream head;
  head << kMagic << '\n'
       << "version " << kCheckpointVersion << '\n'
       << "epoch " << meta.epoch << '\n'
       << "best_val_ppl " << fmt17(meta.best_val_ppl) << '\n'
       << "vocab_hash " << meta.vocab_hash << '\n'
       << "optimizer " << to_string(optimizer ? optimizer->kind() : OptimizerKind::sgd) << '\n'
       << "optimizer_steps " << (optimizer ? optimizer->steps() : 0) << '\n';
  write_block(head, "config_lines", meta.config_echo);
  write_block(head, "model_lines", render_model_config(model.config()));
  head << "tensors " << entries.size() << '\n';
  for (const Entry& e : entries) {
    head << e.section << ' ' << e.name << ' ' << e.rows << ' ' << e.cols << ' ' << e.offset << '\n';
  }
  head << "blob_bytes " << offset << '\n' << kEndManifest << '\n';

  std::string blob;
  blob.reserve(offset);
  for (const Tensor* t : tensors) {
    for (Real v : t->values()) put_f64(blob, v);
  }

  // Write to a sibling file first so a crash never leaves a half-written checkpoint.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Manifest m(data, path);

  if (m.line() != kMagic) m.fail("not a checkpoint file");
  const std::int64_t version = m.integer("version");
  if (version != kCheckpointVersion) {
    m.fail("format version " + std::to_string(version) + " is not supported (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.meta.epoch = m.integer("epoch");
  try {
    ck.meta.best_val_ppl = std::stod(m.value("best_val_ppl"));
  } catch (const std::invalid_argument&) {
    m.fail("best_val_ppl is not a number");
  } catch (const std::out_of_range&) {
    ck.meta.best_val_ppl = std::numeric_limits<Real>::infinity();
  }
  ck.meta.vocab_hash = m.value("vocab_hash");
  try {
    ck.optimizer = parse_optimizer_kind(m.value("optimizer"));
  } catch (const ConfigError& e) {
    m.fail(e.what());
  }
  ck.optimizer_steps = m.integer("optimizer_steps");
  ck.meta.config_echo = m.block("config_lines");
  try {
    ck.model_config = parse_model_config(m.block("model_lines"));
  } catch (const ConfigError& e) {
    m.fail(std::string("bad model description: ") + e.what());
  }

  const std::int64_t count = m.integer("tensors");
  if (count < 0) m.fail("negative tensor count");
  std::vector<Entry> entries;
  for (std::int64_t i = 0; i < count; ++i) {
    std::istringstream ls(m.line());
    Entry e;
    if (!(ls >> e.section >> e.name >> e.rows >> e.cols >> e.offset) || (e.section != "param" && e.section != "optim") ||
        e.rows < 1 || e.cols < 1) {
      m.fail("malformed tensor entry " + std::to_string(i));
    }
    entries.push_back(std::move(e));
  }
  const std::int64_t blob_bytes = m.integer("blob_bytes");
  if (m.line() != kEndManifest) m.fail("missing end of manifest");

  const std::size_t blob_start = m.position();
  const std::size_t available = data.size() - blob_start;
  if (blob_bytes < 0 || static_cast<std::uint64_t>(blob_bytes) != available) {
    m.fail("data section holds " + std::to_string(available) + " bytes, manifest declares " +
           std::to_string(blob_bytes) + " (truncated or corrupt)");
  }
  std::uint64_t expected = 0;
  for (const Entry& e : entries) {
    if (e.offset != expected) m.fail("tensor '" + e.name + "' has offset " + std::to_string(e.offset));
    expected += static_cast<std::uint64_t>(e.rows * e.cols) * 8;
  }
  if (expected != static_cast<std::uint64_t>(blob_bytes)) m.fail("tensor directory does not cover the data section");

  for (const Entry& e : entries) {
    Tensor t(e.rows, e.cols);
    const char* p = data.data() + blob_start + e.offset;
    Real* dst = t.mat().data();
    for (Index k = 0; k < t.size(); ++k) dst[k] = get_f64(p + 8 * k);
    (e.section == "param" ? ck.parameters : ck.optimizer_state).emplace_back(e.name, std::move(t));
  }
  return ck;
}

void restore_parameters(LanguageModel& model, const Checkpoint& ckpt) {
  const std::vector<Parameter*> params = model.parameters();
  std::map<std::string, const Tensor*> saved;
  for (const auto& [name, t] : ckpt.parameters) saved.emplace(name, &t);
  for (const Parameter* p : params) {
    auto it = saved.find(p->name);
    if (it == saved.end()) {
      throw ShapeError("checkpoint parameter mismatch: '" + p->name + "' " + shape_string(p->value) +
                       " is absent from the checkpoint");
    }
    if (!it->second->same_shape(p->value)) {
      throw ShapeError("checkpoint parameter mismatch: '" + p->name + "' expects " + shape_string(p->value) +
                       ", checkpoint has " + shape_string(*it->second));
    }
  }
  if (saved.size() != params.size()) {
    for (const auto& [name, t] : ckpt.parameters) {
      bool used = false;
      for (const Parameter* p : params) used = used || p->name == name;
      if (!used) throw ShapeError("checkpoint parameter mismatch: '" + name + "' has no counterpart in the model");
    }
  }
  for (Parameter* p : params) p->value = *saved.at(p->name);
}

LanguageModel load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  try {
    LanguageModel model(ck.model_config, 0);
    restore_parameters(model, ck);
    return model;
  } catch (const ShapeError& e) {
    throw LoadError("checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace drill
