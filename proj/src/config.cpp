// SPDX-License-Identifier: Apache-2.0
#include "drill/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "drill/error.hpp"

namespace drill {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find(sep, pos);
    if (next == std::string_view::npos) next = s.size();
    std::string item = trim(s.substr(pos, next - pos));
    if (!item.empty()) out.push_back(std::move(item));
    pos = next + 1;
  }
  return out;
}

std::string fmt_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Typed access to one parsed section with key tracking.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool has(const std::string& key) {
    known_.insert(key);
    return tree_ != nullptr && tree_->find(key) != tree_->not_found();
  }

  std::string str(const std::string& key) {
    if (!has(key)) throw ConfigError("missing key " + name_ + "." + key);
    return trim(tree_->get<std::string>(key));
  }

  std::int64_t integer(const std::string& key) {
    const std::string v = str(key);
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
    return out;
  }

  Real real(const std::string& key) {
    const std::string v = str(key);
    char* end = nullptr;
    errno = 0;
    const Real out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno != 0) bad(key, v, "a real number");
    return out;
  }

  bool boolean(const std::string& key) {
    const std::string v = str(key);
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    bad(key, v, "a boolean");
  }

  std::vector<std::string> list(const std::string& key) {
    std::string v = str(key);
    if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
    return split_list(v);
  }

  template <class T, class Fn>
  void opt(const std::string& key, T& field, Fn&& get) {
    if (has(key)) field = get(key);
  }

  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, child] : *tree_) {
      if (!known_.count(key)) throw ConfigError("unknown config key " + name_ + "." + key);
      if (!child.empty()) throw ConfigError("nested value under " + name_ + "." + key);
    }
  }

 private:
  [[noreturn]] void bad(const std::string& key, const std::string& v, const char* what) const {
    throw ConfigError(name_ + "." + key + " = '" + v + "' is not " + what);
  }

  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> known_;
};

pt::ptree parse_ini(std::string_view text) {
  // The ini reader only understands ';' comments; accept '#' too.
  std::ostringstream cleaned;
  std::istringstream lines{std::string(text)};
  for (std::string line; std::getline(lines, line);) {
    const std::string t = trim(line);
    cleaned << (t.rfind('#', 0) == 0 ? std::string() : line) << '\n';
  }
  pt::ptree tree;
  std::istringstream in(cleaned.str());
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return tree;
}

class SectionedConfig {
 public:
  SectionedConfig(pt::ptree tree, std::set<std::string> allowed) : tree_(std::move(tree)) {
    for (const auto& [name, child] : tree_) {
      if (!allowed.count(name)) throw ConfigError("unknown config section [" + name + "]");
      if (child.empty() && !child.data().empty()) throw ConfigError("key '" + name + "' outside any section");
    }
  }

  Section& section(const std::string& name) {
    auto it = sections_.find(name);
    if (it != sections_.end()) return it->second;
    auto child = tree_.find(name);
    const pt::ptree* p = child == tree_.not_found() ? nullptr : &child->second;
    return sections_.emplace(name, Section(name, p)).first->second;
  }

  void reject_unknown() const {
    for (const auto& [_, s] : sections_) s.reject_unknown();
  }

 private:
  pt::ptree tree_;
  std::map<std::string, Section> sections_;
};

void read_encoder(Section& s, EncoderConfig& e) {
  s.opt("layers", e.layers, [&](auto& k) { return s.integer(k); });
  s.opt("hidden_size", e.hidden_size, [&](auto& k) { return s.integer(k); });
  s.opt("embed_size", e.embed_size, [&](auto& k) { return s.integer(k); });
  s.opt("output_size", e.output_size, [&](auto& k) { return s.integer(k); });
  s.opt("dropout", e.dropout, [&](auto& k) { return s.real(k); });
}

void read_output(Section& s, OutputConfig& o) {
  s.opt("kind", o.kind, [&](auto& k) { return parse_output_kind(s.str(k)); });
  s.opt("depth", o.depth, [&](auto& k) { return s.integer(k); });
  s.opt("activation", o.activation, [&](auto& k) { return parse_activation(s.str(k)); });
  s.opt("dropout_mode", o.dropout.mode, [&](auto& k) { return parse_dropout_mode(s.str(k)); });
  s.opt("dropout_rate", o.dropout.rate, [&](auto& k) { return s.real(k); });
  s.opt("input_skip", o.input_skip, [&](auto& k) { return s.boolean(k); });
  s.opt("interlayer_residual", o.interlayer_residual, [&](auto& k) { return s.boolean(k); });
  s.opt("d_joint", o.joint_dim, [&](auto& k) { return s.integer(k); });
}

void write_encoder(std::ostream& out, const EncoderConfig& e) {
  out << "[encoder]\n"
      << "layers = " << e.layers << '\n'
      << "hidden_size = " << e.hidden_size << '\n'
      << "embed_size = " << e.embed_size << '\n'
      << "output_size = " << e.output_size << '\n'
      << "dropout = " << fmt_real(e.dropout) << "\n\n";
}

void write_output(std::ostream& out, const OutputConfig& o) {
  out << "[output]\n"
      << "kind = " << to_string(o.kind) << '\n'
      << "depth = " << o.depth << '\n'
      << "activation = " << to_string(o.activation) << '\n'
      << "dropout_mode = " << to_string(o.dropout.mode) << '\n'
      << "dropout_rate = " << fmt_real(o.dropout.rate) << '\n'
      << "input_skip = " << (o.input_skip ? "true" : "false") << '\n'
      << "interlayer_residual = " << (o.interlayer_residual ? "true" : "false") << '\n'
      << "d_joint = " << o.joint_dim << "\n\n";
}

template <class T>
std::string join(const std::vector<T>& items) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < items.size(); ++i) ss << (i ? ", " : "") << items[i];
  return ss.str();
}

bool parse_switch(std::string_view key, std::string_view v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("variant option " + std::string(key) + "=" + std::string(v) + " is not on/off");
}

}  // namespace

// ---------------------------------------------------------------------------

Variant parse_variant(std::string_view spec, const OutputConfig& base) {
  const std::vector<std::string> parts = split_list(spec, ':');
  if (parts.empty()) throw ConfigError("empty output variant");
  Variant v;
  v.output = base;
  v.output.kind = parse_output_kind(parts[0]);
  std::string suffix;
  auto number = [&](const std::string& key, const std::string& val) {
    double out = 0.0;
    const auto [end, ec] = std::from_chars(val.data(), val.data() + val.size(), out);
    if (ec != std::errc{} || end != val.data() + val.size()) {
      throw ConfigError("variant option '" + key + "' in '" + std::string(spec) + "' is not a number: '" + val + "'");
    }
    return out;
  };
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) throw ConfigError("variant option '" + parts[i] + "' is not key=value");
    const std::string key = trim(std::string_view(parts[i]).substr(0, eq));
    const std::string val = trim(std::string_view(parts[i]).substr(eq + 1));
    if (key == "k") {
      v.output.depth = static_cast<Index>(number(key, val));
    } else if (key == "res") {
      v.output.interlayer_residual = parse_switch(key, val);
      if (v.output.interlayer_residual) suffix += "+res";
    } else if (key == "skip") {
      v.output.input_skip = parse_switch(key, val);
      if (!v.output.input_skip) suffix += "-noskip";
    } else if (key == "act") {
      v.output.activation = parse_activation(val);
      suffix += "-" + val;
    } else if (key == "dropout") {
      v.output.dropout.mode = parse_dropout_mode(val);
      suffix += v.output.dropout.mode == DropoutMode::none ? std::string("-nodrop") : "-" + val;
    } else if (key == "rate") {
      v.output.dropout.rate = number(key, val);
      suffix += "-p" + val;
    } else if (key == "dj") {
      v.output.joint_dim = static_cast<Index>(number(key, val));
      suffix += "-dj" + val;
    } else {
      throw ConfigError("unknown variant option '" + key + "' in '" + std::string(spec) + "'");
    }
  }
  v.label = v.output.kind == OutputKind::drill ? "drill-k" + std::to_string(v.output.depth) + suffix
                                                : std::string(to_string(v.output.kind)) + suffix;
  return v;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  SectionedConfig c(parse_ini(text), {"data", "encoder", "output", "training", "eval", "run", "ablate", "bands", "bench"});
  RunConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  Section& data = c.section("data");
  data.opt("train", cfg.data.train, [&](auto& k) { return resolve(data.str(k)); });
  data.opt("valid", cfg.data.valid, [&](auto& k) { return resolve(data.str(k)); });
  data.opt("test", cfg.data.test, [&](auto& k) { return resolve(data.str(k)); });
  data.opt("min_count", cfg.data.min_count, [&](auto& k) { return data.integer(k); });

  read_encoder(c.section("encoder"), cfg.encoder);
  read_output(c.section("output"), cfg.output);

  Section& tr = c.section("training");
  tr.opt("optimizer", cfg.training.optimizer, [&](auto& k) { return parse_optimizer_kind(tr.str(k)); });
  tr.opt("lr", cfg.training.lr, [&](auto& k) { return tr.real(k); });
  tr.opt("lr_decay_factor", cfg.training.lr_decay_factor, [&](auto& k) { return tr.real(k); });
  tr.opt("patience", cfg.training.patience, [&](auto& k) { return tr.integer(k); });
  tr.opt("clip_norm", cfg.training.clip_norm, [&](auto& k) { return tr.real(k); });
  tr.opt("epochs", cfg.training.epochs, [&](auto& k) { return tr.integer(k); });
  tr.opt("bptt_len", cfg.training.bptt_len, [&](auto& k) { return tr.integer(k); });
  tr.opt("batch_size", cfg.training.batch_size, [&](auto& k) { return tr.integer(k); });

  Section& ev = c.section("eval");
  cfg.eval.bptt_len = cfg.training.bptt_len;
  ev.opt("batch_size", cfg.eval.batch_size, [&](auto& k) { return ev.integer(k); });
  ev.opt("bptt_len", cfg.eval.bptt_len, [&](auto& k) { return ev.integer(k); });

  Section& run = c.section("run");
  run.opt("seeds", cfg.seeds, [&](auto& k) {
    std::vector<std::uint64_t> seeds;
    for (const std::string& s : run.list(k)) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("run.seeds entry '" + s + "' is not an integer");
      seeds.push_back(v);
    }
    if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
    return seeds;
  });
  run.opt("out_dir", cfg.out_dir, [&](auto& k) { return resolve(run.str(k)); });

  Section& ab = c.section("ablate");
  ab.opt("kinds", cfg.ablate_kinds, [&](auto& k) { return ab.list(k); });

  Section& bands = c.section("bands");
  bands.opt("boundaries", cfg.band_boundaries, [&](auto& k) {
    std::vector<std::int64_t> out;
    for (const std::string& s : bands.list(k)) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("bands.boundaries entry '" + s + "' is not an integer");
      }
      if (v <= (out.empty() ? 1 : out.back())) {
        throw ConfigError("bands.boundaries must be strictly increasing and start above 1");
      }
      out.push_back(v);
    }
    return out;
  });
  bands.opt("weighting", cfg.band_weighting, [&](auto& k) {
    const std::string v = bands.str(k);
    if (v == "token") return BandWeighting::token;
    if (v == "type") return BandWeighting::type;
    throw ConfigError("bands.weighting must be token or type, got '" + v + "'");
  });

  Section& bench = c.section("bench");
  bench.opt("kinds", cfg.bench_kinds, [&](auto& k) { return bench.list(k); });
  bench.opt("repetitions", cfg.bench_repetitions, [&](auto& k) { return bench.integer(k); });
  bench.opt("max_windows", cfg.bench_max_windows, [&](auto& k) { return bench.integer(k); });

  c.reject_unknown();

  validate(cfg.training);
  if (!(cfg.output.dropout.rate >= 0.0 && cfg.output.dropout.rate < 1.0)) {
    throw ConfigError("output.dropout_rate must lie in [0, 1)");
  }
  if (!(cfg.encoder.dropout >= 0.0 && cfg.encoder.dropout < 1.0)) {
    throw ConfigError("encoder.dropout must lie in [0, 1)");
  }
  if (cfg.output.depth < 1) throw ConfigError("output.depth must be >= 1");
  if (cfg.encoder.hidden_size < 1 || cfg.encoder.embed_size < 1 || cfg.encoder.output_size < 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  for (const std::string& kind : cfg.ablate_kinds) parse_variant(kind, cfg.output);
  for (const std::string& kind : cfg.bench_kinds) parse_variant(kind, cfg.output);
  if (cfg.bench_repetitions < 3) throw ConfigError("bench.repetitions must be >= 3");
  if (cfg.eval.batch_size < 1 || cfg.eval.bptt_len < 1) throw ConfigError("eval.batch_size and eval.bptt_len must be >= 1");
  if (cfg.data.min_count < 1) throw ConfigError("data.min_count must be >= 1");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_run_config(text, path.parent_path());
}

void validate_paths(const RunConfig& cfg) {
  const std::pair<const char*, const std::filesystem::path*> paths[] = {
      {"data.train", &cfg.data.train}, {"data.valid", &cfg.data.valid}, {"data.test", &cfg.data.test}};
  for (const auto& [key, p] : paths) {
    if (p->empty()) throw ConfigError(std::string(key) + " is not set");
    if (!std::filesystem::exists(*p)) throw ConfigError(std::string(key) + ": file not found: " + p->string());
  }
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[data]\n"
      << "train = " << cfg.data.train.string() << '\n'
      << "valid = " << cfg.data.valid.string() << '\n'
      << "test = " << cfg.data.test.string() << '\n'
      << "min_count = " << cfg.data.min_count << "\n\n";
  write_encoder(out, cfg.encoder);
  write_output(out, cfg.output);
  const TrainConfig& t = cfg.training;
  out << "[training]\n"
      << "optimizer = " << to_string(t.optimizer) << '\n'
      << "lr = " << fmt_real(t.lr) << '\n'
      << "lr_decay_factor = " << fmt_real(t.lr_decay_factor) << '\n'
      << "patience = " << t.patience << '\n'
      << "clip_norm = " << fmt_real(t.clip_norm) << '\n'
      << "epochs = " << t.epochs << '\n'
      << "bptt_len = " << t.bptt_len << '\n'
      << "batch_size = " << t.batch_size << "\n\n";
  out << "[eval]\n"
      << "batch_size = " << cfg.eval.batch_size << '\n'
      << "bptt_len = " << cfg.eval.bptt_len << "\n\n";
  out << "[run]\n"
      << "seeds = " << join(cfg.seeds) << '\n'
      << "out_dir = " << cfg.out_dir.string() << "\n\n";
  if (!cfg.ablate_kinds.empty()) out << "[ablate]\nkinds = " << join(cfg.ablate_kinds) << "\n\n";
  out << "[bands]\n"
      << "boundaries = " << join(cfg.band_boundaries) << '\n'
      << "weighting = " << (cfg.band_weighting == BandWeighting::token ? "token" : "type") << "\n\n";
  out << "[bench]\n"
      << "kinds = " << join(cfg.bench_kinds) << '\n'
      << "repetitions = " << cfg.bench_repetitions << '\n'
      << "max_windows = " << cfg.bench_max_windows << '\n';
  return out.str();
}

ModelConfig model_config(const RunConfig& cfg, Index vocab_size) {
  return ModelConfig{vocab_size, cfg.encoder, cfg.output};
}

std::string render_model_config(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "[model]\nvocab_size = " << cfg.vocab_size << "\n\n";
  write_encoder(out, cfg.encoder);
  write_output(out, cfg.output);
  return out.str();
}

ModelConfig parse_model_config(std::string_view text) {
  SectionedConfig c(parse_ini(text), {"model", "encoder", "output"});
  ModelConfig cfg;
  Section& m = c.section("model");
  cfg.vocab_size = m.integer("vocab_size");
  read_encoder(c.section("encoder"), cfg.encoder);
  read_output(c.section("output"), cfg.output);
  c.reject_unknown();
  return cfg;
}

}  // namespace drill
