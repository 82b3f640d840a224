// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drill/commands.hpp"
#include "drill/config.hpp"
#include "drill/error.hpp"
#include "drill/evaluation.hpp"
#include "drill/gradcheck.hpp"
#include "drill/model.hpp"
#include "drill/synthetic.hpp"
#include "drill/training.hpp"

namespace py = pybind11;
using namespace drill;
namespace fs = std::filesystem;

namespace {

RunConfig prepared(const fs::path& config, std::optional<fs::path> out, std::optional<std::uint64_t> seed,
                   int threads) {
  CommandOptions opts;
  opts.out_dir = std::move(out);
  opts.seed = seed;
  opts.threads = threads;
  RunConfig cfg = prepare_run(load_run_config(config), opts);
  validate_paths(cfg);
  return cfg;
}

py::dict seed_dict(const SeedResult& r) {
  py::dict d;
  d["seed"] = r.seed;
  d["best_val_ppl"] = r.best_val_ppl;
  d["test_ppl"] = r.test_ppl;
  d["best_epoch"] = r.best_epoch;
  return d;
}

// Owns a model; pybind11 cannot hold the move-only LanguageModel by value.
struct PyModel {
  std::unique_ptr<LanguageModel> model;

  LanguageModel& get() { return *model; }
};

Window window_from(const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& inputs,
                   const std::vector<TokenId>* targets) {
  if (inputs.ndim() != 1 && inputs.ndim() != 2) throw ShapeError("inputs must be (steps,) or (steps, batch)");
  Window w;
  w.steps = inputs.shape(0);
  w.batch = inputs.ndim() == 2 ? inputs.shape(1) : 1;
  if (w.steps < 1 || w.batch < 1) throw ShapeError("inputs must not be empty");
  const std::int64_t* data = inputs.data();
  w.inputs.assign(data, data + w.steps * w.batch);
  if (targets) {
    if (static_cast<Index>(targets->size()) != w.steps * w.batch) {
      throw ShapeError("targets must have the same number of entries as inputs");
    }
    w.targets = *targets;
  } else {
    w.targets = w.inputs;
  }
  return w;
}

py::array_t<Real> to_numpy(const Tensor& t) {
  py::array_t<Real> out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ModelConfig make_config(Index vocab_size, const std::string& kind, Index embed_size, Index hidden_size,
                        Index layers, Index output_size, Real encoder_dropout, Index depth,
                        const std::string& activation, const std::string& dropout_mode, Real dropout_rate,
                        bool input_skip, bool interlayer_residual, Index joint_dim) {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.encoder = EncoderConfig{layers, embed_size, hidden_size, output_size, encoder_dropout};
  mc.output.kind = parse_output_kind(kind);
  mc.output.depth = depth;
  mc.output.activation = parse_activation(activation);
  mc.output.dropout = DropoutSpec{parse_dropout_mode(dropout_mode), dropout_rate};
  mc.output.input_skip = input_skip;
  mc.output.interlayer_residual = interlayer_residual;
  mc.output.joint_dim = joint_dim;
  return mc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Language models with pluggable output layers, including deep residual label encoders";

  static py::exception<Error> base(m, "DrillError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<LoadError>(m, "LoadError", base.ptr());

  m.def(
      "param_count",
      [](const std::string& kind, Index vocab, Index embed, Index hidden, Index joint, Index depth) {
        return param_count(parse_output_kind(kind), vocab, embed, hidden, joint > 0 ? joint : embed, depth);
      },
      py::arg("kind"), py::arg("vocab"), py::arg("embed"), py::arg("hidden"), py::arg("joint") = 0,
      py::arg("depth") = 1, "Dedicated output-layer parameters of a kind, biases included.");

  py::class_<Vocab>(m, "Vocab")
      .def(py::init([](const std::string& text, std::int64_t min_count) { return Vocab::build(text, min_count); }),
           py::arg("text"), py::arg("min_count") = 1)
      .def_static("from_file", &Vocab::build_from_file, py::arg("path"), py::arg("min_count") = 1)
      .def("__len__", &Vocab::size)
      .def("__contains__", &Vocab::contains)
      .def("id", &Vocab::id)
      .def("token", &Vocab::token)
      .def("count", &Vocab::train_count)
      .def("encode", [](const Vocab& v, const std::string& text) { return v.encode(text); })
      .def_property_readonly("unk_id", &Vocab::unk_id)
      .def_property_readonly("eos_id", &Vocab::eos_id)
      .def_property_readonly("hash", &Vocab::hash);

  py::class_<PyModel>(m, "Model")
      .def(py::init([](Index vocab_size, const std::string& kind, Index embed_size, Index hidden_size, Index layers,
                       Index output_size, Real encoder_dropout, Index depth, const std::string& activation,
                       const std::string& dropout_mode, Real dropout_rate, bool input_skip, bool interlayer_residual,
                       Index joint_dim, std::uint64_t seed) {
             return PyModel{std::make_unique<LanguageModel>(
                 make_config(vocab_size, kind, embed_size, hidden_size, layers, output_size, encoder_dropout, depth,
                             activation, dropout_mode, dropout_rate, input_skip, interlayer_residual, joint_dim),
                 seed)};
           }),
           py::arg("vocab_size"), py::kw_only(), py::arg("kind") = "weight_tying", py::arg("embed_size") = 32,
           py::arg("hidden_size") = 32, py::arg("layers") = 1, py::arg("output_size") = 0,
           py::arg("encoder_dropout") = 0.0, py::arg("depth") = 1, py::arg("activation") = "tanh",
           py::arg("dropout_mode") = "none", py::arg("dropout_rate") = 0.0, py::arg("input_skip") = true,
           py::arg("interlayer_residual") = false, py::arg("joint_dim") = 0, py::arg("seed") = 0)
      .def_static(
          "load", [](const fs::path& path) { return PyModel{std::make_unique<LanguageModel>(load_checkpoint(path))}; },
          py::arg("path"))
      .def(
          "save",
          [](PyModel& self, const fs::path& path, const std::string& vocab_hash) {
            save_checkpoint(path, self.get(), CheckpointMeta{"", vocab_hash, 0, 0.0});
          },
          py::arg("path"), py::arg("vocab_hash") = "0000000000000000")
      .def_property_readonly("vocab_size", [](PyModel& self) { return self.get().vocab_size(); })
      .def_property_readonly("config", [](PyModel& self) { return render_model_config(self.get().config()); })
      .def_property_readonly("output_parameters", [](PyModel& self) { return param_report(self.get()).output; })
      .def(
          "parameters",
          [](PyModel& self) {
            py::dict d;
            for (Parameter* p : self.get().parameters()) d[py::str(p->name)] = to_numpy(p->value);
            return d;
          },
          "Copies of every parameter, keyed by name.")
      .def(
          "set_parameter",
          [](PyModel& self, const std::string& name, const py::array_t<Real, py::array::c_style | py::array::forcecast>& value) {
            for (Parameter* p : self.get().parameters()) {
              if (p->name != name) continue;
              if (value.ndim() != 2 || value.shape(0) != p->value.rows() || value.shape(1) != p->value.cols()) {
                throw ShapeError("set_parameter: '" + name + "' expects " + shape_string(p->value));
              }
              std::copy(value.data(), value.data() + value.size(), p->value.values().begin());
              return;
            }
            throw ConfigError("set_parameter: no parameter named '" + name + "'");
          },
          py::arg("name"), py::arg("value"))
      .def(
          "logits",
          [](PyModel& self, const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& inputs) {
            const Window w = window_from(inputs, nullptr);
            Tape tape;
            RecurrentState state = self.get().encoder().zero_state(w.batch);
            Rng unused(0);
            return to_numpy(self.get().window_logits(tape, w, state, Mode::eval, unused).value());
          },
          py::arg("inputs"),
          "Eval-mode logits ((steps*batch) x |V|, time-major rows) from a zero state. `inputs` is (steps,) or "
          "(steps, batch).")
      .def(
          "perplexity",
          [](PyModel& self, const std::vector<TokenId>& ids, Index batch_size, Index bptt_len) {
            return perplexity(self.get(), ids, EvalOptions{batch_size, bptt_len});
          },
          py::arg("ids"), py::arg("batch_size") = 1, py::arg("bptt_len") = 35)
      .def(
          "fit",
          [](PyModel& self, const std::vector<TokenId>& train_ids, const std::vector<TokenId>& valid_ids, Index epochs,
             Real lr, const std::string& optimizer, Index batch_size, Index bptt_len, std::uint64_t seed) {
            TrainConfig tc;
            tc.epochs = epochs;
            tc.lr = lr;
            tc.optimizer = optimizer == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
            if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("optimizer must be sgd or adam");
            tc.batch_size = batch_size;
            tc.bptt_len = bptt_len;
            tc.seed = seed;
            const TrainingLog log = train(self.get(), train_ids, valid_ids, tc, TrainOptions{});
            py::list epochs_out;
            for (const EpochRecord& r : log.epochs) {
              py::dict d;
              d["epoch"] = r.epoch;
              d["train_loss"] = r.train_loss;
              d["val_ppl"] = r.val_ppl;
              d["lr"] = r.lr;
              epochs_out.append(d);
            }
            return epochs_out;
          },
          py::arg("train_ids"), py::arg("valid_ids"), py::kw_only(), py::arg("epochs") = 1, py::arg("lr") = 20.0,
          py::arg("optimizer") = "sgd", py::arg("batch_size") = 20, py::arg("bptt_len") = 35, py::arg("seed") = 0,
          "Trains in place and returns one record per epoch. The model keeps the weights of the last epoch.");

  m.def(
      "gradient_check",
      [](PyModel& self, const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& inputs,
         const std::vector<TokenId>& targets, Real h, std::uint64_t mask_seed) {
        const Window w = window_from(inputs, &targets);
        LanguageModel& model = self.get();
        const RecurrentState s0 = model.encoder().zero_state(w.batch);
        std::vector<Parameter*> params = model.parameters();
        return finite_difference_check(
            [&](Tape& tape) {
              RecurrentState s = s0;
              Rng masks(mask_seed);
              return model.window_loss(tape, w, s, Mode::train, masks);
            },
            params, h);
      },
      py::arg("model"), py::arg("inputs"), py::arg("targets"), py::arg("h") = 1e-5, py::arg("mask_seed") = 0,
      "Max relative error between tape and central-difference gradients of the window loss, dropout masks frozen.");

  m.def(
      "generate_corpus",
      [](std::optional<fs::path> directory, Index vocab, Index classes, Index train_tokens, Index valid_tokens,
         Index test_tokens, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.vocab = vocab;
        spec.classes = classes;
        spec.seed = seed;
        const SyntheticCorpus c = generate_corpus(spec, train_tokens, valid_tokens, test_tokens);
        if (directory) write_corpus(c, *directory);
        py::dict d;
        d["train"] = c.train;
        d["valid"] = c.valid;
        d["test"] = c.test;
        return d;
      },
      py::arg("directory") = py::none(), py::kw_only(), py::arg("vocab") = 2000, py::arg("classes") = 48,
      py::arg("train_tokens") = 200000, py::arg("valid_tokens") = 20000, py::arg("test_tokens") = 20000,
      py::arg("seed") = 1234, "Zipfian class-bigram corpus; written as train/valid/test.txt when a directory is given.");

  m.def(
      "train",
      [](const fs::path& config, std::optional<fs::path> out, std::optional<std::uint64_t> seed, int threads) {
        py::list rows;
        for (const SeedResult& r : cmd_train(prepared(config, std::move(out), seed, threads))) rows.append(seed_dict(r));
        return rows;
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(), py::arg("threads") = 1);

  m.def(
      "ablate",
      [](const fs::path& config, std::optional<fs::path> out, std::optional<std::uint64_t> seed, int threads) {
        py::list rows;
        for (const AblationRow& r : cmd_ablate(prepared(config, std::move(out), seed, threads))) {
          py::dict d;
          d["variant"] = r.variant;
          d["output_params"] = r.output_params;
          d["val_ppl"] = r.val_ppl;
          d["test_ppl"] = r.test_ppl;
          py::list runs;
          for (const SeedResult& s : r.runs) runs.append(seed_dict(s));
          d["runs"] = runs;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(), py::arg("threads") = 1);

  m.def(
      "evaluate",
      [](const fs::path& config, const fs::path& checkpoint, const std::string& split, std::optional<fs::path> losses) {
        const EvalResult r = cmd_eval(prepared(config, std::nullopt, std::nullopt, 1), checkpoint, split, losses);
        py::dict d;
        d["perplexity"] = r.perplexity;
        d["scored_tokens"] = r.scored_tokens;
        return d;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("split") = "test", py::arg("losses") = py::none());

  m.def(
      "bands",
      [](const fs::path& config, const fs::path& baseline, const fs::path& comparison, const std::string& split,
         std::optional<fs::path> csv) {
        const RunConfig cfg = prepared(config, std::nullopt, std::nullopt, 1);
        const BandReport report = cmd_bands(cfg, baseline, comparison, split, csv ? *csv : cfg.out_dir / "bands.csv");
        py::list rows;
        for (const BandRow& r : report.rows) {
          py::dict d;
          d["band"] = r.interval;
          d["types"] = r.types;
          d["tokens"] = r.tokens;
          d["baseline_ce"] = r.empty() ? py::object(py::none()) : py::object(py::float_(r.baseline_ce));
          d["comparison_ce"] = r.empty() ? py::object(py::none()) : py::object(py::float_(r.comparison_ce));
          d["relative_diff_pct"] = r.empty() ? py::object(py::none()) : py::object(py::float_(r.relative_diff_pct));
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("baseline"), py::arg("comparison"), py::arg("split") = "test",
      py::arg("csv") = py::none());

  m.def(
      "bench",
      [](const fs::path& config, std::optional<fs::path> out, int threads) {
        py::list rows;
        for (const BenchRow& r : cmd_bench(prepared(config, std::move(out), std::nullopt, threads))) {
          py::dict d;
          d["variant"] = r.variant;
          d["seconds_per_epoch"] = r.seconds_per_epoch;
          d["ratio"] = r.ratio;
          d["repetitions"] = r.repetitions;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("threads") = 1);

  m.def(
      "params",
      [](const fs::path& config) {
        const ParamReport r = cmd_params(prepared(config, std::nullopt, std::nullopt, 1));
        py::dict d;
        d["embedding"] = r.embedding;
        d["encoder"] = r.encoder;
        d["output_layer"] = r.output;
        d["total"] = r.total;
        return d;
      },
      py::arg("config"));
}
