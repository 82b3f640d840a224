// SPDX-License-Identifier: Apache-2.0
#include "drill/model.hpp"

#include "drill/error.hpp"

namespace drill {

struct LanguageModel::Streams {
  Rng embedding;
  Rng encoder;
  Rng output;
};

// Independent streams so changing the output layer leaves E and the
// encoder initialization untouched across ablation variants.
LanguageModel::Streams LanguageModel::init_streams(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
  std::uint64_t s[3];
  std::vector<std::uint32_t> raw(6);
  seq.generate(raw.begin(), raw.end());
  for (int i = 0; i < 3; ++i) s[i] = (std::uint64_t{raw[2 * i]} << 32) | raw[2 * i + 1];
  return {Rng(s[0]), Rng(s[1]), Rng(s[2])};
}

namespace {

EmbeddingTable make_embedding(const ModelConfig& c, Rng& rng) {
  if (c.vocab_size <= 0) throw ConfigError("vocab size must be positive");
  return EmbeddingTable(c.vocab_size, c.encoder.embed_size, rng);
}

}  // namespace

LanguageModel::LanguageModel(const ModelConfig& config, std::uint64_t seed)
    : LanguageModel(config, init_streams(seed)) {}

LanguageModel::LanguageModel(const ModelConfig& config, Streams&& streams)
    : config_(config),
      embedding_(make_embedding(config, streams.embedding)),
      encoder_(config.encoder, streams.encoder),
      output_(OutputLayer::build(config.output,
                                 OutputDims{config.vocab_size, config.encoder.embed_size,
                                            config.encoder.final_size()},
                                 streams.output)) {
  config_.output = output_.config();
}

Var LanguageModel::window_logits(Tape& tape, const Window& window, RecurrentState& state, Mode mode, Rng& rng,
                                 const Tensor* cached_labels) const {
  if (window.steps < 1 || static_cast<Index>(window.inputs.size()) != window.steps * window.batch) {
    throw ShapeError("window has inconsistent steps/batch/input sizes");
  }
  Var x = embedding_.lookup(tape, window.inputs);
  auto [hidden, next] = encoder_.encode(x, window.steps, state, mode, rng);
  state = std::move(next);
  Var labels = cached_labels != nullptr ? tape.constant(*cached_labels)
                                        : output_.encode_labels(embedding_.leaf(tape), mode, rng);
  return output_.logits(labels, hidden);
}

Var LanguageModel::window_loss(Tape& tape, const Window& window, RecurrentState& state, Mode mode,
                               Rng& rng) const {
  if (window.targets.size() != window.inputs.size() || window.inputs.empty()) {
    throw ShapeError("window inputs and targets must have the same nonzero length");
  }
  return softmax_cross_entropy(window_logits(tape, window, state, mode, rng), window.targets);
}

Tensor LanguageModel::encoded_labels() const {
  Tape tape;
  Rng unused(0);
  return output_.encode_labels(tape.constant(embedding_.table().value), Mode::eval, unused).value();
}

std::vector<Parameter*> LanguageModel::parameters() {
  std::vector<Parameter*> out = embedding_parameters();
  auto enc = encoder_parameters();
  auto outp = output_parameters();
  out.insert(out.end(), enc.begin(), enc.end());
  out.insert(out.end(), outp.begin(), outp.end());
  return out;
}

std::vector<Parameter*> LanguageModel::embedding_parameters() { return {&embedding_.table()}; }
std::vector<Parameter*> LanguageModel::encoder_parameters() { return encoder_.parameters(); }
std::vector<Parameter*> LanguageModel::output_parameters() { return output_.parameters(); }

}  // namespace drill
