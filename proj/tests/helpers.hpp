// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "drill/encoder.hpp"
#include "drill/model.hpp"
#include "drill/tensor.hpp"

namespace drill::test {

inline Tensor random_tensor(Index rows, Index cols, Rng& rng, Real scale = 1.0) {
  return Tensor::uniform(rows, cols, -scale, scale, rng);
}

inline void require_close(const Tensor& a, const Tensor& b, Real tol) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  CHECK(max_abs_diff(a, b) <= tol);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("drill_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline ModelConfig tiny_model(OutputKind kind, Index vocab, Index dim, Index depth = 2) {
  ModelConfig mc;
  mc.vocab_size = vocab;
  mc.encoder = EncoderConfig{1, dim, dim, 0, 0.0};
  mc.output.kind = kind;
  mc.output.depth = depth;
  return mc;
}

// Straight-line LSTM step on row vectors, gates i, f, g, o.
inline void lstm_step_ref(const Matrix& x, Matrix& h, Matrix& c, const LstmStack::Layer& layer) {
  const Index H = layer.hidden_size;
  Matrix pre = x * layer.w_input->value.mat() + h * layer.w_hidden->value.mat();
  pre.rowwise() += layer.bias->value.mat().row(0);
  auto sig = [](Real v) { return 1.0 / (1.0 + std::exp(-v)); };
  Matrix next_c(c.rows(), H), next_h(h.rows(), H);
  for (Index r = 0; r < pre.rows(); ++r) {
    for (Index j = 0; j < H; ++j) {
      const Real i = sig(pre(r, j)), f = sig(pre(r, H + j)), g = std::tanh(pre(r, 2 * H + j)),
                 o = sig(pre(r, 3 * H + j));
      next_c(r, j) = f * c(r, j) + i * g;
      next_h(r, j) = o * std::tanh(next_c(r, j));
    }
  }
  h = next_h;
  c = next_c;
}

}  // namespace drill::test
