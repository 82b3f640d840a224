# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the drill language-model toolkit."""

from ._core import (
    ConfigError,
    DataError,
    DivergenceError,
    DrillError,
    LoadError,
    Model,
    ShapeError,
    Vocab,
    ablate,
    bands,
    bench,
    evaluate,
    generate_corpus,
    gradient_check,
    param_count,
    params,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "DrillError",
    "LoadError",
    "Model",
    "ShapeError",
    "Vocab",
    "ablate",
    "bands",
    "bench",
    "evaluate",
    "generate_corpus",
    "gradient_check",
    "param_count",
    "params",
    "train",
]
