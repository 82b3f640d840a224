// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "drill/tape.hpp"

namespace drill {

/// Builds a scalar loss from the current parameter values on a fresh tape.
using LossBuilder = std::function<Var(Tape&)>;

/// Central-difference gradient oracle.
///
/// Compares the tape's analytic gradient against
/// (f(θ + h·e_i) − f(θ − h·e_i)) / 2h for every coordinate of every
/// parameter and returns max |analytic − numeric| / max(1e-12, |analytic| + |numeric|).
/// `f` must be deterministic; two evaluations at θ that differ raise
/// OracleError. Parameter values and grads are restored before returning.
Real finite_difference_check(const LossBuilder& f, std::span<Parameter* const> params, Real h = 1e-5);

}  // namespace drill
