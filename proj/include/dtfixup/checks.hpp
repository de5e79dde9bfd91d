#pragma once

// Independent verification routines: central finite differences and the
// property suite behind `dtfixup-lab verify`. Nothing in the library's
// forward/backward path calls into this module.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtfixup/tensor.hpp"

namespace dtfixup::checks {

inline constexpr double kFiniteDifferenceStep = 1e-6;
inline constexpr double kGradientRelTolerance = 1e-5;
inline constexpr double kOracleAbsTolerance = 1e-10;

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradientComparison {
    std::vector<Tensor> analytic;  // tape gradients, one per input
    std::vector<Tensor> numeric;   // central differences, one per input
    double rel_error = 0.0;        // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_abs_error = 0.0;
};

// Central differences of a scalar-valued function. `fn` is called with
// constant tensors (no tape).
std::vector<Tensor> numeric_gradients(const ScalarFn& fn, std::span<const Tensor> inputs,
                                      double step = kFiniteDifferenceStep);

// Tape gradients of `fn` at `inputs`, compared against numeric_gradients.
GradientComparison compare_gradients(const ScalarFn& fn, std::span<const Tensor> inputs,
                                     double step = kFiniteDifferenceStep);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Each primitive op, `trials` random instances with entries in [-2, 2].
CheckResult check_primitive_gradients(int trials, std::uint64_t seed);
// Full encoder forward (vanilla and relational, LN on and off).
CheckResult check_encoder_gradients(int trials, std::uint64_t seed);
// Closed-form scalar oracle against its own finite differences.
CheckResult check_oracle_self_consistency(int trials, std::uint64_t seed);
// Autodiff of the d_x = d_z = 1 relational layer against the closed form.
CheckResult check_oracle_equivalence(int trials, std::uint64_t seed);
// Zero relation tables reduce relational attention to vanilla, bitwise.
CheckResult check_relational_reduction(int trials, std::uint64_t seed);
// Row-stochastic attention, permutation equivariance, zero-weight identity.
CheckResult check_encoder_invariants(int trials, std::uint64_t seed);
// Scale-factor formulas and scheme application invariants.
CheckResult check_init_invariants(std::uint64_t seed);

std::vector<CheckResult> run_property_suite(std::uint64_t seed);

} // namespace dtfixup::checks
