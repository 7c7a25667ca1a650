#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ldlt/matrix.hpp"

namespace ldlt {

struct UnsupportedActivation : std::runtime_error {
    explicit UnsupportedActivation(const std::string& what) : std::runtime_error(what) {}
};

/// Slope-restricted scalar activation with its incremental-quadratic-constraint
/// constants: m <= f'(x) <= L for chord slopes everywhere.
struct ActivationSpec {
    std::string name;
    double slope_min = 0.0; // m
    double slope_max = 1.0; // L
    std::function<double(double)> apply;
    std::function<double(double)> deriv;

    bool unit_slope() const { return slope_min == 0.0 && slope_max == 1.0; }
};

/// Builtin specs. Supported set: relu, leaky_relu (alpha=1e-2), tanh, sigmoid,
/// elu (alpha=1), hardtanh, softplus, hardsigmoid, selu. Names with infinite
/// constants (hardshrink, rrelu) and unknown names throw UnsupportedActivation.
ActivationSpec builtin_activation(const std::string& name);

std::vector<std::string> builtin_activation_names();

/// Elementwise application over all entries of v.
Matrix apply_vec(const ActivationSpec& spec, const Matrix& v);

} // namespace ldlt
