#include "ldlt/activation.hpp"

#include <cmath>

namespace ldlt {

namespace {

constexpr double kLeakySlope = 1e-2;
// PyTorch SELU constants.
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
constexpr double kSeluScale = 1.0507009873554804934193349852946;

double softplus_fn(double x) {
    // Stable log(1 + e^x).
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

ActivationSpec builtin_activation(const std::string& name) {
    if (name == "relu")
        return {name, 0.0, 1.0, [](double x) { return x > 0.0 ? x : 0.0; },
                [](double x) { return x > 0.0 ? 1.0 : 0.0; }};
    if (name == "leaky_relu")
        return {name, kLeakySlope, 1.0,
                [](double x) { return x > 0.0 ? x : kLeakySlope * x; },
                [](double x) { return x > 0.0 ? 1.0 : kLeakySlope; }};
    if (name == "tanh")
        return {name, 0.0, 1.0, [](double x) { return std::tanh(x); },
                [](double x) {
                    const double t = std::tanh(x);
                    return 1.0 - t * t;
                }};
    if (name == "sigmoid")
        return {name, 0.0, 1.0, sigmoid_fn,
                [](double x) {
                    const double s = sigmoid_fn(x);
                    return s * (1.0 - s);
                }};
    if (name == "elu")
        return {name, 0.0, 1.0,
                [](double x) { return x > 0.0 ? x : std::expm1(x); },
                [](double x) { return x > 0.0 ? 1.0 : std::exp(x); }};
    if (name == "hardtanh")
        return {name, 0.0, 1.0,
                [](double x) { return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x); },
                [](double x) { return (x > -1.0 && x < 1.0) ? 1.0 : 0.0; }};
    if (name == "softplus")
        return {name, 0.0, 1.0, softplus_fn, sigmoid_fn};
    if (name == "hardsigmoid")
        return {name, 0.0, 1.0 / 6.0,
                [](double x) { return x <= -3.0 ? 0.0 : (x >= 3.0 ? 1.0 : x / 6.0 + 0.5); },
                [](double x) { return (x > -3.0 && x < 3.0) ? 1.0 / 6.0 : 0.0; }};
    if (name == "selu")
        return {name, 0.0, kSeluScale * kSeluAlpha,
                [](double x) {
                    return kSeluScale * (x > 0.0 ? x : kSeluAlpha * std::expm1(x));
                },
                [](double x) {
                    return kSeluScale * (x > 0.0 ? 1.0 : kSeluAlpha * std::exp(x));
                }};
    if (name == "hardshrink" || name == "rrelu")
        throw UnsupportedActivation(name + ": slope constants are not finite");
    throw UnsupportedActivation("unknown activation '" + name + "'");
}

std::vector<std::string> builtin_activation_names() {
    return {"relu",     "leaky_relu", "tanh",        "sigmoid", "elu",
            "hardtanh", "softplus",   "hardsigmoid", "selu"};
}

Matrix apply_vec(const ActivationSpec& spec, const Matrix& v) {
    Matrix out(v.rows(), v.cols());
    for (size_t i = 0; i < v.size(); ++i) out.data()[i] = spec.apply(v.data()[i]);
    return out;
}

} // namespace ldlt
