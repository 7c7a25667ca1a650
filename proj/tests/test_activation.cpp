#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "ldlt/activation.hpp"

using namespace ldlt;

TEST_CASE("builtin slope constants") {
    struct Row {
        const char* name;
        double m, L;
    };
    const Row rows[] = {
        {"relu", 0.0, 1.0},
        {"leaky_relu", 0.01, 1.0},
        {"tanh", 0.0, 1.0},
        {"sigmoid", 0.0, 1.0},
        {"elu", 0.0, 1.0},
        {"hardtanh", 0.0, 1.0},
        {"softplus", 0.0, 1.0},
        {"hardsigmoid", 0.0, 1.0 / 6.0},
    };
    for (const auto& r : rows) {
        const auto s = builtin_activation(r.name);
        CHECK(s.slope_min == doctest::Approx(r.m));
        CHECK(s.slope_max == doctest::Approx(r.L));
    }
    const auto selu = builtin_activation("selu");
    CHECK(selu.slope_min == doctest::Approx(0.0));
    CHECK(selu.slope_max ==
          doctest::Approx(1.0507009873554804934193349852946 * 1.6732632423543772848170429916717)
              .epsilon(1e-12));
}

TEST_CASE("unsupported names throw") {
    CHECK_THROWS_AS(builtin_activation("hardshrink"), UnsupportedActivation);
    CHECK_THROWS_AS(builtin_activation("rrelu"), UnsupportedActivation);
    CHECK_THROWS_AS(builtin_activation("does_not_exist"), UnsupportedActivation);
}

TEST_CASE("pointwise values") {
    const auto relu = builtin_activation("relu");
    CHECK(relu.apply(-1.0) == 0.0);
    CHECK(relu.apply(2.5) == 2.5);
    const auto lrelu = builtin_activation("leaky_relu");
    CHECK(lrelu.apply(-2.0) == doctest::Approx(-0.02));
    const auto ht = builtin_activation("hardtanh");
    CHECK(ht.apply(5.0) == 1.0);
    CHECK(ht.apply(-5.0) == -1.0);
    CHECK(ht.apply(0.3) == doctest::Approx(0.3));
    const auto hs = builtin_activation("hardsigmoid");
    CHECK(hs.apply(10.0) == 1.0);
    CHECK(hs.apply(-10.0) == 0.0);
    CHECK(hs.apply(0.0) == doctest::Approx(0.5));
    const auto sig = builtin_activation("sigmoid");
    CHECK(sig.apply(0.0) == doctest::Approx(0.5));
}

TEST_CASE("apply_vec maps elementwise") {
    const auto relu = builtin_activation("relu");
    const Matrix v{{-1.0, 2.0}, {0.5, -3.0}};
    const Matrix out = apply_vec(relu, v);
    CHECK(out(0, 0) == 0.0);
    CHECK(out(0, 1) == 2.0);
    CHECK(out(1, 0) == 0.5);
    CHECK(out(1, 1) == 0.0);
}

TEST_CASE("chord slopes stay inside [slope_min, slope_max]") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (const auto& name : builtin_activation_names()) {
        const auto s = builtin_activation(name);
        for (int t = 0; t < 10000; ++t) {
            const double x = u(rng);
            double y = u(rng);
            if (std::abs(x - y) < 1e-9) y += 1e-3;
            const double slope = (s.apply(x) - s.apply(y)) / (x - y);
            CHECK(slope >= s.slope_min - 1e-12);
            CHECK(slope <= s.slope_max + 1e-12);
        }
    }
}

TEST_CASE("derivatives match finite differences on smooth activations") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (const char* name : {"tanh", "sigmoid", "softplus", "elu", "selu"}) {
        const auto s = builtin_activation(name);
        for (int t = 0; t < 50; ++t) {
            double x = u(rng);
            if (std::abs(x) < 0.05) x += 0.1; // keep clear of elu/selu kink
            const double h = 1e-6;
            const double fd = (s.apply(x + h) - s.apply(x - h)) / (2.0 * h);
            CHECK(s.deriv(x) == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}
