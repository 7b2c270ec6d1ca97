#pragma once

// Small builders shared by the test suites.

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "stp/builtins.hpp"
#include "stp/model.hpp"

namespace stp::testing {

inline Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

inline Matrix mat1(double v) { return Matrix::Constant(1, 1, v); }

/// Problem with the given coefficient set; boxes default to [-1, 1].
inline ProblemSpec make_spec(const builtins::CoefficientSet& set, MarkSpace marks, std::size_t d, std::size_t q,
                             std::size_t n, double T, std::function<double(const Vector&)> g, double L = 1.0,
                             std::optional<double> C = std::nullopt) {
    ProblemSpec spec;
    spec.d = d;
    spec.q = q;
    spec.n = n;
    spec.marks = std::move(marks);
    spec.horizon = T;
    spec.payoff = std::move(g);
    spec.coefficients = set.make(spec.marks, L, C);
    auto box = [](std::size_t k) {
        return Box{Vector::Constant(static_cast<Eigen::Index>(k), -1.0), Vector::Constant(static_cast<Eigen::Index>(k), 1.0)};
    };
    spec.x_box = box(d);
    spec.y_box = box(1);
    spec.u1_box = box(q);
    spec.u2_box = box(n);
    return spec;
}

inline builtins::CoefficientSet zero_set(std::size_t d, std::size_t q, std::size_t n, std::size_t I) {
    return builtins::CoefficientSet::zero(d, q, n, I);
}

inline MarkSpace one_mark(double weight, double point = 1.0) { return MarkSpace({point}, {{weight}}); }

inline ControlGrid grid_of(std::vector<ControlValue> values) {
    ControlGrid g;
    g.values = std::move(values);
    return g;
}

inline ControlValue control(Vector u1, std::vector<Vector> u2 = {}) { return ControlValue{std::move(u1), std::move(u2)}; }

/// d = 1, I = 1, one mark of weight 0.5: dX = 0.1 dt + 0.3 dW + 0.5 dN,
/// dY = 0.5 Y dt + 0.3 u1 dW + u2(e) dN, g = tanh, L = C = 0.5, u0 = (0, 0).
inline ProblemSpec perron_model() {
    auto set = zero_set(1, 1, 1, 1);
    set.mu_x.c = vec({0.1});
    set.sigma_x.c = mat1(0.3);
    set.beta.c = mat1(0.5);
    set.mu_y.y_coef = 0.5;
    set.sigma_y.u1_coef = mat1(0.3);
    set.b.u2_coef = mat1(1.0);
    auto spec = make_spec(set, one_mark(0.5), 1, 1, 1, 1.0, [](const Vector& x) { return std::tanh(x[0]); }, 0.5, 0.5);
    spec.g_bound = 1.0;
    spec.neutral_control = control(vec({0.0}), {vec({0.0})});
    return spec;
}

}  // namespace stp::testing
