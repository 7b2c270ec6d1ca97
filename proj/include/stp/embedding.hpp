#pragma once

// Control-to-target embedding. A control problem inf E[g(X_T)] driven by
// controls ν becomes a target problem with controls u = (ν, α, γ):
//   dY = -Σ_i Σ_e m_i(e) γ_i(e) ds + α·dW + Σ_i γ_i(e) λ_i(ds, de),
// i.e. Y = y + ∫ α dW + ∫ γ dλ̃. The (α, γ) part is free, so operators on the
// embedded problem use an EmbeddingSpan: for every base control ν they build
// exactly the (α, γ) a query needs instead of searching a lattice.

#include <cmath>
#include <limits>
#include <variant>

#include "stp/model.hpp"

namespace stp {

/// Where the pieces of an embedded control live inside ControlValue.
struct EmbeddingLayout {
    std::size_t base_q = 0;  // dims of ν.u1
    std::size_t base_n = 0;  // dims of ν.u2(e)
    std::size_t d = 1;
    std::size_t processes = 0;
    std::size_t marks = 0;

    ControlValue make(const ControlValue& nu, const Vector& alpha, const std::vector<Vector>& gamma) const {
        ControlValue u;
        u.u1.resize(static_cast<Eigen::Index>(base_q + d));
        u.u1 << nu.u1, alpha;
        u.u2.resize(marks);
        for (std::size_t k = 0; k < marks; ++k) {
            u.u2[k].resize(static_cast<Eigen::Index>(base_n + processes));
            if (base_n > 0) u.u2[k].head(static_cast<Eigen::Index>(base_n)) = nu.u2[k];
            if (processes > 0) u.u2[k].tail(static_cast<Eigen::Index>(processes)) = gamma[k];
        }
        return u;
    }

    ControlValue nu(const ControlValue& u) const {
        ControlValue out;
        out.u1 = u.u1.head(static_cast<Eigen::Index>(base_q));
        out.u2.reserve(u.u2.size());
        for (const auto& v : u.u2) out.u2.push_back(v.head(static_cast<Eigen::Index>(base_n)));
        return out;
    }
    Vector nu_u2(const Vector& u2e) const { return u2e.head(static_cast<Eigen::Index>(base_n)); }
    Vector alpha(const ControlValue& u) const { return u.u1.tail(static_cast<Eigen::Index>(d)); }
    Vector gamma(const Vector& u2e) const { return u2e.tail(static_cast<Eigen::Index>(processes)); }
};

struct EmbeddedProblem {
    ProblemSpec spec;
    EmbeddingLayout layout;
};

/// Builds the target problem whose value equals the control problem's value.
/// alpha_bound/gamma_bound only size the boxes used for sampling and lattices;
/// (α, γ) are unconstrained in the construction itself.
inline EmbeddedProblem embed_control_problem(const ProblemSpec& control, double alpha_bound = 10.0,
                                             double gamma_bound = 10.0) {
    control.check_invariants();
    EmbeddingLayout layout{control.q, control.n, control.d, control.num_processes(), control.marks.num_marks()};
    EmbeddedProblem out{control, layout};
    ProblemSpec& spec = out.spec;
    spec.q = control.q + control.d;
    spec.n = control.n + layout.processes;

    const Coefficients base = control.coefficients;
    const MarkSpace marks = control.marks;
    auto& c = spec.coefficients;
    c.mu_x = [base, layout](double t, const Vector& x, const ControlValue& u) { return base.mu_x(t, x, layout.nu(u)); };
    c.sigma_x = [base, layout](double t, const Vector& x, const ControlValue& u) {
        return base.sigma_x(t, x, layout.nu(u));
    };
    c.beta = [base, layout](double t, const Vector& x, const Vector& u1, const Vector& u2e, double e) {
        return base.beta(t, x, u1.head(static_cast<Eigen::Index>(layout.base_q)), layout.nu_u2(u2e), e);
    };
    c.mu_y = [layout, marks](double, const Vector&, double, const ControlValue& u) {
        double s = 0.0;
        for (std::size_t k = 0; k < layout.marks; ++k) {
            const Vector g = layout.gamma(u.u2[k]);
            for (std::size_t i = 0; i < layout.processes; ++i) s += marks.weight(i, k) * g[static_cast<Eigen::Index>(i)];
        }
        return -s;
    };
    c.sigma_y = [layout](double, const Vector&, double, const ControlValue& u) { return layout.alpha(u); };
    c.b = [layout](double, const Vector&, double, const Vector&, const Vector& u2e, double) {
        return layout.gamma(u2e);
    };
    c.y_affine = true;
    c.lipschitz_L = std::max({control.coefficients.lipschitz_L, 1.0, std::sqrt(marks.total_mass())});
    c.growth_C = std::sqrt(marks.total_mass());

    auto extend = [](const Box& box, std::size_t extra, double bound) {
        Box b{Vector(box.lo.size() + static_cast<Eigen::Index>(extra)), Vector(box.hi.size() + static_cast<Eigen::Index>(extra))};
        b.lo << box.lo, Vector::Constant(static_cast<Eigen::Index>(extra), -bound);
        b.hi << box.hi, Vector::Constant(static_cast<Eigen::Index>(extra), bound);
        return b;
    };
    spec.u1_box = extend(control.u1_box, control.d, alpha_bound);
    spec.u2_box = extend(control.u2_box, layout.processes, gamma_bound);
    if (control.neutral_control) {
        spec.neutral_control = layout.make(*control.neutral_control, Vector::Zero(static_cast<Eigen::Index>(control.d)),
                                           std::vector<Vector>(layout.marks, Vector::Zero(static_cast<Eigen::Index>(layout.processes))));
    }
    spec.check_invariants();
    return out;
}

/// The free (α, γ) control family of an embedded problem, indexed by base controls ν.
struct EmbeddingSpan {
    EmbeddingLayout layout;
    ControlGrid base;  // controls ν of the original problem
};

/// Either an explicit grid or the exact embedding span.
using ControlSet = std::variant<ControlGrid, EmbeddingSpan>;

namespace detail {

/// Smallest double v with v - increment >= target, matching how J_i = b_i - (φ(x+β_i) - φ(x))
/// is evaluated by the operators.
inline double nudge_jump(double target, double increment) {
    double v = target + increment;
    while (v - increment < target) v = std::nextafter(v, std::numeric_limits<double>::infinity());
    return v;
}

}  // namespace detail

}  // namespace stp
