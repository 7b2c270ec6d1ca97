#pragma once

// Spot checks of the standing coefficient assumptions on sampled points.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stp/model.hpp"
#include "stp/parallel.hpp"

namespace stp {

struct Violation {
    std::string check;
    double t = 0.0;
    Vector x;
    double y = 0.0;
    double control_norm = 0.0;
    double value = 0.0;  // left-hand side (or ratio) that failed
    double bound = 0.0;  // right-hand side it was compared against
};

struct ValidationReport {
    std::size_t samples = 0;
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
};

struct ValidationOptions {
    double lipschitz_slack = 1e-6;
    double fd_step = 1e-5;
};

namespace detail {

inline ControlValue sample_control(const ProblemSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ControlValue u = spec.zero_control();
    for (std::size_t j = 0; j < spec.q; ++j) {
        auto jj = static_cast<Eigen::Index>(j);
        u.u1[jj] = spec.u1_box.lo[jj] + unit(rng) * (spec.u1_box.hi[jj] - spec.u1_box.lo[jj]);
    }
    for (auto& v : u.u2) {
        for (std::size_t j = 0; j < spec.n; ++j) {
            auto jj = static_cast<Eigen::Index>(j);
            v[jj] = spec.u2_box.lo[jj] + unit(rng) * (spec.u2_box.hi[jj] - spec.u2_box.lo[jj]);
        }
    }
    return u;
}

inline Vector sample_box(const Box& box, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector v(box.lo.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = box.lo[j] + unit(rng) * (box.hi[j] - box.lo[j]);
    return v;
}

}  // namespace detail

/// Samples (t, x, y, u) in the configured boxes and checks
///   |mu_X| + |sigma_X| <= L (1 + |x| + ‖u‖),  |mu_Y| + |sigma_Y| <= L (1 + |y| + ‖u‖),
/// finite-difference Lipschitz ratios in z = (x, y) against L (1 + slack), and |g| <= g_bound.
/// Matrix norms are Frobenius. Deterministic given seed.
inline ValidationReport validate_problem(const ProblemSpec& spec, std::size_t n_samples, std::uint64_t seed,
                                         const ValidationOptions& options = {}) {
    if (n_samples < 1) throw ValidationError("validate_problem: n_samples must be >= 1");
    const auto& c = spec.coefficients;
    const double L = c.lipschitz_L;
    ValidationReport report;
    report.samples = n_samples;

    auto record = [&](const std::string& check, double t, const Vector& x, double y, double un, double value,
                      double bound) {
        report.violations.push_back({check, t, x, y, un, value, bound});
    };

    std::mt19937_64 rng = stream_engine(seed, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t s = 0; s < n_samples; ++s) {
        const double t = unit(rng) * spec.horizon;
        const Vector x = detail::sample_box(spec.x_box, rng);
        const double y = detail::sample_box(spec.y_box, rng)[0];
        const ControlValue u = detail::sample_control(spec, rng);
        const double un = control_norm(u, spec.marks);

        const Vector mx = c.mu_x(t, x, u);
        const Matrix sx = c.sigma_x(t, x, u);
        const double my = c.mu_y(t, x, y, u);
        const Vector sy = c.sigma_y(t, x, y, u);
        if (!mx.allFinite() || !sx.allFinite() || !std::isfinite(my) || !sy.allFinite()) {
            record("nonfinite", t, x, y, un, std::nan(""), 0.0);
            continue;
        }

        const double gx = mx.norm() + sx.norm();
        const double bx = L * (1.0 + x.norm() + un);
        if (gx > bx * (1.0 + 1e-12)) record("growth_x", t, x, y, un, gx, bx);
        const double gy = std::abs(my) + sy.norm();
        const double by = L * (1.0 + std::abs(y) + un);
        if (gy > by * (1.0 + 1e-12)) record("growth_y", t, x, y, un, gy, by);

        // Lipschitz in z along a random direction.
        Vector dir(static_cast<Eigen::Index>(spec.d + 1));
        for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = normal(rng);
        dir.normalize();
        const double h = options.fd_step * (1.0 + x.norm() + std::abs(y));
        const Vector dx = h * dir.head(static_cast<Eigen::Index>(spec.d));
        const double dy = h * dir[static_cast<Eigen::Index>(spec.d)];
        const double limit = L * (1.0 + options.lipschitz_slack);

        const Vector x2 = x + dx;
        const double y2 = y + dy;
        if (dx.norm() > 0.0) {
            const double rx = (c.mu_x(t, x2, u) - mx).norm() / dx.norm();
            if (rx > limit) record("lipschitz_mu_x", t, x, y, un, rx, limit);
            const double rs = (c.sigma_x(t, x2, u) - sx).norm() / dx.norm();
            if (rs > limit) record("lipschitz_sigma_x", t, x, y, un, rs, limit);
        }
        const double dz = h;
        const double ry = std::abs(c.mu_y(t, x2, y2, u) - my) / dz;
        if (ry > limit) record("lipschitz_mu_y", t, x, y, un, ry, limit);
        const double rsy = (c.sigma_y(t, x2, y2, u) - sy).norm() / dz;
        if (rsy > limit) record("lipschitz_sigma_y", t, x, y, un, rsy, limit);

        if (spec.g_bound) {
            const double gv = spec.g(x);
            if (!(std::abs(gv) <= *spec.g_bound)) record("g_bound", t, x, y, un, std::abs(gv), *spec.g_bound);
        }
    }
    return report;
}

}  // namespace stp
