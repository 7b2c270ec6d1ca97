#pragma once

// Problem description for controlled jump-diffusion target problems:
// mark space, control values and grids, coefficient evaluators.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stp/errors.hpp"

namespace stp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Axis-aligned box [lo, hi] in R^k.
struct Box {
    Vector lo;
    Vector hi;

    std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
    bool contains(const Vector& v, double slack = 0.0) const {
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            if (v[i] < lo[i] - slack || v[i] > hi[i] + slack) return false;
        }
        return true;
    }
};

/// Finite mark space E with per-process weights m_i(e).
class MarkSpace {
public:
    MarkSpace() = default;

    /// weights[i][k] is m_i at points[k]. Every weight must be strictly positive.
    MarkSpace(std::vector<double> points, std::vector<std::vector<double>> weights)
        : points_(std::move(points)), weights_(std::move(weights)) {
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            if (weights_[i].size() != points_.size()) {
                throw ValidationError("mark space: process " + std::to_string(i + 1) +
                                      " has " + std::to_string(weights_[i].size()) +
                                      " weights for " + std::to_string(points_.size()) + " marks");
            }
            for (double w : weights_[i]) {
                if (!(w > 0.0) || !std::isfinite(w)) {
                    throw ValidationError("mark space: weights must be finite and > 0 (support condition)");
                }
            }
        }
        if (!weights_.empty() && points_.empty()) {
            throw ValidationError("mark space: processes declared without marks");
        }
    }

    std::size_t num_marks() const { return points_.size(); }
    std::size_t num_processes() const { return weights_.size(); }
    double point(std::size_t k) const { return points_[k]; }
    const std::vector<double>& points() const { return points_; }
    double weight(std::size_t i, std::size_t k) const { return weights_[i][k]; }

    /// m_i(E)
    double process_mass(std::size_t i) const {
        double s = 0.0;
        for (double w : weights_[i]) s += w;
        return s;
    }

    /// m̂(E) = Σ_i m_i(E)
    double total_mass() const {
        double s = 0.0;
        for (std::size_t i = 0; i < weights_.size(); ++i) s += process_mass(i);
        return s;
    }

    /// m̂({e_k}) = Σ_i m_i(e_k)
    double combined_weight(std::size_t k) const {
        double s = 0.0;
        for (const auto& w : weights_) s += w[k];
        return s;
    }

private:
    std::vector<double> points_;
    std::vector<std::vector<double>> weights_;
};

/// A point u = (u1, u2) of U1 x L^2(E); u2 holds one vector per mark, in mark order.
struct ControlValue {
    Vector u1;
    std::vector<Vector> u2;

    bool operator==(const ControlValue& other) const {
        if (u1.size() != other.u1.size() || u2.size() != other.u2.size()) return false;
        if (u1 != other.u1) return false;
        for (std::size_t k = 0; k < u2.size(); ++k) {
            if (u2[k].size() != other.u2[k].size() || u2[k] != other.u2[k]) return false;
        }
        return true;
    }

    /// u2 at mark k, or an empty vector when the control carries no mark component.
    const Vector& at_mark(std::size_t k) const {
        static const Vector empty;
        return u2.empty() ? empty : u2[k];
    }
};

/// ‖u‖_U = |u1| + (Σ_i Σ_e |u2(e)|² m_i(e))^{1/2}
inline double control_norm(const ControlValue& u, const MarkSpace& marks) {
    if (u.u2.size() != marks.num_marks()) {
        throw std::domain_error("control_norm: u2 defined on " + std::to_string(u.u2.size()) +
                                " marks, mark space has " + std::to_string(marks.num_marks()));
    }
    double mass = 0.0;
    for (std::size_t k = 0; k < u.u2.size(); ++k) {
        mass += u.u2[k].squaredNorm() * marks.combined_weight(k);
    }
    return u.u1.norm() + std::sqrt(mass);
}

/// Finite surrogate for the control set U.
struct ControlGrid {
    std::vector<ControlValue> values;
    double truncation_radius = 0.0;

    std::size_t size() const { return values.size(); }
    const ControlValue& operator[](std::size_t i) const { return values[i]; }

    std::optional<std::size_t> find(const ControlValue& u) const {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] == u) return i;
        }
        return std::nullopt;
    }
};

/// Coefficient evaluators of the controlled pair (X, Y).
///
/// beta returns a d x I matrix (column i is the jump of X when process i fires),
/// b returns an I-vector. Both see u(e) = (u1, u2(e)) and the mark value e.
struct Coefficients {
    using DriftX = std::function<Vector(double t, const Vector& x, const ControlValue& u)>;
    using DiffusionX = std::function<Matrix(double t, const Vector& x, const ControlValue& u)>;
    using JumpX = std::function<Matrix(double t, const Vector& x, const Vector& u1, const Vector& u2e, double e)>;
    using DriftY = std::function<double(double t, const Vector& x, double y, const ControlValue& u)>;
    using DiffusionY = std::function<Vector(double t, const Vector& x, double y, const ControlValue& u)>;
    using JumpY = std::function<Vector(double t, const Vector& x, double y, const Vector& u1, const Vector& u2e,
                                       double e)>;

    DriftX mu_x;
    DiffusionX sigma_x;
    JumpX beta;
    DriftY mu_y;
    DiffusionY sigma_y;
    JumpY b;

    double lipschitz_L = 0.0;
    std::optional<double> growth_C;
    /// True when mu_y, sigma_y and b are affine in y; enables closed-form solves.
    bool y_affine = true;
};

/// Full description of a target problem instance.
struct ProblemSpec {
    std::size_t d = 1;  // state dimension (and Brownian dimension)
    std::size_t q = 0;  // dimension of u1
    std::size_t n = 0;  // dimension of u2(e)
    Coefficients coefficients;
    MarkSpace marks;
    double horizon = 1.0;
    std::function<double(const Vector& x)> payoff;
    std::optional<double> g_bound;

    Box x_box;   // sampling / domain box for x
    Box y_box;   // sampling box for y (1-dim)
    Box u1_box;  // U1 (box constraint)
    Box u2_box;  // lattice range for each u2(e) component
    std::optional<ControlValue> neutral_control;

    std::size_t num_processes() const { return marks.num_processes(); }

    double g(const Vector& x) const { return payoff(x); }

    void check_invariants() const {
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("problem: horizon T must be > 0");
        if (d == 0) throw ValidationError("problem: d must be >= 1");
        if (!payoff) throw ValidationError("problem: payoff g is not set");
        if (!coefficients.mu_x || !coefficients.sigma_x || !coefficients.beta || !coefficients.mu_y ||
            !coefficients.sigma_y || !coefficients.b) {
            throw ValidationError("problem: coefficient evaluator missing");
        }
        if (x_box.dim() != d) throw ValidationError("problem: x box dimension differs from d");
        if (u1_box.dim() != q) throw ValidationError("problem: u1 box dimension differs from q");
        if (u2_box.dim() != n) throw ValidationError("problem: u2 box dimension differs from n");
        if (coefficients.lipschitz_L < 0.0) throw ValidationError("problem: Lipschitz constant L must be >= 0");
    }

    /// A control with u1 = 0 and u2 ≡ 0.
    ControlValue zero_control() const {
        ControlValue u;
        u.u1 = Vector::Zero(static_cast<Eigen::Index>(q));
        u.u2.assign(marks.num_marks(), Vector::Zero(static_cast<Eigen::Index>(n)));
        return u;
    }
};

namespace detail {

inline std::vector<double> lattice_1d(double lo, double hi, std::size_t points) {
    std::vector<double> out;
    if (points <= 1 || lo == hi) {
        out.push_back(lo <= 0.0 && 0.0 <= hi ? 0.0 : 0.5 * (lo + hi));
        return out;
    }
    for (std::size_t k = 0; k < points; ++k) {
        out.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1));
    }
    return out;
}

}  // namespace detail

/// Uniform lattice over the U1 box and, for every mark, over the u2 box.
///
/// The grid is the product of all coordinate lattices, so its size is
/// u1_points^q * u2_points^(n * |E|). A single point per axis is placed at 0
/// when the axis range contains 0, otherwise at the midpoint.
inline ControlGrid make_lattice_grid(const ProblemSpec& spec, std::size_t u1_points, std::size_t u2_points,
                                     std::size_t max_size = 200000) {
    const std::size_t marks = spec.marks.num_marks();
    std::vector<std::vector<double>> axes;
    for (std::size_t j = 0; j < spec.q; ++j) {
        axes.push_back(detail::lattice_1d(spec.u1_box.lo[j], spec.u1_box.hi[j], u1_points));
    }
    for (std::size_t k = 0; k < marks; ++k) {
        for (std::size_t j = 0; j < spec.n; ++j) {
            axes.push_back(detail::lattice_1d(spec.u2_box.lo[j], spec.u2_box.hi[j], u2_points));
        }
    }
    double total = 1.0;
    for (const auto& a : axes) total *= static_cast<double>(a.size());
    if (total > static_cast<double>(max_size)) {
        throw ValidationError("control grid: " + std::to_string(static_cast<long long>(total)) +
                              " points exceeds budget " + std::to_string(max_size));
    }

    ControlGrid grid;
    std::vector<std::size_t> idx(axes.size(), 0);
    const auto count = static_cast<std::size_t>(total);
    for (std::size_t flat = 0; flat < count; ++flat) {
        ControlValue u = spec.zero_control();
        std::size_t a = 0;
        for (std::size_t j = 0; j < spec.q; ++j, ++a) u.u1[static_cast<Eigen::Index>(j)] = axes[a][idx[a]];
        for (std::size_t k = 0; k < marks; ++k) {
            for (std::size_t j = 0; j < spec.n; ++j, ++a) u.u2[k][static_cast<Eigen::Index>(j)] = axes[a][idx[a]];
        }
        grid.truncation_radius = std::max(grid.truncation_radius, control_norm(u, spec.marks));
        grid.values.push_back(std::move(u));
        for (std::size_t p = axes.size(); p-- > 0;) {
            if (++idx[p] < axes[p].size()) break;
            idx[p] = 0;
        }
    }
    return grid;
}

/// Controls of `grid` with ‖u‖ <= radius (the truncation U^R of the control set).
inline ControlGrid truncate_grid(const ControlGrid& grid, double radius, const MarkSpace& marks) {
    ControlGrid out;
    out.truncation_radius = radius;
    for (const auto& u : grid.values) {
        if (control_norm(u, marks) <= radius) out.values.push_back(u);
    }
    if (out.values.empty()) throw ValidationError("control grid: no control within radius " + std::to_string(radius));
    return out;
}

/// Checks the ControlGrid invariants against a problem: nonempty, box-feasible, distinct.
inline void check_grid(const ControlGrid& grid, const ProblemSpec& spec) {
    if (grid.values.empty()) throw ValidationError("control grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& u = grid[i];
        if (static_cast<std::size_t>(u.u1.size()) != spec.q) {
            throw ValidationError("control grid: entry " + std::to_string(i) + " has wrong u1 dimension");
        }
        if (!spec.u1_box.contains(u.u1, 1e-12)) {
            throw ValidationError("control grid: entry " + std::to_string(i) + " violates the U1 box");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (grid[j] == u) throw ValidationError("control grid: duplicate entries " + std::to_string(j) + ", " +
                                                    std::to_string(i));
        }
    }
}

}  // namespace stp
