#pragma once

// Explicit monotone finite-difference solver, backward in time on a box.
//
// Control form:  V(t) = V(t+Δt) + Δt min_u 𝓛_h^u V(t+Δt)
// Target form:   V(t) = V(t+Δt) - Δt max_{u admissible} F_h^u
// followed by the projection V <- max(V, floor_G). 𝓛_h uses upwind first
// differences chosen by the sign of μ_X, central second differences with
// Kushner's cross stencil, and the jump sum Σ_i Σ_e m_i(e)(V(x+β_i) - V(x))
// with V(x+β_i) from multilinear interpolation clamped to the box.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stp/csv.hpp"
#include "stp/embedding.hpp"
#include "stp/model.hpp"
#include "stp/operators.hpp"
#include "stp/parallel.hpp"

namespace stp {

enum class BoundaryMode { clamp, linear_extrapolate };

struct CflCertificate {
    double max_dt = kInf;  // largest Δt keeping every centre weight >= 0
    double dt = 0.0;
    bool passed = false;
    bool diagonally_dominant = true;  // second-difference stencil monotone
    double sup_rate = 0.0;
};

class SpaceTimeGrid {
public:
    SpaceTimeGrid(Box domain, std::vector<std::size_t> nodes, std::size_t time_steps, double horizon,
                  BoundaryMode boundary = BoundaryMode::clamp)
        : domain_(std::move(domain)), nodes_(std::move(nodes)), steps_(time_steps), horizon_(horizon),
          boundary_(boundary) {
        if (nodes_.size() != domain_.dim() || nodes_.empty()) throw ValidationError("grid: node counts differ from box dimension");
        if (steps_ < 1 || !(horizon_ > 0.0)) throw ValidationError("grid: need >= 1 time step and T > 0");
        stride_.assign(nodes_.size(), 1);
        total_ = 1;
        for (std::size_t j = 0; j < nodes_.size(); ++j) {
            if (nodes_[j] < 2) throw ValidationError("grid: need >= 2 nodes per dimension");
            const auto jj = static_cast<Eigen::Index>(j);
            if (!(domain_.hi[jj] > domain_.lo[jj])) throw ValidationError("grid: empty box side");
            stride_[j] = total_;
            total_ *= nodes_[j];
        }
    }

    std::size_t dim() const { return nodes_.size(); }
    std::size_t num_nodes() const { return total_; }
    std::size_t nodes(std::size_t j) const { return nodes_[j]; }
    std::size_t time_steps() const { return steps_; }
    double horizon() const { return horizon_; }
    double dt() const { return horizon_ / static_cast<double>(steps_); }
    double time(std::size_t k) const { return k == steps_ ? horizon_ : static_cast<double>(k) * dt(); }
    double h(std::size_t j) const {
        const auto jj = static_cast<Eigen::Index>(j);
        return (domain_.hi[jj] - domain_.lo[jj]) / static_cast<double>(nodes_[j] - 1);
    }
    const Box& domain() const { return domain_; }
    BoundaryMode boundary() const { return boundary_; }
    std::size_t stride(std::size_t j) const { return stride_[j]; }

    std::size_t index_along(std::size_t node, std::size_t j) const { return (node / stride_[j]) % nodes_[j]; }

    Vector point(std::size_t node) const {
        Vector x(static_cast<Eigen::Index>(dim()));
        for (std::size_t j = 0; j < dim(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            x[jj] = domain_.lo[jj] + h(j) * static_cast<double>(index_along(node, j));
        }
        return x;
    }

    /// Neighbour of `node` offset by `step` (-1, 0, +1) along j; nullopt outside the box.
    std::optional<std::size_t> neighbour(std::size_t node, std::size_t j, int step) const {
        const auto i = static_cast<long long>(index_along(node, j)) + step;
        if (i < 0 || i >= static_cast<long long>(nodes_[j])) return std::nullopt;
        return node + static_cast<std::size_t>(static_cast<long long>(stride_[j]) * step);
    }

    /// Multilinear interpolation of a slice. Outside the box: clamp to the box, or
    /// extend the boundary cell linearly.
    double interpolate(const std::vector<double>& slice, const Vector& x) const {
        const std::size_t d = dim();
        std::vector<std::size_t> base(d);
        std::vector<double> w(d);
        for (std::size_t j = 0; j < d; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            double s = (x[jj] - domain_.lo[jj]) / h(j);
            const double top = static_cast<double>(nodes_[j] - 1);
            if (boundary_ == BoundaryMode::clamp) s = std::clamp(s, 0.0, top);
            double cell = std::floor(s);
            cell = std::clamp(cell, 0.0, top - 1.0);
            base[j] = static_cast<std::size_t>(cell);
            w[j] = s - cell;
        }
        double v = 0.0;
        for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
            double weight = 1.0;
            std::size_t node = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const bool up = (corner >> j) & 1U;
                weight *= up ? w[j] : 1.0 - w[j];
                node += (base[j] + (up ? 1 : 0)) * stride_[j];
            }
            if (weight != 0.0) v += weight * slice[node];
        }
        return v;
    }

    std::optional<CflCertificate> cfl;

private:
    Box domain_;
    std::vector<std::size_t> nodes_;
    std::vector<std::size_t> stride_;
    std::size_t total_ = 1;
    std::size_t steps_;
    double horizon_;
    BoundaryMode boundary_;
};

/// Value samples per time slice; slices[k] holds t_k = k Δt, slices.back() is t = T.
struct ValueField {
    std::vector<std::vector<double>> slices;

    const std::vector<double>& at(std::size_t k) const { return slices[k]; }
    double value(const SpaceTimeGrid& grid, std::size_t k, const Vector& x) const { return grid.interpolate(slices[k], x); }
};

/// Constraint operator G of max{-∂_tφ + Hφ, Gφ} = 0. Built-ins (illustrative):
///   inactive        G ≡ -1
///   value_shift     G = φ - g - c
///   obstacle        G = g + c - φ          (projection floor g + c)
///   gradient_bound  G = |Dφ|_∞ - K        (projection floor: face-lift by K h)
/// The implication flags (a) H < ∞ ⇒ G <= 0 and (b) G < 0 ⇒ H < ∞ are taken from
/// configuration and never verified.
struct GOperator {
    enum class Kind { inactive, value_shift, obstacle, gradient_bound };
    Kind kind = Kind::inactive;
    double c = 1.0;
    double K = 1.0;
    bool flag_a = true;
    bool flag_b = true;

    static GOperator inactive() { return {}; }
    static GOperator value_shift(double c) { return {Kind::value_shift, c, 1.0}; }
    static GOperator obstacle(double c) { return {Kind::obstacle, c, 1.0}; }
    static GOperator gradient_bound(double K) { return {Kind::gradient_bound, 0.0, K}; }

    std::string name() const {
        switch (kind) {
            case Kind::inactive: return "inactive";
            case Kind::value_shift: return "value_shift";
            case Kind::obstacle: return "obstacle";
            case Kind::gradient_bound: return "gradient_bound";
        }
        return "?";
    }

    double evaluate(const Vector& p, double phi, double g) const {
        switch (kind) {
            case Kind::inactive: return -1.0;
            case Kind::value_shift: return phi - g - c;
            case Kind::obstacle: return g + c - phi;
            case Kind::gradient_bound: return p.cwiseAbs().maxCoeff() - K;
        }
        return -1.0;
    }
};

namespace detail {

/// Central (one-sided at the box edge) gradient of a slice at a node.
inline Vector slice_gradient(const SpaceTimeGrid& grid, const std::vector<double>& v, std::size_t node) {
    Vector p(static_cast<Eigen::Index>(grid.dim()));
    for (std::size_t j = 0; j < grid.dim(); ++j) {
        const auto up = grid.neighbour(node, j, 1), down = grid.neighbour(node, j, -1);
        const double hi = up ? v[*up] : v[node], lo = down ? v[*down] : v[node];
        const double span = (up ? 1.0 : 0.0) + (down ? 1.0 : 0.0);
        p[static_cast<Eigen::Index>(j)] = (hi - lo) / (span * grid.h(j));
    }
    return p;
}

/// Value at a neighbour; outside the box, clamp repeats the node, extrapolation reflects linearly.
inline double neighbour_value(const SpaceTimeGrid& grid, const std::vector<double>& v, std::size_t node, std::size_t j,
                              int step) {
    if (auto nb = grid.neighbour(node, j, step)) return v[*nb];
    if (grid.boundary() == BoundaryMode::clamp) return v[node];
    auto opposite = grid.neighbour(node, j, -step);
    return opposite ? 2.0 * v[node] - v[*opposite] : v[node];
}

inline double neighbour_value2(const SpaceTimeGrid& grid, const std::vector<double>& v, std::size_t node,
                               std::size_t j, int sj, std::size_t k, int sk) {
    auto first = grid.neighbour(node, j, sj);
    if (!first) return neighbour_value(grid, v, node, k, sk);
    return neighbour_value(grid, v, *first, k, sk);
}


/// Drift term μ·D_h V (upwind) and diffusion term Σ a_jk D²_h V.
inline double drift_diffusion(const SpaceTimeGrid& grid, const std::vector<double>& v, std::size_t node,
                              const Vector& mu, const Matrix& a) {
    const std::size_t d = grid.dim();
    const double v0 = v[node];
    double out = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double h = grid.h(j);
        if (mu[jj] > 0.0) out += mu[jj] * (neighbour_value(grid, v, node, j, 1) - v0) / h;
        else if (mu[jj] < 0.0) out += mu[jj] * (v0 - neighbour_value(grid, v, node, j, -1)) / h;
        if (a(jj, jj) != 0.0) {
            out += a(jj, jj) * (neighbour_value(grid, v, node, j, 1) - 2.0 * v0 + neighbour_value(grid, v, node, j, -1)) / (h * h);
        }
        for (std::size_t k = j + 1; k < d; ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            const double ajk = a(jj, kk);
            if (ajk == 0.0) continue;
            const double hjk = h * grid.h(k);
            const double vj_p = neighbour_value(grid, v, node, j, 1), vj_m = neighbour_value(grid, v, node, j, -1);
            const double vk_p = neighbour_value(grid, v, node, k, 1), vk_m = neighbour_value(grid, v, node, k, -1);
            double cross;
            if (ajk > 0.0) {
                cross = 2.0 * v0 + neighbour_value2(grid, v, node, j, 1, k, 1) + neighbour_value2(grid, v, node, j, -1, k, -1) -
                        vj_p - vj_m - vk_p - vk_m;
            } else {
                cross = -2.0 * v0 - neighbour_value2(grid, v, node, j, 1, k, -1) - neighbour_value2(grid, v, node, j, -1, k, 1) +
                        vj_p + vj_m + vk_p + vk_m;
            }
            // 2 a_jk ∂_jk V with ∂_jk V ≈ cross / (2 h_j h_k)
            out += ajk * cross / hjk;
        }
    }
    return out;
}

/// Σ_i Σ_e m_i(e) (V(x + β_i) - V(x)) on a slice.
inline double jump_sum(const SpaceTimeGrid& grid, const std::vector<double>& v, std::size_t node, const Vector& x,
                       double t, const ControlValue& u, const ProblemSpec& spec) {
    double total = 0.0;
    for (std::size_t k = 0; k < spec.marks.num_marks(); ++k) {
        const Matrix beta = spec.coefficients.beta(t, x, u.u1, u.at_mark(k), spec.marks.point(k));
        for (std::size_t i = 0; i < spec.num_processes(); ++i) {
            const Vector shift = beta.col(static_cast<Eigen::Index>(i));
            const double shifted = shift.isZero(0.0) ? v[node] : grid.interpolate(v, x + shift);
            total += spec.marks.weight(i, k) * (shifted - v[node]);
        }
    }
    return total;
}

inline std::vector<ControlValue> base_controls(const ControlSet& controls) {
    if (const auto* g = std::get_if<ControlGrid>(&controls)) return g->values;
    return std::get<EmbeddingSpan>(controls).base.values;
}

}  // namespace detail

/// Largest stable Δt: 1 / sup over nodes and controls of
///   Σ_j |μ_j|/h_j + Σ_j 2a_jj/h_j² - Σ_{j<k} 2|a_jk|/(h_j h_k) + m̂(E),  a = ½ σ_X σ_X^T,
/// which is the centre-weight condition of the scheme. Also records whether the
/// second-difference stencil is diagonally dominant (needed for monotonicity when d > 1).
inline CflCertificate cfl_check(const ProblemSpec& spec, const SpaceTimeGrid& grid, const ControlSet& controls) {
    const auto us = detail::base_controls(controls);
    if (us.empty()) throw ValidationError("cfl_check: control set is empty");
    const std::size_t d = grid.dim();
    CflCertificate cert;
    cert.dt = grid.dt();
    const double mass = spec.marks.total_mass();
    // embedded problems evaluate X-coefficients on the ν part only
    const auto* span = std::get_if<EmbeddingSpan>(&controls);
    for (std::size_t node = 0; node < grid.num_nodes(); ++node) {
        const Vector x = grid.point(node);
        for (std::size_t kt : {std::size_t{0}, grid.time_steps() - 1}) {
            const double t = grid.time(kt);
            for (const auto& nu : us) {
                const ControlValue u = span ? span->layout.make(nu, Vector::Zero(static_cast<Eigen::Index>(span->layout.d)),
                                                                std::vector<Vector>(span->layout.marks, Vector::Zero(static_cast<Eigen::Index>(span->layout.processes))))
                                            : nu;
                const Vector mu = spec.coefficients.mu_x(t, x, u);
                const Matrix sx = spec.coefficients.sigma_x(t, x, u);
                const Matrix a = 0.5 * sx * sx.transpose();
                double rate = mass;
                for (std::size_t j = 0; j < d; ++j) {
                    const auto jj = static_cast<Eigen::Index>(j);
                    const double h = grid.h(j);
                    rate += std::abs(mu[jj]) / h + 2.0 * a(jj, jj) / (h * h);
                    double off = 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                        if (k == j) continue;
                        const auto kk = static_cast<Eigen::Index>(k);
                        off += std::abs(a(jj, kk)) / (h * grid.h(k));
                        if (k > j) rate -= 2.0 * std::abs(a(jj, kk)) / (h * grid.h(k));
                    }
                    if (a(jj, jj) / (h * h) < off * (1.0 - 1e-12)) cert.diagonally_dominant = false;
                }
                cert.sup_rate = std::max(cert.sup_rate, rate);
            }
        }
    }
    cert.max_dt = cert.sup_rate > 0.0 ? 1.0 / cert.sup_rate : kInf;
    cert.passed = cert.dt <= cert.max_dt * (1.0 + 1e-12) && cert.diagonally_dominant;
    return cert;
}

struct TerminalParams {
    double omega = 0.5;
    double tol = 1e-10;
    std::size_t max_iter = 10000;
    bool delta_infinite = true;   // embedding case: the δ term drops out
    DeltaSearch delta_search;     // used when delta_infinite is false
    std::size_t workers = 1;
};

/// Residual min{max{φ - g, Gφ}, δφ} of the terminal-layer equation at every node.
inline std::vector<double> terminal_residual(const ProblemSpec& spec, const GOperator& G, const SpaceTimeGrid& grid,
                                             const std::vector<double>& phi, const ControlSet* controls,
                                             const TerminalParams& params) {
    std::vector<double> r(grid.num_nodes());
    const double T = spec.horizon;
    parallel_for(grid.num_nodes(), params.workers, [&](std::size_t node) {
        const Vector x = grid.point(node);
        const Vector p = detail::slice_gradient(grid, phi, node);
        const double gx = spec.g(x);
        double res = std::max(phi[node] - gx, G.evaluate(p, phi[node], gx));
        if (!params.delta_infinite) {
            auto field = [&](double, const Vector& z) { return grid.interpolate(phi, z); };
            const double delta = delta_gap(T, x, phi[node], p, field, params.delta_search, *controls, spec).value;
            res = std::min(res, delta);
        }
        r[node] = res;
    });
    return r;
}

struct TerminalResult {
    std::vector<double> values;
    std::size_t iterations = 0;
    double residual = 0.0;
};

/// Solves the terminal-layer equation by φ <- φ - ω · residual from φ = g.
/// With δ = ∞ and G ≡ -1 the start φ = g is already exact and is returned untouched.
inline TerminalResult solve_terminal(const ProblemSpec& spec, const GOperator& G, const SpaceTimeGrid& grid,
                                     const TerminalParams& params, const ControlSet* controls = nullptr) {
    if (!params.delta_infinite && controls == nullptr) {
        throw ValidationError("solve_terminal: a control set is needed to evaluate δ");
    }
    if (!(params.omega > 0.0)) throw ValidationError("solve_terminal: omega must be > 0");
    TerminalResult out;
    out.values.resize(grid.num_nodes());
    for (std::size_t node = 0; node < grid.num_nodes(); ++node) out.values[node] = spec.g(grid.point(node));
    for (out.iterations = 0;; ++out.iterations) {
        const auto r = terminal_residual(spec, G, grid, out.values, controls, params);
        out.residual = 0.0;
        for (double v : r) out.residual = std::max(out.residual, std::abs(v));
        if (out.residual <= params.tol) return out;
        if (out.iterations >= params.max_iter || !std::isfinite(out.residual)) {
            std::string msg = "solve_terminal: no convergence after " + std::to_string(out.iterations) +
                              " iterations, max residual " + fmt_double(out.residual) + "; residual field:";
            for (std::size_t node = 0; node < r.size(); ++node) {
                msg += (node ? ";" : " ") + fmt_double(r[node]);
                if (node >= 64) {
                    msg += ";...";
                    break;
                }
            }
            throw NumericalError(msg);
        }
        for (std::size_t node = 0; node < r.size(); ++node) out.values[node] -= params.omega * r[node];
    }
}

enum class SolveForm { target, control };

struct SolveParams {
    double eps = 0.0;  // final schedule entries used by H_{ε,η} in target form
    double eta = 0.0;
    std::size_t workers = 1;
};

struct SolveResult {
    ValueField field;
    CflCertificate cfl;
    std::size_t empty_nodes = 0;  // node updates where no control was admissible
};

/// Backward sweep from the terminal slice.
inline SolveResult solve_hjb(const ProblemSpec& spec, const std::vector<double>& terminal, SpaceTimeGrid& grid,
                             SolveForm form, const GOperator& G, const SolveParams& params, const ControlSet& controls) {
    if (terminal.size() != grid.num_nodes()) throw ValidationError("solve_hjb: terminal slice has wrong size");
    if (std::abs(grid.horizon() - spec.horizon) > 1e-12 * spec.horizon) {
        throw ValidationError("solve_hjb: grid horizon differs from T");
    }
    SolveResult out;
    out.cfl = cfl_check(spec, grid, controls);
    grid.cfl = out.cfl;
    if (!out.cfl.passed) {
        if (!out.cfl.diagonally_dominant) {
            throw NumericalError("solve_hjb: second-difference stencil not diagonally dominant; refine h to restore monotonicity");
        }
        throw NumericalError("solve_hjb: CFL violated, dt = " + fmt_double(grid.dt()) + " exceeds the stable bound " +
                             fmt_double(out.cfl.max_dt));
    }
    if (form == SolveForm::control && std::holds_alternative<EmbeddingSpan>(controls)) {
        throw ValidationError("solve_hjb: control form takes a control grid of the control problem");
    }

    const std::size_t M = grid.time_steps(), nodes = grid.num_nodes(), d = grid.dim();
    const double dt = grid.dt();
    out.field.slices.assign(M + 1, {});
    out.field.slices[M] = terminal;
    std::vector<unsigned char> empty(nodes);
    std::vector<Vector> points(nodes);
    for (std::size_t node = 0; node < nodes; ++node) points[node] = grid.point(node);

    for (std::size_t k = M; k-- > 0;) {
        const auto& next = out.field.slices[k + 1];
        const double t = grid.time(k);
        std::vector<double> cur(nodes);
        std::fill(empty.begin(), empty.end(), 0);
        parallel_for(nodes, params.workers, [&](std::size_t node) {
            const Vector& x = points[node];
            double best = 0.0;
            bool found = false;
            if (form == SolveForm::control) {
                for (const auto& u : std::get<ControlGrid>(controls).values) {
                    const Vector mu = spec.coefficients.mu_x(t, x, u);
                    const Matrix sx = spec.coefficients.sigma_x(t, x, u);
                    const double L = detail::drift_diffusion(grid, next, node, mu, 0.5 * sx * sx.transpose()) +
                                     detail::jump_sum(grid, next, node, x, t, u, spec);
                    if (!found || L < best) best = L;
                    found = true;
                }
                cur[node] = next[node] + dt * best;
            } else {
                const double y = next[node];
                const Vector p = detail::slice_gradient(grid, next, node);
                const Theta th{t, x, y, p, Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
                auto field = [&](double, const Vector& z) { return grid.interpolate(next, z); };
                auto consider = [&](const ControlValue& u) {
                    if (!in_N_eps_eta(t, x, y, p, u, params.eps, params.eta, field, spec)) return;
                    const Vector mu = spec.coefficients.mu_x(t, x, u);
                    const Matrix sx = spec.coefficients.sigma_x(t, x, u);
                    // F_h = μ_Y - (μ·D_h V + Σ a D²_h V)
                    const double f = spec.coefficients.mu_y(t, x, y, u) -
                                     detail::drift_diffusion(grid, next, node, mu, 0.5 * sx * sx.transpose());
                    if (!found || f > best) best = f;
                    found = true;
                };
                if (const auto* g = std::get_if<ControlGrid>(&controls)) {
                    for (const auto& u : g->values) consider(u);
                } else {
                    const auto& span = std::get<EmbeddingSpan>(controls);
                    for (const auto& nu : span.base.values) consider(detail::span_control_for_H(span, nu, th, params.eta, field, spec));
                }
                if (found) cur[node] = next[node] - dt * best;
            }
            if (!found) empty[node] = 1;
            if (found && !std::isfinite(cur[node])) {
                throw NumericalError("solve_hjb: nonfinite value at slice " + std::to_string(k) + ", node " + std::to_string(node));
            }
        });
        // projection onto the G-feasible set
        for (std::size_t node = 0; node < nodes; ++node) {
            double floor = -kInf;
            const double gx = spec.g(points[node]);
            if (G.kind == GOperator::Kind::obstacle) floor = gx + G.c;
            if (G.kind == GOperator::Kind::gradient_bound) {
                for (std::size_t j = 0; j < d; ++j) {
                    for (int s : {-1, 1}) {
                        if (auto nb = grid.neighbour(node, j, s)) floor = std::max(floor, next[*nb] - G.K * grid.h(j));
                    }
                }
            }
            if (empty[node]) {
                ++out.empty_nodes;
                if (!std::isfinite(floor)) {
                    throw NumericalError("solve_hjb: no admissible control at slice " + std::to_string(k) + ", node " +
                                         std::to_string(node) + " and G gives no bound (H = -inf)");
                }
                cur[node] = floor;
            } else {
                cur[node] = std::max(cur[node], floor);
            }
        }
        out.field.slices[k] = std::move(cur);
    }
    return out;
}

/// CSV: t,x_1..x_d,value for every slice (or only `slice` when given).
inline void write_field_csv(std::ostream& out, const SpaceTimeGrid& grid, const ValueField& field,
                            std::optional<std::size_t> slice = std::nullopt) {
    out << "t";
    for (std::size_t j = 0; j < grid.dim(); ++j) out << ",x_" << (j + 1);
    out << ",value\n";
    for (std::size_t k = 0; k < field.slices.size(); ++k) {
        if (slice && *slice != k) continue;
        for (std::size_t node = 0; node < grid.num_nodes(); ++node) {
            out << fmt_double(grid.time(k));
            const Vector x = grid.point(node);
            for (Eigen::Index j = 0; j < x.size(); ++j) out << "," << fmt_double(x[j]);
            out << "," << fmt_double(field.slices[k][node]) << "\n";
        }
    }
}

}  // namespace stp
