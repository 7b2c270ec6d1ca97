#pragma once

// Certification of stochastic super-/sub-solutions on a scenario tree.
//
// On a finite tree every stopping time is a node set, so the pathwise
// definitions reduce node by node (induction over levels):
//   super: w(T, ·) >= g, and at every node, from every y >= w there is a grid
//          control keeping Y >= w on every branch;
//   sub:   w(T, ·) <= g, and at every node, from every y < w every grid control
//          leaves Y < w on at least one branch (all branches have positive probability).
// When the one-step Y map is nondecreasing in y the boundary y = w decides;
// otherwise a ladder of y levels is checked and the certificate records it.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stp/model.hpp"
#include "stp/tree.hpp"

namespace stp {

struct CandidateFunction {
    enum class Side { above_g, below_g };

    std::function<double(double t, const Vector& x)> w;
    double growth_C = 0.0;  // |w(t, x)| <= growth_C (1 + |x|^growth_n)
    double growth_n = 0.0;
    Side side = Side::above_g;
    std::string label;

    double operator()(double t, const Vector& x) const { return w(t, x); }
};

struct Certificate {
    enum class Verdict { certified, refuted };

    Verdict verdict = Verdict::certified;
    std::string reason;  // empty when certified
    std::optional<std::size_t> witness_node;
    std::optional<std::size_t> witness_control;
    std::optional<double> witness_y;
    /// Super-solutions: maintaining control index per interior node.
    std::vector<std::optional<std::size_t>> maintaining;
    std::size_t checked_nodes = 0;
    bool used_ladder = false;

    bool certified() const { return verdict == Verdict::certified; }
};

struct LadderOptions {
    std::size_t levels = 9;
    double span = 1.0;
};

namespace detail {

struct BranchMap {
    std::vector<double> c0;  // Y'_b(0)
    std::vector<double> a;   // Y'_b(1) - Y'_b(0) (affine case)
    bool nondecreasing = false;
};

inline BranchMap branch_map(const ProblemSpec& spec, const ScenarioTree& tree, const TreeNode& node,
                            const ControlValue& u) {
    BranchMap m;
    m.nondecreasing = spec.coefficients.y_affine;
    for (const auto& b : tree.branches) {
        const double c0 = step_y(spec, node.t, node.x, 0.0, u, b, tree.dt);
        const double a = step_y(spec, node.t, node.x, 1.0, u, b, tree.dt) - c0;
        m.c0.push_back(c0);
        m.a.push_back(a);
        if (a < 0.0) m.nondecreasing = false;
    }
    return m;
}

inline Certificate refute(std::string reason, std::size_t node, std::optional<std::size_t> control, std::optional<double> y,
                          std::size_t checked) {
    Certificate c;
    c.verdict = Certificate::Verdict::refuted;
    c.reason = std::move(reason);
    c.witness_node = node;
    c.witness_control = control;
    c.witness_y = y;
    c.checked_nodes = checked;
    return c;
}

inline std::optional<Certificate> check_growth(const CandidateFunction& w, const ScenarioTree& tree) {
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        const auto& node = tree.nodes[n];
        const double v = w(node.t, node.x);
        if (!std::isfinite(v) || std::abs(v) > w.growth_C * (1.0 + std::pow(node.x.norm(), w.growth_n)) * (1.0 + 1e-12)) {
            return refute("declared growth bound fails", n, std::nullopt, v, n);
        }
    }
    return std::nullopt;
}

}  // namespace detail

/// Does control u keep Y >= w(child) on every branch when started from y at `node`?
inline bool maintains(const ProblemSpec& spec, const ScenarioTree& tree, std::size_t n, std::size_t cls,
                      const ControlValue& u, double y, const CandidateFunction& w) {
    const auto& node = tree.nodes[n];
    for (std::size_t b = 0; b < tree.branches.size(); ++b) {
        const auto& ch = tree.nodes[tree.child(n, cls, b)];
        if (detail::step_y(spec, node.t, node.x, y, u, tree.branches[b], tree.dt) < w(ch.t, ch.x)) return false;
    }
    return true;
}

/// Does some branch leave Y < w(child) when started from y at `node` under u?
inline bool escapes(const ProblemSpec& spec, const ScenarioTree& tree, std::size_t n, std::size_t cls,
                    const ControlValue& u, double y, const CandidateFunction& w) {
    const auto& node = tree.nodes[n];
    for (std::size_t b = 0; b < tree.branches.size(); ++b) {
        const auto& ch = tree.nodes[tree.child(n, cls, b)];
        if (detail::step_y(spec, node.t, node.x, y, u, tree.branches[b], tree.dt) < w(ch.t, ch.x)) return true;
    }
    return false;
}

inline Certificate certify_supersolution(const CandidateFunction& w, const ScenarioTree& tree, const ProblemSpec& spec,
                                         const ControlGrid& grid, const LadderOptions& ladder = {}) {
    if (w.side != CandidateFunction::Side::above_g) throw ValidationError("certify_supersolution: candidate must be above g");
    if (auto bad = detail::check_growth(w, tree)) return *bad;
    Certificate cert;
    cert.maintaining.assign(tree.nodes.size(), std::nullopt);
    for (std::size_t n = tree.nodes.size(); n-- > 0;) {
        const auto& node = tree.nodes[n];
        ++cert.checked_nodes;
        const double wn = w(node.t, node.x);
        if (tree.is_leaf(n)) {
            if (wn < spec.g(node.x)) {
                return detail::refute("terminal condition w(T, x) >= g(x) fails at a leaf", n, std::nullopt, wn,
                                      cert.checked_nodes);
            }
            continue;
        }
        // boundary case with a y-monotone control
        bool done = false;
        for (std::size_t c = 0; c < node.classes.size() && !done; ++c) {
            for (std::size_t ui : node.classes[c].controls) {
                const auto map = detail::branch_map(spec, tree, node, grid[ui]);
                if (map.nondecreasing && maintains(spec, tree, n, c, grid[ui], wn, w)) {
                    cert.maintaining[n] = ui;
                    done = true;
                    break;
                }
            }
        }
        if (done) continue;
        // ladder over y >= w
        cert.used_ladder = true;
        for (std::size_t l = 0; l < ladder.levels; ++l) {
            const double y = wn + ladder.span * static_cast<double>(l) / static_cast<double>(std::max<std::size_t>(1, ladder.levels - 1));
            bool found = false;
            for (std::size_t c = 0; c < node.classes.size() && !found; ++c) {
                for (std::size_t ui : node.classes[c].controls) {
                    if (maintains(spec, tree, n, c, grid[ui], y, w)) {
                        if (l == 0) cert.maintaining[n] = ui;
                        found = true;
                        break;
                    }
                }
            }
            if (!found) {
                return detail::refute("no grid control keeps Y >= w on every branch", n, std::nullopt, y, cert.checked_nodes);
            }
        }
    }
    return cert;
}

inline Certificate certify_subsolution(const CandidateFunction& w, const ScenarioTree& tree, const ProblemSpec& spec,
                                       const ControlGrid& grid, const LadderOptions& ladder = {}) {
    if (w.side != CandidateFunction::Side::below_g) throw ValidationError("certify_subsolution: candidate must be below g");
    if (auto bad = detail::check_growth(w, tree)) return *bad;
    Certificate cert;
    for (std::size_t n = tree.nodes.size(); n-- > 0;) {
        const auto& node = tree.nodes[n];
        ++cert.checked_nodes;
        const double wn = w(node.t, node.x);
        if (tree.is_leaf(n)) {
            if (wn > spec.g(node.x)) {
                return detail::refute("terminal condition w(T, x) <= g(x) fails at a leaf", n, std::nullopt, wn,
                                      cert.checked_nodes);
            }
            continue;
        }
        for (std::size_t c = 0; c < node.classes.size(); ++c) {
            for (std::size_t ui : node.classes[c].controls) {
                const auto map = detail::branch_map(spec, tree, node, grid[ui]);
                if (map.nondecreasing) {
                    // for all y < w: some branch with Y'_b(w) < w_b, or Y'_b(w) = w_b with a_b > 0
                    bool ok = false;
                    for (std::size_t b = 0; b < tree.branches.size() && !ok; ++b) {
                        const auto& ch = tree.nodes[tree.child(n, c, b)];
                        const double target = w(ch.t, ch.x);
                        const double next = detail::step_y(spec, node.t, node.x, wn, grid[ui], tree.branches[b], tree.dt);
                        ok = next < target || (next == target && map.a[b] > 0.0);
                    }
                    if (!ok) {
                        return detail::refute("no branch escapes below w for y just under w", n, ui,
                                              std::nextafter(wn, -kInf), cert.checked_nodes);
                    }
                    continue;
                }
                cert.used_ladder = true;
                for (std::size_t l = 1; l <= ladder.levels; ++l) {
                    const double y = wn - ladder.span * static_cast<double>(l) / static_cast<double>(ladder.levels);
                    if (!escapes(spec, tree, n, c, grid[ui], y, w)) {
                        return detail::refute("no branch escapes below w", n, ui, y, cert.checked_nodes);
                    }
                }
            }
        }
    }
    return cert;
}

/// w(t, x) = γ - e^{kt}, k = 2L, γ = ‖g‖_∞ + e^{kT}. Requires the neutral control in the grid.
inline CandidateFunction builtin_supersolution(const ProblemSpec& spec, const ControlGrid& grid) {
    if (!spec.g_bound) throw ConfigError("builtin_supersolution: g_bound (bounded payoff) is not set");
    if (!spec.neutral_control) throw ConfigError("builtin_supersolution: no neutral control u0 configured");
    if (!grid.find(*spec.neutral_control)) throw ConfigError("builtin_supersolution: neutral control u0 is not in the control grid");
    const double k = 2.0 * spec.coefficients.lipschitz_L;
    const double gamma = *spec.g_bound + std::exp(k * spec.horizon);
    return CandidateFunction{[k, gamma](double t, const Vector&) { return gamma - std::exp(k * t); }, gamma, 0.0,
                             CandidateFunction::Side::above_g, "builtin_super"};
}

/// w(t, x) = e^{kt} - γ, k = 2C, γ = ‖g‖_∞ + e^{kT} + 1.
inline CandidateFunction builtin_subsolution(const ProblemSpec& spec) {
    if (!spec.g_bound) throw ConfigError("builtin_subsolution: g_bound (bounded payoff) is not set");
    if (!spec.coefficients.growth_C) throw ConfigError("builtin_subsolution: growth_C is not set");
    const double k = 2.0 * *spec.coefficients.growth_C;
    const double gamma = *spec.g_bound + std::exp(k * spec.horizon) + 1.0;
    return CandidateFunction{[k, gamma](double t, const Vector&) { return std::exp(k * t) - gamma; }, gamma, 0.0,
                             CandidateFunction::Side::below_g, "builtin_sub"};
}

struct SandwichViolation {
    std::size_t node = 0;
    double lower = 0.0;  // max over subs
    double value = 0.0;  // profile
    double upper = 0.0;  // min over supers
};

struct SandwichReport {
    std::size_t checked_nodes = 0;
    std::vector<SandwichViolation> violations;
    bool ok() const { return violations.empty(); }
};

/// max_subs w <= profile <= min_supers w at every node; empty lists give vacuous bounds.
inline SandwichReport sandwich_check(const std::vector<CandidateFunction>& subs,
                                     const std::vector<CandidateFunction>& supers, const ScenarioTree& tree,
                                     const FeasibilityProfile& profile) {
    SandwichReport report;
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        const auto& node = tree.nodes[n];
        double lo = -kInf, hi = kInf;
        for (const auto& w : subs) lo = std::max(lo, w(node.t, node.x));
        for (const auto& w : supers) hi = std::min(hi, w(node.t, node.x));
        const double v = profile.value[n];
        ++report.checked_nodes;
        if (!(lo <= v && v <= hi)) report.violations.push_back({n, lo, v, hi});
    }
    return report;
}

}  // namespace stp
