#pragma once

// Finite scenario trees: an exact probability space on which a.s. constraints
// become finite conjunctions over branches.
//
// Two branching layouts are available:
//   product   (2^d Brownian sign patterns) x (per process: no jump, or a jump with mark e),
//             jump probability min(1, m_i(E)Δt) split in proportion to m_i(e);
//   complete  one event per step: d + 1 simplex Brownian points (no jump) or exactly one
//             jump (i, e) with probability m_i(e)Δt. Its branch count equals the number of
//             unknowns (y, α, γ), so every payoff has an exact martingale representation.
// Node states follow the Euler step of the simulator. Controls whose X-transition is
// identical at a node form one class and share children.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stp/embedding.hpp"
#include "stp/model.hpp"
#include "stp/operators.hpp"
#include "stp/policy.hpp"

namespace stp {

enum class BranchLayout { product, complete };

struct Branch {
    double prob = 0.0;
    Vector dW;
    std::vector<std::pair<std::size_t, std::size_t>> jumps;  // (process, mark)
};

struct TreeClass {
    std::vector<std::size_t> controls;  // indices into the grid (or base grid of a span)
    std::size_t first_child = 0;        // children are first_child + b for each branch b
};

struct TreeNode {
    double t = 0.0;
    Vector x;
    std::size_t level = 0;
    std::vector<TreeClass> classes;  // empty at leaves
};

struct TreeOptions {
    BranchLayout layout = BranchLayout::product;
    std::size_t max_nodes = 2000000;
};

class ScenarioTree {
public:
    std::vector<TreeNode> nodes;
    std::vector<Branch> branches;
    std::vector<double> jump_prob;  // q_i(e) per step, flattened as i * marks + e
    std::size_t depth = 0;
    double dt = 0.0;
    BranchLayout layout = BranchLayout::product;
    std::size_t marks = 0;

    const TreeNode& root() const { return nodes.front(); }
    bool is_leaf(std::size_t node) const { return nodes[node].level == depth; }
    std::size_t child(std::size_t node, std::size_t cls, std::size_t b) const {
        return nodes[node].classes[cls].first_child + b;
    }
    double q(std::size_t process, std::size_t mark) const { return jump_prob[process * marks + mark]; }

    /// Class of control index `u` at `node`, if that control was part of the build.
    std::optional<std::size_t> class_of(std::size_t node, std::size_t u) const {
        const auto& cs = nodes[node].classes;
        for (std::size_t c = 0; c < cs.size(); ++c) {
            if (std::find(cs[c].controls.begin(), cs[c].controls.end(), u) != cs[c].controls.end()) return c;
        }
        return std::nullopt;
    }
};

namespace detail {

inline std::vector<Branch> make_branches(const ProblemSpec& spec, double dt, BranchLayout layout,
                                         std::vector<double>& jump_prob) {
    const std::size_t d = spec.d, I = spec.num_processes(), K = spec.marks.num_marks();
    const auto di = static_cast<Eigen::Index>(d);
    jump_prob.assign(I * K, 0.0);
    std::vector<Branch> out;
    if (layout == BranchLayout::complete) {
        double p_jump = 0.0;
        for (std::size_t i = 0; i < I; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                jump_prob[i * K + k] = spec.marks.weight(i, k) * dt;
                p_jump += jump_prob[i * K + k];
            }
        }
        const double p0 = 1.0 - p_jump;
        if (!(p0 > 0.0)) throw ValidationError("tree: complete layout needs m̂(E) Δt < 1");
        // Regular simplex with Σ v = 0 and (1/(d+1)) Σ v v^T = I: centre the standard
        // basis of R^{d+1} and express it in an orthonormal basis of the hyperplane.
        Matrix E = Matrix::Identity(di + 1, di + 1) - Matrix::Constant(di + 1, di + 1, 1.0 / static_cast<double>(d + 1));
        Eigen::HouseholderQR<Matrix> qr(E);
        Matrix Q = qr.householderQ();
        Matrix basis = Q.leftCols(di);  // orthonormal basis of {Σ z = 0}
        Matrix V = basis.transpose() * E;  // d x (d+1) simplex vertices
        V *= std::sqrt(static_cast<double>(d + 1));
        const double scale = std::sqrt(dt / p0);
        for (Eigen::Index l = 0; l <= di; ++l) {
            Branch b;
            b.prob = p0 / static_cast<double>(d + 1);
            b.dW = scale * V.col(l);
            out.push_back(std::move(b));
        }
        for (std::size_t i = 0; i < I; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                out.push_back(Branch{jump_prob[i * K + k], Vector::Zero(di), {{i, k}}});
            }
        }
        return out;
    }

    // product layout
    const double sq = std::sqrt(dt);
    std::vector<Branch> partial;
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << d); ++pattern) {
        Branch b;
        b.prob = std::ldexp(1.0, -static_cast<int>(d));
        b.dW.resize(di);
        for (std::size_t j = 0; j < d; ++j) b.dW[static_cast<Eigen::Index>(j)] = ((pattern >> j) & 1U) ? -sq : sq;
        partial.push_back(std::move(b));
    }
    for (std::size_t i = 0; i < I; ++i) {
        const double mass = spec.marks.process_mass(i);
        const double p = std::min(1.0, mass * dt);
        for (std::size_t k = 0; k < K; ++k) jump_prob[i * K + k] = p * spec.marks.weight(i, k) / mass;
        std::vector<Branch> next;
        for (const auto& b : partial) {
            if (p < 1.0) {
                Branch none = b;
                none.prob *= 1.0 - p;
                next.push_back(std::move(none));
            }
            for (std::size_t k = 0; k < K; ++k) {
                Branch jump = b;
                jump.prob *= jump_prob[i * K + k];
                jump.jumps.emplace_back(i, k);
                next.push_back(std::move(jump));
            }
        }
        partial = std::move(next);
    }
    return partial;
}

/// A control as the problem coefficients see it (embedded spans evaluate X on ν with α = 0, γ = 0).
inline ControlValue probe_control(const ControlSet& controls, std::size_t index) {
    if (const auto* g = std::get_if<ControlGrid>(&controls)) return (*g)[index];
    const auto& span = std::get<EmbeddingSpan>(controls);
    const auto& L = span.layout;
    return L.make(span.base[index], Vector::Zero(static_cast<Eigen::Index>(L.d)),
                  std::vector<Vector>(L.marks, Vector::Zero(static_cast<Eigen::Index>(L.processes))));
}

inline std::size_t control_count(const ControlSet& controls) {
    if (const auto* g = std::get_if<ControlGrid>(&controls)) return g->size();
    return std::get<EmbeddingSpan>(controls).base.size();
}

/// X after one Euler step along branch b.
inline Vector step_x(const ProblemSpec& spec, double t, const Vector& x, const ControlValue& u, const Branch& b,
                     double dt) {
    const auto& c = spec.coefficients;
    Vector out = x + c.mu_x(t, x, u) * dt + c.sigma_x(t, x, u) * b.dW;
    for (const auto& [i, k] : b.jumps) {
        out += c.beta(t, x, u.u1, u.at_mark(k), spec.marks.point(k)).col(static_cast<Eigen::Index>(i));
    }
    return out;
}

/// Y after one Euler step along branch b.
inline double step_y(const ProblemSpec& spec, double t, const Vector& x, double y, const ControlValue& u,
                     const Branch& b, double dt) {
    const auto& c = spec.coefficients;
    double out = y + c.mu_y(t, x, y, u) * dt + c.sigma_y(t, x, y, u).dot(b.dW);
    for (const auto& [i, k] : b.jumps) {
        out += c.b(t, x, y, u.u1, u.at_mark(k), spec.marks.point(k))[static_cast<Eigen::Index>(i)];
    }
    return out;
}

}  // namespace detail

/// Builds the tree from (t, x) over `depth` steps to the horizon.
inline ScenarioTree build_tree(const ProblemSpec& spec, double t, const Vector& x, std::size_t depth,
                               const ControlSet& controls, const TreeOptions& options = {}) {
    if (depth < 1) throw ValidationError("build_tree: depth must be >= 1");
    if (!(t >= 0.0 && t < spec.horizon)) throw ValidationError("build_tree: need 0 <= t < T");
    const std::size_t n_controls = detail::control_count(controls);
    if (n_controls == 0) throw ValidationError("build_tree: control set is empty");

    ScenarioTree tree;
    tree.depth = depth;
    tree.layout = options.layout;
    tree.marks = spec.marks.num_marks();
    tree.dt = (spec.horizon - t) / static_cast<double>(depth);
    tree.branches = detail::make_branches(spec, tree.dt, options.layout, tree.jump_prob);
    const std::size_t B = tree.branches.size();
    {
        double total = 0.0;
        for (const auto& b : tree.branches) {
            if (!(b.prob > 0.0)) throw ValidationError("tree: branch with nonpositive probability");
            total += b.prob;
        }
        if (std::abs(total - 1.0) > 1e-12) throw ValidationError("tree: branch probabilities do not sum to 1");
    }
    double estimate = 0.0, level_count = 1.0;
    for (std::size_t l = 0; l <= depth; ++l, level_count *= static_cast<double>(B)) estimate += level_count;
    if (estimate > static_cast<double>(options.max_nodes)) {
        throw ValidationError("build_tree: about " + std::to_string(static_cast<long long>(estimate)) +
                              " nodes needed (one control class), budget is " + std::to_string(options.max_nodes));
    }

    std::vector<ControlValue> probes;
    for (std::size_t i = 0; i < n_controls; ++i) probes.push_back(detail::probe_control(controls, i));

    tree.nodes.push_back(TreeNode{t, x, 0, {}});
    std::size_t level_begin = 0;
    for (std::size_t level = 0; level < depth; ++level) {
        const std::size_t level_end = tree.nodes.size();
        const double s = t + static_cast<double>(level) * tree.dt;
        const double s_next = level + 1 == depth ? spec.horizon : t + static_cast<double>(level + 1) * tree.dt;
        for (std::size_t n = level_begin; n < level_end; ++n) {
            std::vector<std::vector<Vector>> class_states;
            std::vector<TreeClass> classes;
            for (std::size_t ui = 0; ui < n_controls; ++ui) {
                std::vector<Vector> states;
                states.reserve(B);
                for (const auto& b : tree.branches) states.push_back(detail::step_x(spec, s, tree.nodes[n].x, probes[ui], b, tree.dt));
                std::size_t c = 0;
                while (c < class_states.size() && class_states[c] != states) ++c;
                if (c == class_states.size()) {
                    class_states.push_back(std::move(states));
                    classes.push_back(TreeClass{{}, 0});
                }
                classes[c].controls.push_back(ui);
            }
            for (std::size_t c = 0; c < classes.size(); ++c) {
                classes[c].first_child = tree.nodes.size();
                for (std::size_t b = 0; b < B; ++b) {
                    if (!class_states[c][b].allFinite()) {
                        throw NumericalError("build_tree: nonfinite state below node " + std::to_string(n));
                    }
                    tree.nodes.push_back(TreeNode{s_next, class_states[c][b], level + 1, {}});
                }
                if (tree.nodes.size() > options.max_nodes) {
                    const double remaining = std::pow(static_cast<double>(B * std::max<std::size_t>(1, classes.size())),
                                                      static_cast<double>(depth - level - 1));
                    throw ValidationError("build_tree: node budget " + std::to_string(options.max_nodes) +
                                          " exceeded; estimate >= " +
                                          std::to_string(static_cast<long long>(static_cast<double>(tree.nodes.size()) * remaining)));
                }
            }
            tree.nodes[n].classes = std::move(classes);
        }
        level_begin = level_end;
    }
    return tree;
}

/// Per-node minimal attainable y and the control achieving it.
struct FeasibilityProfile {
    std::vector<double> value;                   // +∞ where infeasible within [-Y_MAX, Y_MAX]
    std::vector<std::optional<std::size_t>> control;
    std::vector<std::optional<ControlValue>> control_value;  // the control actually used (spans build it per node)

    double root() const { return value.front(); }
};

namespace detail {

/// Smallest y in [-y_max, y_max] with step_y(y) >= req[b] on every branch, or +∞.
inline double minimal_y(const ProblemSpec& spec, const ScenarioTree& tree, const TreeNode& node, const ControlValue& u,
                        const std::vector<double>& req, double y_max) {
    for (double r : req) {
        if (r == kInf) return kInf;
    }
    const std::size_t B = tree.branches.size();
    if (spec.coefficients.y_affine) {
        double lo = -y_max, hi = y_max;
        for (std::size_t b = 0; b < B; ++b) {
            const double c0 = step_y(spec, node.t, node.x, 0.0, u, tree.branches[b], tree.dt);
            const double a = step_y(spec, node.t, node.x, 1.0, u, tree.branches[b], tree.dt) - c0;
            if (a > 0.0) {
                double y = (req[b] - c0) / a;
                // round-off: make sure the Euler step from y really meets the requirement
                while (step_y(spec, node.t, node.x, y, u, tree.branches[b], tree.dt) < req[b]) {
                    y = std::nextafter(y, kInf);
                }
                lo = std::max(lo, y);
            } else if (a < 0.0) {
                hi = std::min(hi, (req[b] - c0) / a);
            } else if (c0 < req[b]) {
                return kInf;
            }
        }
        return lo <= hi ? lo : kInf;
    }
    auto feasible = [&](double y) {
        for (std::size_t b = 0; b < B; ++b) {
            if (step_y(spec, node.t, node.x, y, u, tree.branches[b], tree.dt) < req[b]) return false;
        }
        return true;
    };
    if (!feasible(y_max)) return kInf;
    if (feasible(-y_max)) return -y_max;
    double lo = -y_max, hi = y_max;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (feasible(mid) ? hi : lo) = mid;
    }
    return hi;
}

/// Exact (y, α, γ) with y + α·ΔW_b + Σ_{(i,e) in b} γ_i(e) - Σ_{i,e} q_i(e) γ_i(e) = R_b on every branch.
struct LocalRepresentation {
    double y = 0.0;
    Vector alpha;
    std::vector<Vector> gamma;  // per mark, one entry per process
};

inline LocalRepresentation solve_local(const ScenarioTree& tree, std::size_t d, std::size_t I,
                                       const std::vector<double>& req, std::size_t node_index) {
    const std::size_t K = tree.marks;
    const std::size_t unknowns = 1 + d + I * K;
    const std::size_t B = tree.branches.size();
    if (B != unknowns) {
        throw NumericalError("martingale representation: node " + std::to_string(node_index) + " has " +
                             std::to_string(B) + " branches for " + std::to_string(unknowns) +
                             " unknowns (use the complete branching layout)");
    }
    Matrix M = Matrix::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(unknowns));
    Vector rhs(static_cast<Eigen::Index>(B));
    for (std::size_t b = 0; b < B; ++b) {
        const auto bb = static_cast<Eigen::Index>(b);
        const auto& br = tree.branches[b];
        M(bb, 0) = 1.0;
        for (std::size_t j = 0; j < d; ++j) M(bb, static_cast<Eigen::Index>(1 + j)) = br.dW[static_cast<Eigen::Index>(j)];
        for (std::size_t i = 0; i < I; ++i) {
            for (std::size_t k = 0; k < K; ++k) M(bb, static_cast<Eigen::Index>(1 + d + i * K + k)) = -tree.q(i, k);
        }
        for (const auto& [i, k] : br.jumps) M(bb, static_cast<Eigen::Index>(1 + d + i * K + k)) += 1.0;
        rhs[bb] = req[b];
    }
    Eigen::FullPivLU<Matrix> lu(M);
    if (!lu.isInvertible()) {
        throw NumericalError("martingale representation: singular branch system at node " + std::to_string(node_index));
    }
    Vector sol = lu.solve(rhs);
    // one step of iterative refinement
    sol += lu.solve(rhs - M * sol);
    LocalRepresentation out;
    // the intercept is the branch expectation exactly (Σ_b prob_b · row_b = (1, 0, ..., 0))
    double expectation = 0.0;
    for (std::size_t b = 0; b < B; ++b) expectation += tree.branches[b].prob * req[b];
    out.y = expectation;
    out.alpha = sol.segment(1, static_cast<Eigen::Index>(d));
    out.gamma.assign(K, Vector::Zero(static_cast<Eigen::Index>(I)));
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t k = 0; k < K; ++k) out.gamma[k][static_cast<Eigen::Index>(i)] = sol[static_cast<Eigen::Index>(1 + d + i * K + k)];
    }
    return out;
}

}  // namespace detail

/// Backward feasibility recursion for Y(T) >= g(X(T)) on every branch.
inline FeasibilityProfile tree_target_value(const ScenarioTree& tree, const ProblemSpec& spec,
                                            const std::function<double(const Vector&)>& g, const ControlSet& controls,
                                            double y_max = 1e6) {
    FeasibilityProfile out;
    const std::size_t N = tree.nodes.size();
    out.value.assign(N, kInf);
    out.control.assign(N, std::nullopt);
    out.control_value.assign(N, std::nullopt);
    const std::size_t B = tree.branches.size();
    const auto* span = std::get_if<EmbeddingSpan>(&controls);
    for (std::size_t n = N; n-- > 0;) {
        const auto& node = tree.nodes[n];
        if (tree.is_leaf(n)) {
            out.value[n] = g(node.x);
            continue;
        }
        for (std::size_t c = 0; c < node.classes.size(); ++c) {
            std::vector<double> req(B);
            for (std::size_t b = 0; b < B; ++b) req[b] = out.value[node.classes[c].first_child + b];
            for (std::size_t ui : node.classes[c].controls) {
                ControlValue u;
                if (span) {
                    bool finite = std::all_of(req.begin(), req.end(), [](double r) { return std::isfinite(r); });
                    if (!finite) continue;
                    const auto rep = detail::solve_local(tree, spec.d, spec.num_processes(), req, n);
                    u = span->layout.make(span->base[ui], rep.alpha, rep.gamma);
                } else {
                    u = std::get<ControlGrid>(controls)[ui];
                }
                const double y = detail::minimal_y(spec, tree, node, u, req, y_max);
                if (y < out.value[n]) {
                    out.value[n] = y;
                    out.control[n] = ui;
                    out.control_value[n] = u;
                }
            }
        }
    }
    return out;
}

/// Exact expectation of g at the leaves when `policy` picks the controls. The policy's
/// control at each node must be a member of the grid the tree was built with.
inline double tree_expectation(const ScenarioTree& tree, const std::function<double(const Vector&)>& g,
                               const ControlPolicy& policy, const ControlGrid& grid) {
    std::function<double(std::size_t, std::vector<unsigned char>)> visit = [&](std::size_t n,
                                                                               std::vector<unsigned char> state) {
        const auto& node = tree.nodes[n];
        if (tree.is_leaf(n)) return g(node.x);
        const ControlValue u = policy.evaluate(node.t, tree.dt, node.x, 0.0, state);
        const auto index = grid.find(u);
        if (!index) throw ValidationError("tree_expectation: policy control not in the tree's grid at node " + std::to_string(n));
        const auto cls = tree.class_of(n, *index);
        if (!cls) throw ValidationError("tree_expectation: control missing from node " + std::to_string(n));
        double total = 0.0;
        for (std::size_t b = 0; b < tree.branches.size(); ++b) {
            total += tree.branches[b].prob * visit(tree.child(n, *cls, b), state);
        }
        return total;
    };
    return visit(0, policy.initial_state());
}

/// Dynamic programming: per node the minimum over control classes of the branch expectation.
inline FeasibilityProfile tree_dp_minimum(const ScenarioTree& tree, const std::function<double(const Vector&)>& g) {
    FeasibilityProfile out;
    const std::size_t N = tree.nodes.size();
    out.value.assign(N, kInf);
    out.control.assign(N, std::nullopt);
    out.control_value.assign(N, std::nullopt);
    for (std::size_t n = N; n-- > 0;) {
        const auto& node = tree.nodes[n];
        if (tree.is_leaf(n)) {
            out.value[n] = g(node.x);
            continue;
        }
        for (std::size_t c = 0; c < node.classes.size(); ++c) {
            double e = 0.0;
            for (std::size_t b = 0; b < tree.branches.size(); ++b) {
                e += tree.branches[b].prob * out.value[node.classes[c].first_child + b];
            }
            if (e < out.value[n]) {
                out.value[n] = e;
                out.control[n] = node.classes[c].controls.front();
            }
        }
    }
    return out;
}

struct Representation {
    double y0 = 0.0;
    std::vector<double> value;  // conditional expectation per node
    std::vector<Vector> alpha;  // per interior node
    std::vector<std::vector<Vector>> gamma;  // per interior node, per mark
};

/// Exact representation of a leaf payoff. The tree must have a single control class
/// per node (uncontrolled X).
inline Representation martingale_representation(const ScenarioTree& tree, std::size_t d, std::size_t processes,
                                                const std::vector<double>& leaf_payoff) {
    const std::size_t N = tree.nodes.size();
    if (leaf_payoff.size() != N) throw ValidationError("martingale_representation: payoff must be indexed by node");
    Representation out;
    out.value.assign(N, 0.0);
    out.alpha.assign(N, Vector());
    out.gamma.assign(N, {});
    const std::size_t B = tree.branches.size();
    for (std::size_t n = N; n-- > 0;) {
        if (tree.is_leaf(n)) {
            if (!std::isfinite(leaf_payoff[n])) {
                throw ValidationError("martingale_representation: nonfinite payoff at leaf " + std::to_string(n));
            }
            out.value[n] = leaf_payoff[n];
            continue;
        }
        if (tree.nodes[n].classes.size() != 1) {
            throw ValidationError("martingale_representation: node " + std::to_string(n) + " has several control classes");
        }
        std::vector<double> req(B);
        for (std::size_t b = 0; b < B; ++b) req[b] = out.value[tree.child(n, 0, b)];
        auto rep = detail::solve_local(tree, d, processes, req, n);
        out.value[n] = rep.y;
        out.alpha[n] = std::move(rep.alpha);
        out.gamma[n] = std::move(rep.gamma);
    }
    out.y0 = out.value.front();
    return out;
}

/// Forward reconstruction y0 + Σ α·ΔW + Σ γ (Δλ - q) along every path; returns per-node values.
inline std::vector<double> reconstruct(const ScenarioTree& tree, const Representation& rep) {
    std::vector<double> y(tree.nodes.size(), 0.0);
    y[0] = rep.y0;
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        if (tree.is_leaf(n)) continue;
        double compensator = 0.0;
        for (std::size_t k = 0; k < tree.marks; ++k) {
            for (Eigen::Index i = 0; i < rep.gamma[n][k].size(); ++i) compensator += tree.q(static_cast<std::size_t>(i), k) * rep.gamma[n][k][i];
        }
        for (std::size_t b = 0; b < tree.branches.size(); ++b) {
            const auto& br = tree.branches[b];
            double v = y[n] + rep.alpha[n].dot(br.dW) - compensator;
            for (const auto& [i, k] : br.jumps) v += rep.gamma[n][k][static_cast<Eigen::Index>(i)];
            y[tree.child(n, 0, b)] = v;
        }
    }
    return y;
}

}  // namespace stp
