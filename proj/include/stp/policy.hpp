#pragma once

// Control policies: constant, Markov feedback, and concatenation at a
// stopping rule. Concatenation carries one bit of per-path state (has the
// rule fired?), so evaluation threads a small state buffer owned by the caller.

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "stp/model.hpp"

namespace stp {

/// First exit from a box of (x, y), or a fixed time. Nothing else is representable.
struct StoppingRule {
    enum class Kind { fixed_time, box_exit };

    Kind kind = Kind::fixed_time;
    double time = 0.0;
    Box x_box;
    double y_lo = -INFINITY;
    double y_hi = INFINITY;

    static StoppingRule at(double s0) { return {Kind::fixed_time, s0, {}, -INFINITY, INFINITY}; }
    static StoppingRule exit_box(Box x_box, double y_lo, double y_hi) {
        return {Kind::box_exit, 0.0, std::move(x_box), y_lo, y_hi};
    }

    /// Has the rule fired for the Euler step [s, s + ds) started at state (x, y)?
    /// A fixed time s0 fires on the step containing it; a box exit fires once the
    /// step-start state lies outside the box.
    bool fired(double s, double ds, const Vector& x, double y) const {
        if (kind == Kind::fixed_time) {
            const double tol = 1e-12 * std::max(1.0, std::abs(s) + ds);
            return time < s + ds - tol;
        }
        return !(x_box.contains(x) && y >= y_lo && y <= y_hi);
    }
};

class ControlPolicy {
public:
    using Feedback = std::function<ControlValue(double s, const Vector& x, double y)>;
    using YMap = std::function<double(double s, double y)>;

    ControlPolicy() : ControlPolicy(constant(ControlValue{})) {}

    static ControlPolicy constant(ControlValue u) { return ControlPolicy(std::make_shared<Node>(Node{Constant{std::move(u)}})); }
    static ControlPolicy feedback(Feedback f) { return ControlPolicy(std::make_shared<Node>(Node{FeedbackNode{std::move(f)}})); }

    /// nu1 strictly before tau, nu2 from tau on.
    friend ControlPolicy concatenate(const ControlPolicy& nu1, const ControlPolicy& nu2, StoppingRule tau) {
        return ControlPolicy(std::make_shared<Node>(Node{Concat{nu1.node_, nu2.node_, std::move(tau)}}));
    }

    /// Policy that sees y through `map` (the state it is handed is transformed first).
    ControlPolicy map_y(YMap map) const {
        return ControlPolicy(std::make_shared<Node>(Node{MapY{node_, std::move(map)}}));
    }

    /// Size of the per-path state buffer required by evaluate().
    std::size_t state_size() const { return size_of(*node_); }

    std::vector<unsigned char> initial_state() const { return std::vector<unsigned char>(state_size(), 0); }

    /// Control applied on the Euler step [s, s + ds) from state (x, y).
    ControlValue evaluate(double s, double ds, const Vector& x, double y, std::span<unsigned char> state) const {
        return eval(*node_, s, ds, x, y, state.data());
    }

    bool is_constant() const { return std::holds_alternative<Constant>(node_->body); }

private:
    struct Node;
    struct Constant {
        ControlValue u;
    };
    struct FeedbackNode {
        Feedback f;
    };
    struct Concat {
        std::shared_ptr<const Node> first;
        std::shared_ptr<const Node> second;
        StoppingRule rule;
    };
    struct MapY {
        std::shared_ptr<const Node> inner;
        YMap map;
    };
    struct Node {
        std::variant<Constant, FeedbackNode, Concat, MapY> body;
    };

    explicit ControlPolicy(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

    static std::size_t size_of(const Node& node) {
        if (const auto* c = std::get_if<Concat>(&node.body)) return size_of(*c->first) + size_of(*c->second) + 1;
        if (const auto* m = std::get_if<MapY>(&node.body)) return size_of(*m->inner);
        return 0;
    }

    // State layout of a Concat: [first's state][second's state][fired flag].
    static ControlValue eval(const Node& node, double s, double ds, const Vector& x, double y, unsigned char* state) {
        if (const auto* c = std::get_if<Constant>(&node.body)) return c->u;
        if (const auto* f = std::get_if<FeedbackNode>(&node.body)) return f->f(s, x, y);
        if (const auto* m = std::get_if<MapY>(&node.body)) return eval(*m->inner, s, ds, x, m->map(s, y), state);
        const auto& cat = std::get<Concat>(node.body);
        const std::size_t first_size = size_of(*cat.first);
        unsigned char& fired = state[first_size + size_of(*cat.second)];
        if (!fired && cat.rule.fired(s, ds, x, y)) fired = 1;
        return fired ? eval(*cat.second, s, ds, x, y, state + first_size) : eval(*cat.first, s, ds, x, y, state);
    }

    std::shared_ptr<const Node> node_;
};

}  // namespace stp
