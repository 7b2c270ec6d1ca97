#pragma once

// Problem-file loader. Schema (all sections except [problem] are optional;
// absent coefficient sections mean the zero coefficient):
//
//   [problem]   d, q, n, processes, horizon, lipschitz_L, growth_C
//   [box]       x_lo, x_hi (d), y_lo, y_hi, u1_lo, u1_hi (q), u2_lo, u2_hi (n)
//   [marks]     points (list), weights_1 .. weights_I (one list per process)
//   [mu_x]      kind = zero|constant|affine|table; c (d), t (d), x (d*d), u1 (d*q),
//               table_nodes, table_values
//   [sigma_x]   kind; c (d*d), x (d blocks of d*d), u1 (q blocks of d*d), table_nodes, table_values
//   [beta]      kind; c (d*I), e (d*I), x (d blocks), u1 (q blocks), u2 (n blocks of d*I)
//   [mu_y]      kind = zero|constant|affine|saturating; c, t, y, saturation, x (d), u1 (q),
//               compensator (I*n)
//   [sigma_y]   kind; c (d), y (d), x (d*d), u1 (d*q)
//   [b]         kind; c (I), y (I), e (I), x (I*d), u1 (I*q), u2 (I*n)
//   [payoff]    kind = constant|affine|tanh|table; c, scale, slope (d), table_nodes,
//               table_values, bound
//   [neutral_control] u1 (q), u2 (|E|*n)
//
// Matrices are row-major. Unknown sections or keys are errors.

#include <set>
#include <string>

#include "stp/builtins.hpp"
#include "stp/config.hpp"
#include "stp/model.hpp"

namespace stp {

namespace detail {

inline Vector to_vector(const std::vector<double>& v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

inline Matrix to_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[offset + r * cols + c];
        }
    }
    return out;
}

inline std::vector<Matrix> to_blocks(const std::vector<double>& v, std::size_t blocks, std::size_t rows,
                                     std::size_t cols) {
    std::vector<Matrix> out;
    for (std::size_t k = 0; k < blocks; ++k) out.push_back(to_matrix(v, rows, cols, k * rows * cols));
    return out;
}

inline std::string coefficient_kind(const ConfigSection& s, const std::set<std::string>& kinds) {
    std::string kind = s.text("kind", "affine");
    if (kinds.count(kind) == 0) throw ConfigError("[" + s.name() + "] unknown kind '" + kind + "'");
    return kind;
}

/// Allowed keys for a coefficient section, by kind.
inline void check_coefficient_keys(const ConfigSection& s, const std::string& kind,
                                   const std::set<std::string>& linear_keys, bool allow_table,
                                   const std::set<std::string>& extra = {}) {
    std::set<std::string> allowed{"kind"};
    if (kind == "zero") {
        s.check_keys(allowed);
        if (s.values().size() > 1) throw ConfigError("[" + s.name() + "] kind = zero takes no parameters");
        return;
    }
    allowed.insert("c");
    if (kind != "constant") allowed.insert(linear_keys.begin(), linear_keys.end());
    if (kind == "table") {
        if (!allow_table) throw ConfigError("[" + s.name() + "] kind = table not available here");
        allowed.insert({"table_nodes", "table_values"});
    }
    allowed.insert(extra.begin(), extra.end());
    s.check_keys(allowed);
}

inline std::optional<builtins::Table1d> read_table(const ConfigSection& s, std::size_t d) {
    if (!s.has("table_nodes") && !s.has("table_values")) return std::nullopt;
    if (d != 1) throw ConfigError("[" + s.name() + "] tables require d = 1");
    builtins::Table1d table{s.numbers("table_nodes").value_or(std::vector<double>{}),
                            s.numbers("table_values").value_or(std::vector<double>{})};
    table.check();
    return table;
}

}  // namespace detail

/// Parses a problem file into a ProblemSpec; invariants are checked before returning.
inline ProblemSpec load_problem(const ConfigFile& file) {
    using detail::to_blocks;
    using detail::to_matrix;
    using detail::to_vector;

    file.check_sections({"problem", "box", "marks", "mu_x", "sigma_x", "beta", "mu_y", "sigma_y", "b", "payoff",
                         "neutral_control"});

    const auto& prob = file.section("problem");
    prob.check_keys({"d", "q", "n", "processes", "horizon", "lipschitz_L", "growth_C"});

    auto positive_count = [&](const std::string& key, std::int64_t fallback, std::int64_t min) {
        auto v = prob.integer(key, fallback);
        if (v < min) throw ValidationError("[problem] " + key + " must be >= " + std::to_string(min));
        return static_cast<std::size_t>(v);
    };
    ProblemSpec spec;
    spec.d = positive_count("d", 1, 1);
    spec.q = positive_count("q", 0, 0);
    spec.n = positive_count("n", 0, 0);
    const std::size_t processes = positive_count("processes", 0, 0);
    const std::size_t d = spec.d, q = spec.q, n = spec.n;
    spec.horizon = prob.require_number("horizon");
    if (!(spec.horizon > 0.0)) throw ValidationError("[problem] horizon must be > 0");
    const double L = prob.number("lipschitz_L", 0.0);
    const auto C = prob.number("growth_C");

    // marks
    auto marks_section = file.section_or_empty("marks");
    {
        std::set<std::string> allowed{"points"};
        for (std::size_t i = 1; i <= processes; ++i) allowed.insert("weights_" + std::to_string(i));
        marks_section.check_keys(allowed);
    }
    std::vector<double> points = marks_section.numbers("points").value_or(std::vector<double>{});
    std::vector<std::vector<double>> weights;
    for (std::size_t i = 1; i <= processes; ++i) {
        weights.push_back(marks_section.numbers("weights_" + std::to_string(i), points.size())
                              .value_or(std::vector<double>{}));
        if (weights.back().size() != points.size()) {
            throw ConfigError("[marks] missing weights_" + std::to_string(i));
        }
    }
    spec.marks = MarkSpace(points, weights);
    const std::size_t marks = points.size();

    // boxes
    auto box = file.section_or_empty("box");
    box.check_keys({"x_lo", "x_hi", "y_lo", "y_hi", "u1_lo", "u1_hi", "u2_lo", "u2_hi"});
    auto read_box = [&](const std::string& prefix, std::size_t dim, double lo, double hi) {
        Box out{Vector::Constant(static_cast<Eigen::Index>(dim), lo), Vector::Constant(static_cast<Eigen::Index>(dim), hi)};
        if (auto v = box.numbers(prefix + "_lo", dim)) out.lo = to_vector(*v);
        if (auto v = box.numbers(prefix + "_hi", dim)) out.hi = to_vector(*v);
        for (std::size_t i = 0; i < dim; ++i) {
            if (out.lo[static_cast<Eigen::Index>(i)] > out.hi[static_cast<Eigen::Index>(i)]) {
                throw ValidationError("[box] " + prefix + "_lo exceeds " + prefix + "_hi");
            }
        }
        return out;
    };
    spec.x_box = read_box("x", d, -1.0, 1.0);
    spec.y_box = read_box("y", 1, -1.0, 1.0);
    spec.u1_box = read_box("u1", q, -1.0, 1.0);
    spec.u2_box = read_box("u2", n, -1.0, 1.0);

    auto set = builtins::CoefficientSet::zero(d, q, n, processes);
    const std::size_t I = processes;

    if (file.has("mu_x")) {
        const auto& s = file.section("mu_x");
        auto kind = detail::coefficient_kind(s, {"zero", "constant", "affine", "table"});
        detail::check_coefficient_keys(s, kind, {"t", "x", "u1"}, true);
        if (auto v = s.numbers("c", d)) set.mu_x.c = to_vector(*v);
        if (auto v = s.numbers("t", d)) set.mu_x.t_coef = to_vector(*v);
        if (auto v = s.numbers("x", d * d)) set.mu_x.x_coef = to_matrix(*v, d, d);
        if (q > 0) {
            if (auto v = s.numbers("u1", d * q)) set.mu_x.u1_coef = to_matrix(*v, d, q);
        }
        set.mu_x.table = detail::read_table(s, d);
    }
    if (file.has("sigma_x")) {
        const auto& s = file.section("sigma_x");
        auto kind = detail::coefficient_kind(s, {"zero", "constant", "affine", "table"});
        detail::check_coefficient_keys(s, kind, {"x", "u1"}, true);
        if (auto v = s.numbers("c", d * d)) set.sigma_x.c = to_matrix(*v, d, d);
        if (auto v = s.numbers("x", d * d * d)) set.sigma_x.x_coef = to_blocks(*v, d, d, d);
        if (q > 0) {
            if (auto v = s.numbers("u1", q * d * d)) set.sigma_x.u1_coef = to_blocks(*v, q, d, d);
        }
        set.sigma_x.table = detail::read_table(s, d);
    }
    if (file.has("beta")) {
        const auto& s = file.section("beta");
        auto kind = detail::coefficient_kind(s, {"zero", "constant", "affine"});
        detail::check_coefficient_keys(s, kind, {"e", "x", "u1", "u2"}, false);
        if (auto v = s.numbers("c", d * I)) set.beta.c = to_matrix(*v, d, I);
        if (auto v = s.numbers("e", d * I)) set.beta.e_coef = to_matrix(*v, d, I);
        if (auto v = s.numbers("x", d * d * I)) set.beta.x_coef = to_blocks(*v, d, d, I);
        if (q > 0) {
            if (auto v = s.numbers("u1", q * d * I)) set.beta.u1_coef = to_blocks(*v, q, d, I);
        }
        if (n > 0) {
            if (auto v = s.numbers("u2", n * d * I)) set.beta.u2_coef = to_blocks(*v, n, d, I);
        }
    }
    if (file.has("mu_y")) {
        const auto& s = file.section("mu_y");
        auto kind = detail::coefficient_kind(s, {"zero", "constant", "affine", "saturating"});
        std::set<std::string> extra;
        if (kind == "saturating") extra.insert("saturation");
        detail::check_coefficient_keys(s, kind, {"t", "y", "x", "u1", "compensator"}, false, extra);
        set.mu_y.c = s.number("c", 0.0);
        set.mu_y.t_coef = s.number("t", 0.0);
        set.mu_y.y_coef = s.number("y", 0.0);
        set.mu_y.saturation = s.number("saturation", 0.0);
        if (auto v = s.numbers("x", d)) set.mu_y.x_coef = to_vector(*v);
        if (q > 0) {
            if (auto v = s.numbers("u1", q)) set.mu_y.u1_coef = to_vector(*v);
        }
        if (I > 0 && n > 0) {
            if (auto v = s.numbers("compensator", I * n)) set.mu_y.compensator = to_matrix(*v, I, n);
        }
    }
    if (file.has("sigma_y")) {
        const auto& s = file.section("sigma_y");
        auto kind = detail::coefficient_kind(s, {"zero", "constant", "affine"});
        detail::check_coefficient_keys(s, kind, {"y", "x", "u1"}, false);
        if (auto v = s.numbers("c", d)) set.sigma_y.c = to_vector(*v);
        if (auto v = s.numbers("y", d)) set.sigma_y.y_coef = to_vector(*v);
        if (auto v = s.numbers("x", d * d)) set.sigma_y.x_coef = to_matrix(*v, d, d);
        if (q > 0) {
            if (auto v = s.numbers("u1", d * q)) set.sigma_y.u1_coef = to_matrix(*v, d, q);
        }
    }
    if (file.has("b")) {
        const auto& s = file.section("b");
        auto kind = detail::coefficient_kind(s, {"zero", "constant", "affine"});
        detail::check_coefficient_keys(s, kind, {"y", "e", "x", "u1", "u2"}, false);
        if (I > 0) {
            if (auto v = s.numbers("c", I)) set.b.c = to_vector(*v);
            if (auto v = s.numbers("y", I)) set.b.y_coef = to_vector(*v);
            if (auto v = s.numbers("e", I)) set.b.e_coef = to_vector(*v);
            if (auto v = s.numbers("x", I * d)) set.b.x_coef = to_matrix(*v, I, d);
            if (q > 0) {
                if (auto v = s.numbers("u1", I * q)) set.b.u1_coef = to_matrix(*v, I, q);
            }
            if (n > 0) {
                if (auto v = s.numbers("u2", I * n)) set.b.u2_coef = to_matrix(*v, I, n);
            }
        }
    }
    spec.coefficients = set.make(spec.marks, L, C);

    // payoff
    builtins::Payoff payoff;
    payoff.slope = Vector::Zero(static_cast<Eigen::Index>(d));
    std::optional<double> declared_bound;
    if (file.has("payoff")) {
        const auto& s = file.section("payoff");
        s.check_keys({"kind", "c", "scale", "slope", "table_nodes", "table_values", "bound"});
        payoff.kind = s.text("kind", "constant");
        payoff.c = s.number("c", 0.0);
        payoff.scale = s.number("scale", 1.0);
        if (auto v = s.numbers("slope", d)) payoff.slope = to_vector(*v);
        payoff.table = detail::read_table(s, d);
        declared_bound = s.number("bound");
    }
    spec.payoff = payoff.make();
    spec.g_bound = declared_bound ? declared_bound : payoff.bound();

    if (file.has("neutral_control")) {
        const auto& s = file.section("neutral_control");
        s.check_keys({"u1", "u2"});
        ControlValue u0 = spec.zero_control();
        if (q > 0) {
            if (auto v = s.numbers("u1", q)) u0.u1 = to_vector(*v);
        }
        if (n > 0 && marks > 0) {
            if (auto v = s.numbers("u2", marks * n)) {
                for (std::size_t k = 0; k < marks; ++k) {
                    for (std::size_t j = 0; j < n; ++j) u0.u2[k][static_cast<Eigen::Index>(j)] = (*v)[k * n + j];
                }
            }
        }
        spec.neutral_control = u0;
    }

    spec.check_invariants();
    return spec;
}

inline ProblemSpec load_problem_file(const std::string& path) { return load_problem(ConfigFile::parse_file(path)); }

}  // namespace stp
