#pragma once

// Experiment orchestration behind the stp_lab command-line tool. An experiment
// config names a problem file and holds one section per experiment kind; every
// run writes CSV tables, summary.txt and manifest.txt into its output directory.
//
//   [experiment] kind, problem (path relative to the config file), seed, workers, out
//   [controls]   u1_points, u2_points, radius (drop controls with larger norm)
//   [validate]   samples
//   [simulate]   t, x, y, paths, steps, u1, u2, store_paths, admissibility_K, exp_c
//   [operators]  samples, degree, eps, eta, eps_levels, eta_levels, theta_radii,
//                test_fn_scales, perturbations, delta_points, delta_r, delta_s
//   [solve]      form, nodes, x_lo, x_hi, time_steps, boundary, G, G_c, G_K, eps, eta,
//                embed, terminal, x0, all_slices
//   [tree]       t, x, depth, layout, max_nodes, y_max, embed
//   [certify]    t, x, depth, layout, max_nodes, corrupt, ladder_levels, ladder_span
//   [embed]      t, x, depth, delta_samples, delta_points
//   [sweep]      radii, x0 (grid and solver settings come from [solve])

#include <Eigen/Core>
#include <boost/version.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stp/stp.hpp"

namespace stp {

inline constexpr const char* kToolVersion = "stp_lab 1.0.0";

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"validate", "simulate", "operators", "solve",
                                                "tree",     "certify",  "embed",     "sweep"};
    return kinds;
}

struct RunOptions {
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::vector<std::string> overrides;  // section.key=value
};

struct RunResult {
    int exit_code = 0;
    std::string message;  // diagnostic on failure
    std::map<std::string, std::string> summary;
};

namespace detail {

/// Accepts subcommand names and their long config spellings.
inline std::string canonical_kind(const std::string& kind) {
    if (kind == "embed-equivalence") return "embed";
    if (kind == "radius-sweep") return "sweep";
    return kind;
}

struct Context {
    ConfigFile config;
    ProblemSpec spec;
    std::string problem_path;
    std::string problem_text;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::filesystem::path out;
    std::map<std::string, std::string> summary;
    std::vector<std::string> artifacts;

    std::ofstream open(const std::string& name) {
        std::ofstream f(out / name);
        if (!f) throw ConfigError("cannot write '" + (out / name).string() + "'");
        artifacts.push_back(name);
        return f;
    }
    template <typename T>
    void note(const std::string& key, const T& value) {
        std::ostringstream s;
        if constexpr (std::is_floating_point_v<T>) {
            s << fmt_double(value);
        } else {
            s << value;
        }
        summary[key] = s.str();
    }
};

inline Vector read_point(const ConfigSection& s, const std::string& key, std::size_t dim, double fallback) {
    if (auto v = s.numbers(key, dim)) return to_vector(*v);
    return Vector::Constant(static_cast<Eigen::Index>(dim), fallback);
}

inline std::size_t count(const ConfigSection& s, const std::string& key, std::int64_t fallback, std::int64_t min = 1) {
    const auto v = s.integer(key, fallback);
    if (v < min) throw ConfigError("[" + s.name() + "] " + key + " must be >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
}

inline ControlGrid control_grid(const Context& ctx) {
    const auto s = ctx.config.section_or_empty("controls");
    s.check_keys({"u1_points", "u2_points", "radius"});
    ControlGrid grid = make_lattice_grid(ctx.spec, count(s, "u1_points", 5), count(s, "u2_points", 3));
    if (auto R = s.number("radius")) grid = truncate_grid(grid, *R, ctx.spec.marks);
    return grid;
}

inline std::string point_label(double t, const Vector& x) {
    std::string out = "t=" + fmt_double(t) + ";x=";
    for (Eigen::Index j = 0; j < x.size(); ++j) out += (j ? ":" : "") + fmt_double(x[j]);
    return out;
}

inline void write_header_x(std::ostream& out, std::size_t d, const std::string& prefix = "x_") {
    for (std::size_t j = 0; j < d; ++j) out << "," << prefix << (j + 1);
}

inline void write_x(std::ostream& out, const Vector& x) {
    for (Eigen::Index j = 0; j < x.size(); ++j) out << "," << fmt_double(x[j]);
}

inline std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
    return out;
}

// ---------------------------------------------------------------- kinds

inline void run_validate(Context& ctx) {
    const auto s = ctx.config.section_or_empty("validate");
    s.check_keys({"samples"});
    const auto report = validate_problem(ctx.spec, count(s, "samples", 1000), ctx.seed);
    auto csv = ctx.open("violations.csv");
    csv << "check,t";
    write_header_x(csv, ctx.spec.d);
    csv << ",y,control_norm,value,bound\n";
    std::map<std::string, std::size_t> by_check;
    for (const auto& v : report.violations) {
        csv << v.check << "," << fmt_double(v.t);
        write_x(csv, v.x);
        csv << "," << fmt_double(v.y) << "," << fmt_double(v.control_norm) << "," << fmt_double(v.value) << ","
            << fmt_double(v.bound) << "\n";
        ++by_check[v.check];
    }
    ctx.note("samples", report.samples);
    ctx.note("violations", report.violations.size());
    for (const auto& [check, n] : by_check) ctx.note("violations." + check, n);
    if (!report.ok()) {
        throw ValidationError("validation failed: " + std::to_string(report.violations.size()) +
                              " violations (see violations.csv)");
    }
}

inline ControlValue read_control(const ConfigSection& s, const ProblemSpec& spec) {
    ControlValue u = spec.zero_control();
    if (auto v = s.numbers("u1", spec.q)) u.u1 = to_vector(*v);
    const std::size_t marks = spec.marks.num_marks();
    if (auto v = s.numbers("u2", marks * spec.n)) {
        for (std::size_t k = 0; k < marks; ++k) {
            u.u2[k] = to_vector(std::vector<double>(v->begin() + static_cast<std::ptrdiff_t>(k * spec.n),
                                                    v->begin() + static_cast<std::ptrdiff_t>((k + 1) * spec.n)));
        }
    }
    return u;
}

inline void run_simulate(Context& ctx) {
    const auto s = ctx.config.section_or_empty("simulate");
    s.check_keys({"t", "x", "y", "paths", "steps", "u1", "u2", "store_paths", "admissibility_K", "exp_c"});
    const auto& spec = ctx.spec;
    const double t = s.number("t", 0.0);
    const Vector x = read_point(s, "x", spec.d, 0.0);
    const double y = s.number("y", 0.0);
    const std::size_t paths = count(s, "paths", 1000), steps = count(s, "steps", 100);
    const bool store = s.boolean("store_paths").value_or(true);
    const auto policy = ControlPolicy::constant(read_control(s, spec));

    const auto bundle = simulate(spec, policy, t, x, y, paths, steps, ctx.seed, {store, ctx.workers});
    if (store) {
        auto csv = ctx.open("paths.csv");
        write_paths_csv(csv, bundle, spec.num_processes());
    }
    auto csv = ctx.open("terminal.csv");
    csv << "path";
    write_header_x(csv, spec.d, "X_T_");
    csv << ",Y_T,g_X_T\n";
    double sum = 0.0, sum_sq = 0.0, y_sum = 0.0;
    for (std::size_t p = 0; p < paths; ++p) {
        const Vector xt = bundle.X_terminal(p);
        const double gx = spec.g(xt), yt = bundle.Y_terminal(p);
        csv << p;
        write_x(csv, xt);
        csv << "," << fmt_double(yt) << "," << fmt_double(gx) << "\n";
        sum += gx;
        sum_sq += gx * gx;
        y_sum += yt;
    }
    const double n = static_cast<double>(paths);
    const double mean = sum / n;
    ctx.note("paths", paths);
    ctx.note("steps", steps);
    ctx.note("mean_g_X_T", mean);
    ctx.note("stderr_g_X_T", std::sqrt(std::max(0.0, sum_sq / n - mean * mean) / n));
    ctx.note("mean_Y_T", y_sum / n);
    std::size_t jumps = 0;
    for (const auto& log : bundle.jump_log) jumps += log.size();
    ctx.note("jumps", jumps);
    if (auto K = s.number("admissibility_K")) {
        if (!store) throw ConfigError("[simulate] admissibility_K needs store_paths = true");
        ctx.note("admissible", check_admissibility(spec, policy, spec.x_box, spec.y_box.lo[0], spec.y_box.hi[0], *K, bundle)
                                   ? "true"
                                   : "false");
    }
    if (auto c = s.number("exp_c")) {
        ctx.note("exp_transform_deviation", exp_transform_check(spec, policy, *c, t, x, y, paths, steps, ctx.seed, ctx.workers));
    }
}

inline void run_operators(Context& ctx) {
    const auto s = ctx.config.section_or_empty("operators");
    s.check_keys({"samples", "degree", "eps", "eta", "eps_levels", "eta_levels", "theta_radii", "test_fn_scales",
                  "perturbations", "delta_points", "delta_r", "delta_s"});
    const auto& spec = ctx.spec;
    const std::size_t d = spec.d;
    const std::size_t samples = count(s, "samples", 100);
    const std::size_t degree = count(s, "degree", 2, 0);
    const double eps = s.number("eps", 0.1), eta = s.number("eta", 0.0);
    SemiLimitSchedule schedule{s.numbers("eps_levels").value_or(std::vector<double>{0.4, 0.2, 0.1}),
                               s.numbers("eta_levels").value_or(std::vector<double>{0.4, -0.2, 0.1}),
                               s.numbers("theta_radii").value_or(std::vector<double>{0.1, 0.05, 0.025}),
                               s.numbers("test_fn_scales").value_or(std::vector<double>{0.1, 0.05, 0.025}),
                               count(s, "perturbations", 3), ctx.seed};
    schedule.check();
    DeltaSearch search{Box{Vector::Constant(static_cast<Eigen::Index>(d), -s.number("delta_r", 1.0)),
                           Vector::Constant(static_cast<Eigen::Index>(d), s.number("delta_r", 1.0))},
                       -s.number("delta_s", 1.0), s.number("delta_s", 1.0), count(s, "delta_points", 5, 2)};
    const ControlGrid grid = control_grid(ctx);
    const ControlSet controls = grid;
    const ControlValue u0 = spec.neutral_control.value_or(spec.zero_control());

    std::vector<std::vector<OperatorRecord>> rows(samples);
    parallel_for(samples, ctx.workers, [&](std::size_t i) {
        auto rng = stream_engine(ctx.seed, i);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double t = unit(rng) * spec.horizon;
        const Vector x = sample_box(spec.x_box, rng);
        const double y = spec.y_box.lo[0] + unit(rng) * (spec.y_box.hi[0] - spec.y_box.lo[0]);
        Vector p(static_cast<Eigen::Index>(d));
        Matrix B(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (Eigen::Index j = 0; j < p.size(); ++j) p[j] = 2.0 * unit(rng) - 1.0;
        for (Eigen::Index j = 0; j < B.size(); ++j) B.data()[j] = 2.0 * unit(rng) - 1.0;
        const Matrix A = 0.5 * (B + B.transpose());
        const TestFunction phi = TestFunction::random_polynomial(d, degree, rng);
        const Theta th = make_theta(t, x, y, p, A);
        const std::string label = point_label(t, x) + ";y=" + fmt_double(y);

        auto& out = rows[i];
        out.push_back({"F_u0", label, F_u(th, u0, spec), 1});
        out.push_back({"N_u0_norm", label, N_u(t, x, y, p, u0, spec).norm(), 1});
        if (spec.marks.num_marks() > 0) out.push_back({"Delta_u0_e1", label, Delta_ue(t, x, y, u0, 0, phi, spec), 1});
        out.push_back({"J_u0", label, J_u(t, x, y, u0, phi, spec), 1});
        const auto h = H_eps_eta_eval(th, phi, eps, eta, controls, spec);
        out.push_back({"H_eps_eta", label, h.value, h.admissible});
        const auto profile = semi_limit_profile(th, phi, schedule, controls, spec);
        out.push_back({"H_upper", label, profile.upper.back(), schedule.levels()});
        out.push_back({"H_lower", label, profile.lower.back(), schedule.levels()});
        const auto delta = delta_gap(t, x, y, p, phi, search, controls, spec);
        out.push_back({"delta", label, delta.value, delta.inside});
        out.push_back({"L_u0", label, generator_L_u(t, x, u0, phi, spec), 1});
        const auto bh = bold_H_eval(t, x, p, A, phi, grid, spec);
        out.push_back({"bold_H", label, bh.value, grid.size()});
    });
    std::vector<OperatorRecord> flat;
    for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    auto csv = ctx.open("operators.csv");
    write_operator_csv(csv, flat);
    ctx.note("samples", samples);
    ctx.note("records", flat.size());
    ctx.note("controls", grid.size());
}

struct SolveSetup {
    SpaceTimeGrid grid;
    SolveForm form;
    GOperator G;
    SolveParams params;
    bool embed = false;
    bool terminal_layer = false;
};

inline SolveSetup solve_setup(const Context& ctx) {
    const auto s = ctx.config.section_or_empty("solve");
    s.check_keys({"form", "nodes", "x_lo", "x_hi", "time_steps", "boundary", "G", "G_c", "G_K", "eps", "eta", "embed",
                  "terminal", "x0", "all_slices"});
    const auto& spec = ctx.spec;
    const std::size_t d = spec.d;
    std::vector<std::size_t> nodes(d, 41);
    if (auto v = s.numbers("nodes", d)) {
        for (std::size_t j = 0; j < d; ++j) nodes[j] = static_cast<std::size_t>((*v)[j]);
    }
    Box domain = spec.x_box;
    if (auto v = s.numbers("x_lo", d)) domain.lo = to_vector(*v);
    if (auto v = s.numbers("x_hi", d)) domain.hi = to_vector(*v);
    const std::string boundary = s.text("boundary", "clamp");
    if (boundary != "clamp" && boundary != "extrapolate") throw ConfigError("[solve] boundary must be clamp or extrapolate");
    const std::string form = s.text("form", "control");
    if (form != "control" && form != "target") throw ConfigError("[solve] form must be control or target");
    const std::string g_kind = s.text("G", "inactive");
    GOperator G;
    if (g_kind == "inactive") {
        G = GOperator::inactive();
    } else if (g_kind == "value_shift") {
        G = GOperator::value_shift(s.number("G_c", 1.0));
    } else if (g_kind == "obstacle") {
        G = GOperator::obstacle(s.number("G_c", 1.0));
    } else if (g_kind == "gradient_bound") {
        G = GOperator::gradient_bound(s.number("G_K", 1.0));
    } else {
        throw ConfigError("[solve] unknown G '" + g_kind + "'");
    }
    const std::string terminal = s.text("terminal", "payoff");
    if (terminal != "payoff" && terminal != "terminal_layer") throw ConfigError("[solve] terminal must be payoff or terminal_layer");
    SolveParams params{s.number("eps", 0.0), s.number("eta", 0.0), ctx.workers};
    return SolveSetup{SpaceTimeGrid(domain, nodes, count(s, "time_steps", 100), spec.horizon,
                                    boundary == "clamp" ? BoundaryMode::clamp : BoundaryMode::linear_extrapolate),
                      form == "control" ? SolveForm::control : SolveForm::target,
                      G,
                      params,
                      s.boolean("embed").value_or(false),
                      terminal == "terminal_layer"};
}

inline void note_cfl(Context& ctx, const CflCertificate& cfl) {
    ctx.note("cfl.dt", cfl.dt);
    ctx.note("cfl.max_dt", cfl.max_dt);
    ctx.note("cfl.sup_rate", cfl.sup_rate);
    ctx.note("cfl.passed", cfl.passed ? "true" : "false");
    ctx.note("cfl.diagonally_dominant", cfl.diagonally_dominant ? "true" : "false");
}

inline SolveResult solve_with(Context& ctx, SolveSetup& setup, const ControlGrid& base) {
    const ProblemSpec* spec = &ctx.spec;
    std::optional<EmbeddedProblem> embedded;
    ControlSet controls = base;
    if (setup.embed) {
        if (setup.form != SolveForm::target) throw ConfigError("[solve] embed = true needs form = target");
        embedded = embed_control_problem(ctx.spec);
        spec = &embedded->spec;
        controls = EmbeddingSpan{embedded->layout, base};
    }
    std::vector<double> terminal(setup.grid.num_nodes());
    if (setup.terminal_layer) {
        TerminalParams tp;
        tp.workers = ctx.workers;
        const auto res = solve_terminal(*spec, setup.G, setup.grid, tp);
        ctx.note("terminal.iterations", res.iterations);
        ctx.note("terminal.residual", res.residual);
        terminal = res.values;
    } else {
        for (std::size_t i = 0; i < terminal.size(); ++i) terminal[i] = spec->g(setup.grid.point(i));
    }
    // Report the bound before solve_hjb refuses, so a CFL failure still leaves it in the summary.
    note_cfl(ctx, cfl_check(*spec, setup.grid, controls));
    return solve_hjb(*spec, terminal, setup.grid, setup.form, setup.G, setup.params, controls);
}

inline void run_solve(Context& ctx) {
    auto setup = solve_setup(ctx);
    const auto s = ctx.config.section_or_empty("solve");
    const ControlGrid base = control_grid(ctx);
    const auto result = solve_with(ctx, setup, base);
    auto csv = ctx.open("field.csv");
    if (s.boolean("all_slices").value_or(false)) {
        write_field_csv(csv, setup.grid, result.field);
    } else {
        write_field_csv(csv, setup.grid, result.field, 0);
    }
    ctx.note("form", setup.form == SolveForm::control ? "control" : "target");
    ctx.note("G", setup.G.name());
    ctx.note("nodes", setup.grid.num_nodes());
    ctx.note("time_steps", setup.grid.time_steps());
    ctx.note("controls", base.size());
    ctx.note("empty_nodes", result.empty_nodes);
    if (auto x0 = s.numbers("x0", ctx.spec.d)) ctx.note("value_at_x0", result.field.value(setup.grid, 0, to_vector(*x0)));
}

struct TreeSetup {
    double t = 0.0;
    Vector x;
    std::size_t depth = 1;
    TreeOptions options;
};

inline TreeSetup tree_setup(const ConfigSection& s, const ProblemSpec& spec, std::size_t depth, BranchLayout layout) {
    TreeSetup out;
    out.t = s.number("t", 0.0);
    out.x = read_point(s, "x", spec.d, 0.0);
    out.depth = count(s, "depth", static_cast<std::int64_t>(depth));
    const std::string l = s.text("layout", layout == BranchLayout::product ? "product" : "complete");
    if (l != "product" && l != "complete") throw ConfigError("[" + s.name() + "] layout must be product or complete");
    out.options.layout = l == "product" ? BranchLayout::product : BranchLayout::complete;
    out.options.max_nodes = count(s, "max_nodes", 2000000);
    return out;
}

inline void write_profile(std::ostream& csv, const ScenarioTree& tree, const FeasibilityProfile& profile,
                          std::size_t d) {
    csv << "node,level,t";
    write_header_x(csv, d);
    csv << ",value,control\n";
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        const auto& node = tree.nodes[n];
        csv << n << "," << node.level << "," << fmt_double(node.t);
        write_x(csv, node.x);
        csv << "," << fmt_double(profile.value[n]) << ",";
        if (profile.control[n]) csv << *profile.control[n];
        csv << "\n";
    }
}

inline void run_tree(Context& ctx) {
    const auto s = ctx.config.section_or_empty("tree");
    s.check_keys({"t", "x", "depth", "layout", "max_nodes", "y_max", "embed"});
    const bool embed = s.boolean("embed").value_or(false);
    const auto setup = tree_setup(s, ctx.spec, 4, embed ? BranchLayout::complete : BranchLayout::product);
    const ControlGrid base = control_grid(ctx);
    const double y_max = s.number("y_max", 1e6);
    std::optional<EmbeddedProblem> embedded;
    const ProblemSpec* spec = &ctx.spec;
    ControlSet controls = base;
    if (embed) {
        embedded = embed_control_problem(ctx.spec);
        spec = &embedded->spec;
        controls = EmbeddingSpan{embedded->layout, base};
    }
    const auto tree = build_tree(*spec, setup.t, setup.x, setup.depth, controls, setup.options);
    const auto profile = tree_target_value(tree, *spec, ctx.spec.payoff, controls, y_max);
    const auto dp = tree_dp_minimum(tree, ctx.spec.payoff);
    auto csv = ctx.open("tree.csv");
    write_profile(csv, tree, profile, ctx.spec.d);
    ctx.note("nodes", tree.nodes.size());
    ctx.note("branches", tree.branches.size());
    ctx.note("controls", base.size());
    ctx.note("root_value", profile.root());
    ctx.note("root_dp_expectation", dp.root());
}

inline void run_certify(Context& ctx) {
    const auto s = ctx.config.section_or_empty("certify");
    s.check_keys({"t", "x", "depth", "layout", "max_nodes", "corrupt", "ladder_levels", "ladder_span"});
    const auto setup = tree_setup(s, ctx.spec, 5, BranchLayout::product);
    const ControlGrid grid = control_grid(ctx);
    const LadderOptions ladder{count(s, "ladder_levels", 9), s.number("ladder_span", 1.0)};
    const auto tree = build_tree(ctx.spec, setup.t, setup.x, setup.depth, grid, setup.options);

    const auto super = builtin_supersolution(ctx.spec, grid);
    const auto sub = builtin_subsolution(ctx.spec);
    std::vector<std::pair<std::string, Certificate>> certs;
    certs.emplace_back(super.label, certify_supersolution(super, tree, ctx.spec, grid, ladder));
    certs.emplace_back(sub.label, certify_subsolution(sub, tree, ctx.spec, grid, ladder));
    if (const double c = s.number("corrupt", 0.0); c != 0.0) {
        auto bad = super;
        bad.label = "builtin_super_minus_" + fmt_double(c);
        bad.w = [base = super.w, c](double t, const Vector& x) { return base(t, x) - c; };
        certs.emplace_back(bad.label, certify_supersolution(bad, tree, ctx.spec, grid, ladder));
    }
    auto csv = ctx.open("certificates.csv");
    csv << "candidate,verdict,reason,witness_node,witness_control,witness_y,checked_nodes,used_ladder\n";
    for (const auto& [label, c] : certs) {
        csv << label << "," << (c.certified() ? "certified" : "refuted") << ",\"" << c.reason << "\",";
        if (c.witness_node) csv << *c.witness_node;
        csv << ",";
        if (c.witness_control) csv << *c.witness_control;
        csv << ",";
        if (c.witness_y) csv << fmt_double(*c.witness_y);
        csv << "," << c.checked_nodes << "," << (c.used_ladder ? "true" : "false") << "\n";
        ctx.note("verdict." + label, c.certified() ? "certified" : "refuted");
    }

    const auto profile = tree_target_value(tree, ctx.spec, ctx.spec.payoff, grid);
    std::vector<CandidateFunction> subs, supers;
    if (certs[0].second.certified()) supers.push_back(super);
    if (certs[1].second.certified()) subs.push_back(sub);
    const auto report = sandwich_check(subs, supers, tree, profile);
    auto sw = ctx.open("sandwich.csv");
    sw << "node,level,t";
    write_header_x(sw, ctx.spec.d);
    sw << ",lower,value,upper,ok\n";
    std::size_t v = 0;
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        const auto& node = tree.nodes[n];
        double lo = -kInf, hi = kInf;
        for (const auto& w : subs) lo = std::max(lo, w(node.t, node.x));
        for (const auto& w : supers) hi = std::min(hi, w(node.t, node.x));
        const bool ok = v >= report.violations.size() || report.violations[v].node != n;
        if (!ok) ++v;
        sw << n << "," << node.level << "," << fmt_double(node.t);
        write_x(sw, node.x);
        sw << "," << fmt_double(lo) << "," << fmt_double(profile.value[n]) << "," << fmt_double(hi) << ","
           << (ok ? "true" : "false") << "\n";
    }
    ctx.note("nodes", tree.nodes.size());
    ctx.note("sandwich.candidates", subs.size() + supers.size());
    ctx.note("sandwich.violations", report.violations.size());
}

inline void run_embed(Context& ctx) {
    const auto s = ctx.config.section_or_empty("embed");
    s.check_keys({"t", "x", "depth", "delta_samples", "delta_points", "max_nodes", "layout"});
    const auto setup = tree_setup(s, ctx.spec, 6, BranchLayout::complete);
    const ControlGrid base = control_grid(ctx);
    const auto embedded = embed_control_problem(ctx.spec);
    const EmbeddingSpan span{embedded.layout, base};
    const auto tree = build_tree(embedded.spec, setup.t, setup.x, setup.depth, span, setup.options);
    const auto target = tree_target_value(tree, embedded.spec, ctx.spec.payoff, span);
    const auto dp = tree_dp_minimum(tree, ctx.spec.payoff);

    auto csv = ctx.open("embed.csv");
    csv << "node,level,t";
    write_header_x(csv, ctx.spec.d);
    csv << ",target,dp_expectation,abs_diff\n";
    double worst = 0.0;
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        const auto& node = tree.nodes[n];
        const double diff = std::abs(target.value[n] - dp.value[n]);
        worst = std::max(worst, diff);
        csv << n << "," << node.level << "," << fmt_double(node.t);
        write_x(csv, node.x);
        csv << "," << fmt_double(target.value[n]) << "," << fmt_double(dp.value[n]) << "," << fmt_double(diff) << "\n";
    }
    ctx.note("nodes", tree.nodes.size());
    ctx.note("root_target", target.root());
    ctx.note("root_dp_expectation", dp.root());
    ctx.note("max_abs_diff", worst);

    // δ on the embedded problem: the free (α, γ) make 𝐍 the whole lattice.
    const std::size_t samples = count(s, "delta_samples", 100, 0);
    const std::size_t d = ctx.spec.d;
    DeltaSearch search{Box{Vector::Constant(static_cast<Eigen::Index>(d), -1.0), Vector::Constant(static_cast<Eigen::Index>(d), 1.0)},
                       -1.0, 1.0, count(s, "delta_points", 5, 2)};
    std::vector<double> values(samples);
    std::vector<std::string> labels(samples);
    parallel_for(samples, ctx.workers, [&](std::size_t i) {
        auto rng = stream_engine(ctx.seed, i);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double t = unit(rng) * ctx.spec.horizon;
        const Vector x = sample_box(ctx.spec.x_box, rng);
        const double y = 4.0 * unit(rng) - 2.0;
        Vector p(static_cast<Eigen::Index>(d));
        for (Eigen::Index j = 0; j < p.size(); ++j) p[j] = 4.0 * unit(rng) - 2.0;
        const TestFunction phi = TestFunction::random_polynomial(d, 3, rng);
        values[i] = delta_gap(t, x, y, p, phi, search, span, embedded.spec).value;
        labels[i] = point_label(t, x) + ";y=" + fmt_double(y);
    });
    auto dcsv = ctx.open("delta.csv");
    dcsv << "sample,point,delta\n";
    std::size_t infinite = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        dcsv << i << "," << labels[i] << "," << fmt_double(values[i]) << "\n";
        infinite += values[i] == kInf;
    }
    ctx.note("delta_samples", samples);
    ctx.note("delta_infinite", infinite);
}

inline void run_sweep(Context& ctx) {
    const auto s = ctx.config.section("sweep");
    s.check_keys({"radii", "x0"});
    const auto radii = s.numbers("radii").value_or(std::vector<double>{});
    if (radii.empty()) throw ConfigError("[sweep] radii must list at least one radius");
    const Vector x0 = read_point(s, "x0", ctx.spec.d, 0.0);
    const ControlGrid base = control_grid(ctx);
    auto csv = ctx.open("sweep.csv");
    csv << "radius,controls,value_at_x0,max_dt\n";
    double lo = kInf, hi = -kInf;
    for (double R : radii) {
        auto setup = solve_setup(ctx);
        const ControlGrid grid = truncate_grid(base, R, ctx.spec.marks);
        const auto result = solve_with(ctx, setup, grid);
        const double v = result.field.value(setup.grid, 0, x0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        csv << fmt_double(R) << "," << grid.size() << "," << fmt_double(v) << "," << fmt_double(result.cfl.max_dt) << "\n";
    }
    ctx.note("radii", join(radii));
    ctx.note("value_spread", hi - lo);
}

inline std::string now_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

inline void write_manifest(const Context& ctx, const std::string& kind, const std::string& started, double seconds,
                           const RunResult& result) {
    std::ofstream m(ctx.out / "manifest.txt");
    m << "tool = " << kToolVersion << "\n";
    m << "kind = " << kind << "\n";
    m << "seed = " << ctx.seed << "\n";
    m << "workers = " << ctx.workers << "\n";
    m << "config = " << ctx.config.origin() << "\n";
    m << "problem = " << ctx.problem_path << "\n";
    m << "exit_code = " << result.exit_code << "\n";
    m << "compiler = " << __VERSION__ << "\n";
    m << "eigen = " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n";
    m << "boost = " << BOOST_VERSION / 100000 << "." << BOOST_VERSION / 100 % 1000 << "." << BOOST_VERSION % 100 << "\n";
    m << "started = " << started << "\n";
    m << "elapsed_seconds = " << fmt_double(seconds) << "\n";
    m << "rerun = stp_lab " << kind << " --config " << (ctx.out / "config.ini").string() << "\n";
    m << "artifacts =";
    for (const auto& a : ctx.artifacts) m << " " << a;
    m << "\n\n# effective experiment config\n" << ctx.config.canonical();
    m << "\n# problem file\n" << ctx.problem_text;
}

inline void write_summary(const Context& ctx, const std::string& kind, const RunResult& result) {
    std::ofstream out(ctx.out / "summary.txt");
    out << "kind = " << kind << "\n";
    out << "status = " << (result.exit_code == 0 ? "ok" : "error") << "\n";
    if (!result.message.empty()) out << "error = " << result.message << "\n";
    for (const auto& [k, v] : result.summary) out << k << " = " << v << "\n";
}

}  // namespace detail

/// Runs one experiment kind. Errors are mapped to exit codes (parse 2, validation 3,
/// numerical 4, anything else 1) and reported in summary.txt when the output
/// directory could be created.
inline RunResult run_experiment(const std::string& requested_kind, ConfigFile config, const RunOptions& options) {
    using clock = std::chrono::steady_clock;
    RunResult result;
    detail::Context ctx;
    const std::string kind = detail::canonical_kind(requested_kind);
    const std::string started = detail::now_utc();
    const auto t0 = clock::now();
    bool have_out = false;
    try {
        const auto& kinds = experiment_kinds();
        if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) throw ConfigError("unknown experiment kind '" + requested_kind + "'");
        for (const auto& o : options.overrides) {
            const auto eq = o.find('='), dot = o.find('.');
            if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
                throw ConfigError("override '" + o + "' must look like section.key=value");
            }
            config.set(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
        }
        if (options.seed) config.set("experiment", "seed", std::to_string(*options.seed));
        if (options.workers) config.set("experiment", "workers", std::to_string(*options.workers));
        if (!options.out_dir.empty()) config.set("experiment", "out", options.out_dir);

        config.check_sections({"experiment", "controls", "validate", "simulate", "operators", "solve", "tree", "certify",
                               "embed", "sweep"});
        const auto& exp = config.section("experiment");
        exp.check_keys({"kind", "problem", "seed", "workers", "out"});
        if (auto k = exp.text("kind"); k && detail::canonical_kind(*k) != kind) {
            throw ConfigError("config is for kind '" + *k + "', not '" + requested_kind + "'");
        }
        ctx.seed = static_cast<std::uint64_t>(exp.integer("seed", 0));
        ctx.workers = detail::count(exp, "workers", 1);
        ctx.out = exp.text("out", "out/" + kind);
        std::filesystem::create_directories(ctx.out);
        have_out = true;

        std::filesystem::path problem = exp.require_text("problem");
        if (problem.is_relative()) problem = std::filesystem::path(config.origin()).parent_path() / problem;
        ctx.problem_path = problem.string();
        const auto problem_file = ConfigFile::parse_file(ctx.problem_path);
        ctx.problem_text = problem_file.canonical();
        ctx.spec = load_problem(problem_file);
        ctx.config = config;

        // Self-contained rerun inputs: stp_lab <kind> --config <out>/config.ini
        ConfigFile rerun = config;
        rerun.set("experiment", "problem", "problem.ini");
        rerun.set("experiment", "kind", kind);
        rerun.erase("experiment", "out");
        std::ofstream(ctx.out / "config.ini") << rerun.canonical();
        std::ofstream(ctx.out / "problem.ini") << ctx.problem_text;

        if (kind == "validate") detail::run_validate(ctx);
        if (kind == "simulate") detail::run_simulate(ctx);
        if (kind == "operators") detail::run_operators(ctx);
        if (kind == "solve") detail::run_solve(ctx);
        if (kind == "tree") detail::run_tree(ctx);
        if (kind == "certify") detail::run_certify(ctx);
        if (kind == "embed") detail::run_embed(ctx);
        if (kind == "sweep") detail::run_sweep(ctx);
    } catch (const Error& e) {
        result.exit_code = static_cast<int>(e.category());
        result.message = e.what();
    } catch (const std::exception& e) {
        result.exit_code = 1;
        result.message = e.what();
    }
    if (ctx.config.origin().empty()) ctx.config = config;
    result.summary = ctx.summary;
    if (have_out) {
        const double seconds = std::chrono::duration<double>(clock::now() - t0).count();
        detail::write_summary(ctx, kind, result);
        detail::write_manifest(ctx, kind, started, seconds, result);
    }
    return result;
}

}  // namespace stp
