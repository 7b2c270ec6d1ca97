// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "stp/experiments.hpp"
#include "stp/stp.hpp"
#include "support.hpp"

using namespace stp;
using namespace stp::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = STP_CONFIG_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

RunResult run_config(const std::string& name, const fs::path& out, std::optional<std::size_t> workers = std::nullopt) {
    const auto config = ConfigFile::parse_file((kConfigs / name).string());
    RunOptions options;
    options.out_dir = out.string();
    options.workers = workers;
    return run_experiment(config.section("experiment").require_text("kind"), config, options);
}

std::vector<double> sample(const SpaceTimeGrid& grid, const std::function<double(const Vector&)>& f) {
    std::vector<double> v(grid.num_nodes());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(grid.point(i));
    return v;
}

Theta theta1(double t, double x, double y, double p, double A) {
    return make_theta(t, vec({x}), y, vec({p}), mat1(A));
}

ProblemSpec random_model(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto set = zero_set(1, 1, 1, 1);
    set.mu_y.u1_coef = vec({unit(rng)});
    set.mu_y.compensator = mat1(unit(rng));
    set.mu_y.y_coef = unit(rng);
    set.mu_x.c = vec({unit(rng)});
    set.mu_x.u1_coef = mat1(unit(rng));
    set.sigma_x.c = mat1(unit(rng));
    set.sigma_y.u1_coef = mat1(1.0);
    set.beta.c = mat1(unit(rng));
    set.b.u2_coef = mat1(1.0);
    return make_spec(set, one_mark(0.5 + 0.5 * (unit(rng) + 1.0)), 1, 1, 1, 1.0, [](const Vector&) { return 0.0; });
}

// ---------------------------------------------------------------- criteria

Outcome embedding_equivalence(RunResult& embed, double elapsed) {
    if (embed.exit_code != 0) return {false, embed.message};
    const double diff = std::stod(embed.summary.at("max_abs_diff"));
    return {diff <= 1e-9 && elapsed < 10.0,
            "nodes=" + embed.summary.at("nodes") + " max_abs_diff=" + num(diff) + " time=" + num(elapsed) + "s"};
}

Outcome delta_degeneracy(RunResult& embed) {
    if (embed.exit_code != 0) return {false, embed.message};
    const auto samples = embed.summary.at("delta_samples"), infinite = embed.summary.at("delta_infinite");
    return {samples == "100" && infinite == samples, "infinite=" + infinite + "/" + samples};
}

Outcome pde_vs_monte_carlo() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto spec = load_problem_file((kConfigs / "problems/pure_jump.ini").string());
    SpaceTimeGrid grid(spec.x_box, {400}, 200, spec.horizon, BoundaryMode::clamp);
    const ControlGrid single = grid_of({spec.zero_control()});
    const auto res = solve_hjb(spec, sample(grid, spec.payoff), grid, SolveForm::control, GOperator::inactive(), {}, single);
    const Vector x0 = vec({0.0});
    const double v = res.field.value(grid, 0, x0);

    const std::size_t paths = 100000;
    const auto bundle = simulate(spec, ControlPolicy::constant(spec.zero_control()), 0.0, x0, 0.0, paths, 200, 2024,
                                 {false, 4});
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t p = 0; p < paths; ++p) {
        const double g = spec.g(bundle.X_terminal(p));
        sum += g;
        sum_sq += g * g;
    }
    const double mean = sum / paths;
    const double se = std::sqrt(std::max(0.0, sum_sq / paths - mean * mean) / paths);
    const double tol = std::max(2.0 * se, 5e-3);
    const double elapsed = seconds_since(t0);
    return {std::abs(v - mean) <= tol && elapsed < 120.0,
            "V=" + num(v) + " mc=" + num(mean) + " se=" + num(se) + " tol=" + num(tol) + " time=" + num(elapsed) + "s"};
}

struct PerronSetup {
    ProblemSpec spec;
    ControlGrid grid;
    ScenarioTree tree;
};

PerronSetup perron_setup() {
    auto spec = load_problem_file((kConfigs / "problems/appendix_a.ini").string());
    ControlGrid grid = make_lattice_grid(spec, 5, 5);
    auto tree = build_tree(spec, 0.0, vec({0.5}), 5, grid);
    return {std::move(spec), std::move(grid), std::move(tree)};
}

Outcome perron_certification(const PerronSetup& s) {
    const auto super = builtin_supersolution(s.spec, s.grid);
    const auto sub = builtin_subsolution(s.spec);
    const auto cs = certify_supersolution(super, s.tree, s.spec, s.grid);
    const auto cb = certify_subsolution(sub, s.tree, s.spec, s.grid);
    auto bad = super;
    bad.w = [base = super.w](double t, const Vector& x) { return base(t, x) - 0.5; };
    const auto cbad = certify_supersolution(bad, s.tree, s.spec, s.grid);
    const bool leaf = cbad.witness_node && s.tree.is_leaf(*cbad.witness_node);
    return {cs.certified() && cb.certified() && !cbad.certified() && leaf,
            std::string("super=") + (cs.certified() ? "certified" : "refuted") +
                " sub=" + (cb.certified() ? "certified" : "refuted") +
                " corrupted=" + (cbad.certified() ? "certified" : "refuted") +
                " leaf_witness=" + (leaf ? "yes" : "no") + " nodes=" + std::to_string(s.tree.nodes.size())};
}

Outcome sandwich(const PerronSetup& s) {
    const auto profile = tree_target_value(s.tree, s.spec, s.spec.payoff, s.grid);
    const auto report = sandwich_check({builtin_subsolution(s.spec)}, {builtin_supersolution(s.spec, s.grid)}, s.tree, profile);
    return {report.ok() && report.checked_nodes == s.tree.nodes.size(),
            "checked=" + std::to_string(report.checked_nodes) + " violations=" + std::to_string(report.violations.size())};
}

Outcome operator_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::size_t monotone = 0, ordered = 0, invariant = 0, ball = 0, ball_tested = 0, finite_gaps = 0;
    double worst_fd = 0.0;
    const double h = 1e-4;
    const SemiLimitSchedule sch{{0.6, 0.3, 0.15}, {0.5, -0.25, 0.1}, {0.2, 0.1, 0.05}, {0.2, 0.1, 0.05}, 2, 0};
    const int n = 1000;
    for (int trial = 0; trial < n; ++trial) {
        auto spec = random_model(rng);
        const ControlSet grid = make_lattice_grid(spec, 5, 5);
        const Theta th = theta1(0.5 * (unit(rng) + 1.0), unit(rng), unit(rng), unit(rng), unit(rng));
        TestFunction phi = TestFunction::random_polynomial(1, 3, rng);

        const double e1 = 0.5 * (unit(rng) + 1.0), e2 = e1 + 0.3 * (unit(rng) + 1.0);
        const double n1 = unit(rng), n2 = n1 - 0.3 * (unit(rng) + 1.0);
        monotone += H_eps_eta(th, phi, e1, n1, grid, spec) <= H_eps_eta(th, phi, e2, n2, grid, spec);

        SemiLimitSchedule s = sch;
        s.seed = static_cast<std::uint64_t>(trial);
        const auto profile = semi_limit_profile(th, phi, s, grid, spec);
        ordered += profile.lower.front() <= profile.upper.front();

        const ControlValue u = control(vec({unit(rng)}), {vec({unit(rng)})});
        const double shift = 10.0 * unit(rng);
        invariant += Delta_ue(th.t, th.x, th.y, u, 0, phi, spec) == Delta_ue(th.t, th.x, th.y, u, 0, phi.plus_constant(shift), spec);

        // derivatives, with a bump so the non-polynomial part is exercised too
        phi.add_bump(unit(rng), vec({unit(rng)}), 0.7);
        const double t = th.t;
        const Vector x = th.x, e = vec({h});
        auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
        worst_fd = std::max(worst_fd, rel((phi(t + h, x) - phi(t - h, x)) / (2 * h), phi.time_derivative(t, x)));
        worst_fd = std::max(worst_fd, rel((phi(t, x + e) - phi(t, x - e)) / (2 * h), phi.gradient(t, x)[0]));
        worst_fd = std::max(worst_fd, rel((phi.gradient(t, x + e)[0] - phi.gradient(t, x - e)[0]) / (2 * h), phi.hessian(t, x)(0, 0)));

        // control boxes straddling the search box, so both finite and infinite gaps occur
        const double R = 0.75 + 0.5 * (unit(rng) + 1.0);
        spec.u1_box = Box{vec({-R}), vec({R})};
        spec.u2_box = Box{vec({-R}), vec({R})};
        const ControlSet fine = make_lattice_grid(spec, 33, 9);
        const DeltaSearch search{Box{vec({-1.0}), vec({1.0})}, -1.0, 1.0, 9};
        const auto gap = delta_gap(0.2, vec({unit(rng)}), unit(rng), vec({0.2 * unit(rng)}), TestFunction::constant(1, 0.0),
                                   search, fine, spec);
        if (gap.value > gap.cell_diameter) {
            ++ball_tested;
            finite_gaps += std::isfinite(gap.value);
            bool inside = true;
            for (std::size_t i = 0; i < gap.lattice.size(); ++i) {
                if (gap.lattice[i].norm() < gap.value && !gap.member[i]) inside = false;
            }
            ball += inside;
        }
    }
    const double elapsed = seconds_since(t0);
    const std::size_t N = static_cast<std::size_t>(n);
    const bool ok = monotone == N && ordered == N && invariant == N && worst_fd <= 1e-6 && ball == ball_tested &&
                    ball_tested > 0 && elapsed < 30.0;
    return {ok, "monotone=" + std::to_string(monotone) + " ordered=" + std::to_string(ordered) +
                    " invariant=" + std::to_string(invariant) + " fd_rel_err=" + num(worst_fd) + " ball=" +
                    std::to_string(ball) + "/" + std::to_string(ball_tested) + " finite_gaps=" + std::to_string(finite_gaps) + " time=" + num(elapsed) + "s"};
}

Outcome exponential_transform() {
    auto set = zero_set(1, 0, 0, 0);
    set.mu_y.c = 1.0;
    const auto spec = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, [](const Vector&) { return 0.0; });
    const auto policy = ControlPolicy::constant(spec.zero_control());
    bool ok = true;
    std::string detail = "dev=";
    double previous = 0.0;
    for (std::size_t steps : {50, 100, 200, 400}) {
        const double dev = exp_transform_check(spec, policy, 1.0, 0.0, vec({0.0}), 0.5, 1, steps, 3);
        ok = ok && dev <= 2.0 * spec.horizon / static_cast<double>(steps);
        if (previous > 0.0) ok = ok && std::abs(dev / previous - 0.5) <= 0.1;
        detail += num(dev) + (steps < 400 ? "," : "");
        previous = dev;
    }

    auto full = zero_set(1, 0, 0, 1);
    full.mu_y.y_coef = 0.3;
    full.sigma_y.c = vec({0.4});
    full.b.c = vec({0.1});
    full.sigma_x.c = mat1(0.2);
    const auto jumpy = make_spec(full, one_mark(0.8), 1, 0, 0, 1.0, [](const Vector&) { return 0.0; });
    const double at_zero =
        exp_transform_check(jumpy, ControlPolicy::constant(jumpy.zero_control()), 0.0, 0.0, vec({0.0}), 0.7, 50, 40, 3);
    ok = ok && at_zero <= 1e-12;
    return {ok, detail + " c0_dev=" + num(at_zero)};
}

Outcome discrete_comparison() {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double worst = -kInf;
    for (int trial = 0; trial < 20; ++trial) {
        auto set = zero_set(1, 1, 0, 1);
        set.mu_x.c = vec({unit(rng)});
        set.mu_x.u1_coef = mat1(unit(rng));
        set.sigma_x.c = mat1(unit(rng));
        set.sigma_x.u1_coef = {mat1(0.5 * unit(rng))};
        set.beta.c = mat1(unit(rng));
        auto spec = make_spec(set, one_mark(0.5 * (unit(rng) + 1.0)), 1, 1, 0, 0.5, [](const Vector&) { return 0.0; });
        const ControlSet controls = make_lattice_grid(spec, 5, 1);
        const Box box{vec({-2.0}), vec({2.0})};
        SpaceTimeGrid probe(box, {41}, 1, 0.5, BoundaryMode::clamp);
        const double max_dt = cfl_check(spec, probe, controls).max_dt;
        SpaceTimeGrid grid(box, {41}, static_cast<std::size_t>(std::ceil(0.5 / max_dt)) + 1, 0.5, BoundaryMode::clamp);
        std::vector<double> g1(41), g2(41);
        for (std::size_t i = 0; i < 41; ++i) {
            g1[i] = unit(rng);
            g2[i] = g1[i] + 0.5 * (unit(rng) + 1.0);
        }
        const auto a = solve_hjb(spec, g1, grid, SolveForm::control, GOperator::inactive(), {}, controls);
        const auto b = solve_hjb(spec, g2, grid, SolveForm::control, GOperator::inactive(), {}, controls);
        for (std::size_t k = 0; k < a.field.slices.size(); ++k) {
            for (std::size_t i = 0; i < 41; ++i) worst = std::max(worst, a.field.slices[k][i] - b.field.slices[k][i]);
        }
    }
    return {worst <= 1e-12, "pairs=20 max(V1-V2)=" + num(worst)};
}

Outcome representation_exactness() {
    double worst = 0.0;
    std::size_t leaves = 0;
    for (std::size_t d : {1u, 2u}) {
        auto set = zero_set(d, 0, 0, 1);
        set.mu_x.c = Vector::Constant(static_cast<Eigen::Index>(d), 0.1);
        set.sigma_x.c = 0.4 * Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        set.beta.c = Matrix::Constant(static_cast<Eigen::Index>(d), 1, 0.5);
        MarkSpace marks({0.0, 1.0}, {{0.3, 0.2}});
        auto g = [](const Vector& x) { return std::tanh(x.sum()) + 0.1 * x.squaredNorm(); };
        const auto spec = make_spec(set, marks, d, 0, 0, 1.0, g);
        const auto tree = build_tree(spec, 0.0, Vector::Zero(static_cast<Eigen::Index>(d)), 6,
                                     grid_of({spec.zero_control()}), {BranchLayout::complete});
        std::vector<double> payoff(tree.nodes.size(), 0.0);
        for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
            if (tree.is_leaf(n)) payoff[n] = g(tree.nodes[n].x);
        }
        const auto rep = martingale_representation(tree, d, 1, payoff);
        const auto y = reconstruct(tree, rep);
        for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
            if (!tree.is_leaf(n)) continue;
            ++leaves;
            worst = std::max(worst, std::abs(y[n] - payoff[n]));
        }
    }
    return {worst <= 1e-10, "leaves=" + std::to_string(leaves) + " max_abs_err=" + num(worst)};
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "stp_acceptance_determinism";
    fs::remove_all(root);
    std::size_t compared = 0;
    std::string mismatch;
    for (const auto& entry : fs::directory_iterator(kConfigs)) {
        if (entry.path().extension() != ".ini") continue;
        const std::string name = entry.path().filename().string();
        const fs::path a = root / (name + ".w1a"), b = root / (name + ".w1b"), c = root / (name + ".w4");
        const auto ra = run_config(name, a, 1), rb = run_config(name, b, 1), rc = run_config(name, c, 4);
        if (ra.exit_code != rb.exit_code || ra.exit_code != rc.exit_code) mismatch += name + ":exit ";
        for (const auto& f : fs::directory_iterator(a)) {
            if (f.path().extension() != ".csv") continue;
            const auto file = f.path().filename();
            const std::string ref = slurp(f.path());
            if (ref != slurp(b / file) || ref != slurp(c / file)) mismatch += name + ":" + file.string() + " ";
            ++compared;
        }
    }
    fs::remove_all(root);
    return {mismatch.empty() && compared > 0, "csv_files=" + std::to_string(compared) + (mismatch.empty() ? "" : " differ: " + mismatch)};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("[%s] %2d %-26s %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    };

    const fs::path embed_out = fs::temp_directory_path() / "stp_acceptance_embed";
    fs::remove_all(embed_out);
    const auto t0 = std::chrono::steady_clock::now();
    RunResult embed = run_config("embed.ini", embed_out);
    const double embed_seconds = seconds_since(t0);
    fs::remove_all(embed_out);

    report(1, "embedding-equivalence", [&] { return embedding_equivalence(embed, embed_seconds); });
    report(2, "delta-degeneracy", [&] { return delta_degeneracy(embed); });
    report(3, "pde-vs-monte-carlo", pde_vs_monte_carlo);
    std::optional<PerronSetup> perron;
    report(4, "perron-certification", [&] {
        perron = perron_setup();
        return perron_certification(*perron);
    });
    report(5, "sandwich", [&] { return perron ? sandwich(*perron) : sandwich(perron_setup()); });
    report(6, "operator-properties", operator_suite);
    report(7, "exponential-transform", exponential_transform);
    report(8, "discrete-comparison", discrete_comparison);
    report(9, "representation-exactness", representation_exactness);
    report(10, "determinism", determinism);
    std::printf("%d of 10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
