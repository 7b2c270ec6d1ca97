#include <gtest/gtest.h>

#include <random>

#include "stp/problem_file.hpp"
#include "stp/validate.hpp"
#include "support.hpp"

using namespace stp;
using namespace stp::testing;

TEST(ControlNorm, ZeroControlIsZero) {
    MarkSpace marks = one_mark(0.25);
    EXPECT_EQ(control_norm(control(vec({0.0, 0.0}), {vec({0.0})}), marks), 0.0);
}

TEST(ControlNorm, EuclideanPartOnly) {
    MarkSpace marks = one_mark(0.25);
    EXPECT_DOUBLE_EQ(control_norm(control(vec({3.0, 4.0}), {vec({0.0})}), marks), 5.0);
}

TEST(ControlNorm, MarkPartHandEvaluated) {
    MarkSpace marks = one_mark(0.25);
    EXPECT_DOUBLE_EQ(control_norm(control(vec({0.0}), {vec({2.0})}), marks), 1.0);
}

TEST(ControlNorm, MissingMarkIsDomainError) {
    MarkSpace marks({1.0, 2.0}, {{0.5, 0.5}});
    EXPECT_THROW(control_norm(control(vec({0.0}), {vec({1.0})}), marks), std::domain_error);
}

TEST(ControlNorm, AbsolutelyHomogeneousInMarkComponent) {
    MarkSpace marks({-1.0, 0.5, 2.0}, {{0.3, 0.1, 0.7}, {0.2, 0.9, 0.4}});
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        ControlValue u{Vector::Zero(2), {}};
        for (int k = 0; k < 3; ++k) u.u2.push_back(vec({normal(rng), normal(rng)}));
        const double lambda = 3.0 * normal(rng);
        ControlValue scaled = u;
        for (auto& v : scaled.u2) v *= lambda;
        EXPECT_NEAR(control_norm(scaled, marks), std::abs(lambda) * control_norm(u, marks),
                    1e-12 * (1.0 + std::abs(lambda) * control_norm(u, marks)));
    }
}

TEST(MarkSpace, RejectsNonPositiveWeights) {
    EXPECT_THROW(MarkSpace({1.0}, {{0.0}}), ValidationError);
    EXPECT_THROW(MarkSpace({1.0, 2.0}, {{1.0}}), ValidationError);
}

TEST(ControlGridLattice, ProductSizeAndBox) {
    auto spec = make_spec(zero_set(1, 2, 1, 1), one_mark(0.5), 1, 2, 1, 1.0, [](const Vector&) { return 0.0; });
    ControlGrid grid = make_lattice_grid(spec, 3, 2);
    EXPECT_EQ(grid.size(), 3u * 3u * 2u);
    EXPECT_NO_THROW(check_grid(grid, spec));
    double r = 0.0;
    for (const auto& u : grid.values) r = std::max(r, control_norm(u, spec.marks));
    EXPECT_DOUBLE_EQ(grid.truncation_radius, r);
}

TEST(ControlGridLattice, DuplicateEntriesRejected) {
    auto spec = make_spec(zero_set(1, 1, 0, 0), MarkSpace{}, 1, 1, 0, 1.0, [](const Vector&) { return 0.0; });
    ControlGrid grid = grid_of({control(vec({0.5})), control(vec({0.5}))});
    EXPECT_THROW(check_grid(grid, spec), ValidationError);
    EXPECT_THROW(check_grid(ControlGrid{}, spec), ValidationError);
    EXPECT_THROW(check_grid(grid_of({control(vec({2.0}))}), spec), ValidationError);
}

TEST(ValidateProblem, ZeroCoefficientsHaveNoViolations) {
    auto spec = make_spec(zero_set(2, 1, 1, 1), one_mark(0.5), 2, 1, 1, 1.0, [](const Vector&) { return 0.0; }, 0.0);
    auto report = validate_problem(spec, 500, 3);
    EXPECT_TRUE(report.ok());
}

TEST(ValidateProblem, SteepYDriftViolatesDeclaredL) {
    auto set = zero_set(1, 0, 0, 0);
    set.mu_y.y_coef = 2.0;
    auto spec = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, [](const Vector&) { return 0.0; }, 1.0);
    spec.y_box = Box{vec({-3.0}), vec({3.0})};
    auto report = validate_problem(spec, 400, 11);
    ASSERT_FALSE(report.ok());
    bool saw_growth = false;
    for (const auto& v : report.violations) {
        if (v.check == "growth_y") {
            saw_growth = true;
            // 2|y| > 1 + |y| exactly when |y| > 1 (u = 0 here)
            EXPECT_GT(std::abs(v.y), 1.0);
        }
    }
    EXPECT_TRUE(saw_growth);
}

TEST(ValidateProblem, LinearModelSatisfiesBound) {
    auto set = zero_set(1, 0, 0, 0);
    set.mu_x.x_coef = mat1(1.0);
    set.sigma_x.c = mat1(1.0);
    auto spec = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, [](const Vector&) { return 0.0; }, 1.0);
    spec.x_box = Box{vec({-5.0}), vec({5.0})};
    EXPECT_TRUE(validate_problem(spec, 1000, 5).ok());
}

TEST(ValidateProblem, DeterministicGivenSeed) {
    auto set = zero_set(1, 0, 0, 0);
    set.mu_y.y_coef = 2.0;
    auto spec = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, [](const Vector&) { return 0.0; }, 1.0);
    auto a = validate_problem(spec, 200, 42);
    auto b = validate_problem(spec, 200, 42);
    ASSERT_EQ(a.violations.size(), b.violations.size());
    for (std::size_t i = 0; i < a.violations.size(); ++i) {
        EXPECT_EQ(a.violations[i].y, b.violations[i].y);
        EXPECT_EQ(a.violations[i].value, b.violations[i].value);
    }
}

TEST(ProblemFile, ParsesSectionsAndRejectsUnknownKeys) {
    const std::string text = R"(
[problem]
d = 1
q = 1
n = 1
processes = 1
horizon = 2
lipschitz_L = 0.5
[marks]
points = 1.0
weights_1 = 0.5
[mu_x]
kind = affine
c = 0.1
x = -0.2
[b]
u2 = 1
[payoff]
kind = tanh
[neutral_control]
u1 = 0
u2 = 0
)";
    ProblemSpec spec = load_problem(ConfigFile::parse_string(text));
    EXPECT_EQ(spec.d, 1u);
    EXPECT_DOUBLE_EQ(spec.horizon, 2.0);
    EXPECT_EQ(spec.num_processes(), 1u);
    ASSERT_TRUE(spec.g_bound.has_value());
    EXPECT_DOUBLE_EQ(*spec.g_bound, 1.0);
    ControlValue u = spec.zero_control();
    EXPECT_DOUBLE_EQ(spec.coefficients.mu_x(0.0, vec({1.0}), u)[0], 0.1 - 0.2);
    u.u2[0][0] = 3.0;
    EXPECT_DOUBLE_EQ(spec.coefficients.b(0.0, vec({0.0}), 0.0, u.u1, u.u2[0], 1.0)[0], 3.0);
    EXPECT_TRUE(spec.neutral_control.has_value());

    EXPECT_THROW(load_problem(ConfigFile::parse_string(text + "\n[extra]\na = 1\n")), ConfigError);
    EXPECT_THROW(load_problem(ConfigFile::parse_string("[problem]\nhorizon = 1\nbogus = 3\n")), ConfigError);
    EXPECT_THROW(load_problem(ConfigFile::parse_string("[problem]\nhorizon = 1\n[mu_x]\nkind = constant\nx = 1\n")),
                 ConfigError);
    EXPECT_THROW(load_problem(ConfigFile::parse_string("[problem]\nhorizon = 0\n")), ValidationError);
}
