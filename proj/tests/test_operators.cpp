#include <gtest/gtest.h>

#include <random>

#include "stp/operators.hpp"
#include "support.hpp"

using namespace stp;
using namespace stp::testing;

namespace {

double zero_g(const Vector&) { return 0.0; }

Theta theta1(double t, double x, double y, double p, double A) {
    return make_theta(t, vec({x}), y, vec({p}), mat1(A));
}

ProblemSpec zero_model(std::size_t I = 1) {
    return make_spec(zero_set(1, 1, 0, I), I ? one_mark(0.5) : MarkSpace{}, 1, 1, 0, 1.0, zero_g);
}

}  // namespace

TEST(Theta, RejectsAsymmetricA) {
    Matrix A(2, 2);
    A << 1.0, 2.0, 0.0, 1.0;
    EXPECT_THROW(make_theta(0.0, vec({0.0, 0.0}), 0.0, vec({0.0, 0.0}), A), ValidationError);
}

TEST(FU, ZeroModelIsZero) {
    auto spec = zero_model();
    EXPECT_EQ(F_u(theta1(0.5, 0.3, 0.2, 1.0, 2.0), spec.zero_control(), spec), 0.0);
}

TEST(FU, HandEvaluation) {
    auto set = zero_set(1, 0, 0, 0);
    set.mu_y.c = 2.0;
    set.mu_x.c = vec({1.0});
    set.sigma_x.c = mat1(2.0);
    auto spec = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, zero_g);
    EXPECT_DOUBLE_EQ(F_u(theta1(0.0, 0.0, 0.0, 3.0, 1.0), spec.zero_control(), spec), -3.0);
}

TEST(FU, DegenerateDiffusionIgnoresA) {
    auto set = zero_set(2, 0, 0, 0);
    set.mu_y.c = 0.7;
    set.mu_x.c = vec({1.0, -2.0});
    auto spec = make_spec(set, MarkSpace{}, 2, 0, 0, 1.0, zero_g);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    const double ref = F_u(make_theta(0.1, vec({0.0, 0.0}), 0.0, vec({0.5, 0.25}), Matrix::Zero(2, 2)),
                           spec.zero_control(), spec);
    for (int i = 0; i < 50; ++i) {
        Matrix B(2, 2);
        B << n(rng), n(rng), n(rng), n(rng);
        Matrix A = B + B.transpose();
        EXPECT_EQ(F_u(make_theta(0.1, vec({0.0, 0.0}), 0.0, vec({0.5, 0.25}), A), spec.zero_control(), spec), ref);
    }
}

TEST(FU, NonfiniteCoefficientIsNumericalError) {
    auto spec = zero_model();
    spec.coefficients.mu_y = [](double, const Vector&, double, const ControlValue&) { return std::nan(""); };
    EXPECT_THROW(F_u(theta1(0.0, 0.0, 0.0, 0.0, 0.0), spec.zero_control(), spec), NumericalError);
}

TEST(NU, Examples) {
    auto spec = zero_model();
    EXPECT_EQ(N_u(0.0, vec({0.0}), 0.0, vec({1.0}), spec.zero_control(), spec), vec({0.0}));

    auto set = zero_set(1, 0, 0, 0);
    set.sigma_y.c = vec({1.0});
    set.sigma_x.c = mat1(2.0);
    auto s2 = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, zero_g);
    EXPECT_DOUBLE_EQ(N_u(0.0, vec({0.0}), 0.0, vec({1.0}), s2.zero_control(), s2)[0], -1.0);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        auto set3 = zero_set(2, 0, 0, 0);
        set3.sigma_y.c = vec({n(rng), n(rng)});
        set3.sigma_x.c = Matrix::Random(2, 2);
        auto s3 = make_spec(set3, MarkSpace{}, 2, 0, 0, 1.0, zero_g);
        EXPECT_EQ(N_u(0.0, vec({0.1, 0.2}), 0.0, vec({0.0, 0.0}), s3.zero_control(), s3), set3.sigma_y.c);
    }
}

TEST(Delta, ZeroJumpsGiveZero) {
    auto spec = zero_model();
    TestFunction phi = TestFunction::coordinate(1, 0).plus(TestFunction::time(1), 3.0);
    EXPECT_EQ(Delta_ue(0.2, vec({0.4}), 0.0, spec.zero_control(), 0, phi, spec), 0.0);
}

TEST(Delta, HandEvaluationAndMinimum) {
    auto set = zero_set(1, 0, 0, 1);
    set.b.c = vec({1.0});
    set.beta.c = mat1(1.0);
    auto spec = make_spec(set, one_mark(1.0), 1, 0, 0, 1.0, zero_g);
    TestFunction phi = TestFunction::coordinate(1, 0);
    EXPECT_EQ(Delta_ue(0.0, vec({0.375}), 0.0, spec.zero_control(), 0, phi, spec), 0.0);
    EXPECT_NEAR(Delta_ue(0.0, vec({0.37}), 0.0, spec.zero_control(), 0, phi, spec), 0.0, 1e-15);

    // I = 2 with J_1 = 0.5, J_2 = -0.2: φ = x, β = (1, 2), b = (1.5, 1.8)
    auto set2 = zero_set(1, 0, 0, 2);
    set2.b.c = vec({1.5, 1.8});
    set2.beta.c = Matrix(1, 2);
    set2.beta.c << 1.0, 2.0;
    auto spec2 = make_spec(set2, MarkSpace({1.0}, {{1.0}, {1.0}}), 1, 0, 0, 1.0, zero_g);
    const Vector J = J_vector(0.0, vec({0.0}), 0.0, spec2.zero_control(), 0, phi, spec2);
    EXPECT_DOUBLE_EQ(J[0], 0.5);
    EXPECT_NEAR(J[1], -0.2, 1e-15);
    EXPECT_EQ(Delta_ue(0.0, vec({0.0}), 0.0, spec2.zero_control(), 0, phi, spec2), J.minCoeff());
    EXPECT_EQ(J_u(0.0, vec({0.0}), 0.0, spec2.zero_control(), phi, spec2), J.minCoeff());
}

TEST(InN, Examples) {
    auto spec = zero_model();
    TestFunction phi = TestFunction::constant(1, 1.0);
    const auto u = spec.zero_control();
    EXPECT_TRUE(in_N_eps_eta(0.0, vec({0.0}), 0.0, vec({0.0}), u, 0.0, 0.0, phi, spec));
    EXPECT_FALSE(in_N_eps_eta(0.0, vec({0.0}), 0.0, vec({0.0}), u, 0.0, 0.5, phi, spec));

    auto set = zero_set(1, 0, 0, 1);
    set.sigma_y.c = vec({1.0});
    auto s2 = make_spec(set, one_mark(0.5), 1, 0, 0, 1.0, zero_g);
    EXPECT_FALSE(in_N_eps_eta(0.0, vec({0.0}), 0.0, vec({0.0}), s2.zero_control(), 0.5, 0.0, phi, s2));
    EXPECT_TRUE(in_N_eps_eta(0.0, vec({0.0}), 0.0, vec({0.0}), s2.zero_control(), 1.0, 0.0, phi, s2));
}

TEST(HEpsEta, EmptyAdmissibleSetIsMinusInfinity) {
    auto set = zero_set(1, 0, 0, 0);
    set.sigma_y.c = vec({1.0});
    auto spec = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, zero_g);
    ControlSet grid = grid_of({spec.zero_control()});
    auto eval = H_eps_eta_eval(theta1(0, 0, 0, 0, 0), TestFunction::constant(1, 0.0), 0.1, 0.0, grid, spec);
    EXPECT_EQ(eval.value, -kInf);
    EXPECT_EQ(eval.admissible, 0u);
    EXPECT_FALSE(eval.argmax.has_value());
}

TEST(HEpsEta, ZeroModelIsZero) {
    auto spec = zero_model();
    ControlSet grid = grid_of({control(vec({0.5})), spec.zero_control()});
    EXPECT_EQ(H_eps_eta(theta1(0, 0, 0, 0, 0), TestFunction::constant(1, 0.0), 0.0, 0.0, grid, spec), 0.0);
}

TEST(HEpsEta, BruteForceOverTwoPoints) {
    // μ_Y = u1 on a grid with u1 = -3 and 1; everything else zero, both admissible
    auto set = zero_set(1, 1, 0, 0);
    set.mu_y.u1_coef = vec({1.0});
    auto spec = make_spec(set, MarkSpace{}, 1, 1, 0, 1.0, zero_g);
    spec.u1_box = Box{vec({-5.0}), vec({5.0})};
    ControlSet grid = grid_of({control(vec({-3.0})), control(vec({1.0}))});
    auto eval = H_eps_eta_eval(theta1(0, 0, 0, 0, 0), TestFunction::constant(1, 0.0), 0.0, 0.0, grid, spec);
    EXPECT_EQ(eval.value, 1.0);
    EXPECT_EQ(*eval.argmax, 1u);
    EXPECT_EQ(eval.admissible, 2u);
}

TEST(HEpsEta, TiesBrokenByFirstIndex) {
    auto spec = zero_model();
    ControlSet grid = grid_of({control(vec({0.5})), spec.zero_control()});
    EXPECT_EQ(*H_eps_eta_eval(theta1(0, 0, 0, 0, 0), TestFunction::constant(1, 0.0), 0.0, 0.0, grid, spec).argmax, 0u);
}

namespace {

/// Model where the jump control decides admissibility: b = u2(e), σ_Y = u1, μ_Y = u1 + u2.
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
    auto spec = make_spec(set, one_mark(0.5 + 0.5 * (unit(rng) + 1.0)), 1, 1, 1, 1.0, zero_g);
    return spec;
}

}  // namespace

TEST(HEpsEta, MonotoneInEpsAndMinusEta) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        auto spec = random_model(rng);
        ControlSet grid = make_lattice_grid(spec, 5, 5);
        Theta th = theta1(0.5 * (unit(rng) + 1.0), unit(rng), unit(rng), unit(rng), unit(rng));
        std::mt19937_64 prng(trial);
        TestFunction phi = TestFunction::random_polynomial(1, 2, prng);
        const double e1 = 0.5 * (unit(rng) + 1.0), e2 = e1 + 0.3 * (unit(rng) + 1.0);
        const double n1 = unit(rng), n2 = n1 - 0.3 * (unit(rng) + 1.0);
        EXPECT_LE(H_eps_eta(th, phi, e1, n1, grid, spec), H_eps_eta(th, phi, e2, n2, grid, spec));
    }
}

TEST(SemiLimits, ZeroAndInsensitiveModels) {
    SemiLimitSchedule sch{{0.4, 0.2, 0.1}, {0.3, -0.2, 0.1}, {0.3, 0.2, 0.1}, {0.3, 0.2, 0.1}, 3, 7};
    auto spec = zero_model(0);
    ControlSet grid = grid_of({spec.zero_control()});
    auto th = theta1(0.5, 0.0, 0.0, 0.0, 0.0);
    EXPECT_EQ(H_upper(th, TestFunction::constant(1, 0.0), sch, grid, spec), 0.0);
    EXPECT_EQ(H_lower(th, TestFunction::constant(1, 0.0), sch, grid, spec), 0.0);

    auto set = zero_set(1, 1, 0, 0);
    set.mu_y.c = 2.5;
    auto s2 = make_spec(set, MarkSpace{}, 1, 1, 0, 1.0, zero_g);
    EXPECT_EQ(H_upper(th, TestFunction::coordinate(1, 0), sch, grid, s2), 2.5);
    EXPECT_EQ(H_lower(th, TestFunction::coordinate(1, 0), sch, grid, s2), 2.5);
}

TEST(SemiLimits, AdmissibleOnlyForNegativeEta) {
    // b ≡ -0.05 with β = 0: Δ = -0.05, so u is admissible exactly when η <= -0.05.
    auto set = zero_set(1, 0, 0, 1);
    set.b.c = vec({-0.05});
    set.mu_y.c = 1.0;
    auto spec = make_spec(set, one_mark(1.0), 1, 0, 0, 1.0, zero_g);
    ControlSet grid = grid_of({spec.zero_control()});
    SemiLimitSchedule sch{{0.4, 0.2, 0.1}, {0.4, -0.2, 0.1}, {0.01, 0.005, 0.001}, {0.01, 0.005, 0.001}, 2, 1};
    auto th = theta1(0.5, 0.0, 0.0, 0.0, 0.0);
    TestFunction phi = TestFunction::constant(1, 0.0);

    // brute force over the schedule product at the unperturbed point: only η = -0.2 admits
    for (std::size_t j = 0; j < 3; ++j) {
        for (double eps : sch.eps) {
            const double h = H_eps_eta(th, phi, eps, sch.eta[j], grid, spec);
            EXPECT_EQ(h, j == 1 ? 1.0 : -kInf);
        }
    }
    auto profile = semi_limit_profile(th, phi, sch, grid, spec);
    EXPECT_EQ(profile.lower[0], -kInf);
    EXPECT_EQ(profile.upper[0], 1.0);
    // Refinement: the last level has only η = 0.1 left, which never admits.
    EXPECT_EQ(profile.upper[2], -kInf);
    for (std::size_t k = 1; k < 3; ++k) {
        EXPECT_LE(profile.upper[k], profile.upper[k - 1]);
        EXPECT_GE(profile.lower[k], profile.lower[k - 1]);
    }
}

TEST(SemiLimits, BracketFinalPairOnRandomInstances) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        auto spec = random_model(rng);
        ControlSet grid = make_lattice_grid(spec, 3, 3);
        Theta th = theta1(0.5, unit(rng), unit(rng), unit(rng), unit(rng));
        TestFunction phi = TestFunction::random_polynomial(1, 2, rng);
        SemiLimitSchedule sch{{0.6, 0.3, 0.15}, {0.5, -0.25, 0.1}, {0.2, 0.1, 0.05}, {0.2, 0.1, 0.05}, 2,
                              static_cast<std::uint64_t>(trial)};
        const double mid = H_eps_eta(th, phi, sch.eps.back(), sch.eta.back(), grid, spec);
        EXPECT_LE(H_lower(th, phi, sch, grid, spec), mid);
        EXPECT_GE(H_upper(th, phi, sch, grid, spec), mid);
    }
}

TEST(SemiLimits, ScheduleValidation) {
    SemiLimitSchedule bad{{0.1, 0.2}, {0.5, 0.2}, {0.2, 0.1}, {0.2, 0.1}, 1, 0};
    EXPECT_THROW(bad.check(), ValidationError);
    SemiLimitSchedule zero_eta{{0.2, 0.1}, {0.5, 0.0}, {0.2, 0.1}, {0.2, 0.1}, 1, 0};
    EXPECT_THROW(zero_eta.check(), ValidationError);
    SemiLimitSchedule ok{{0.2, 0.1}, {0.5, -0.2}, {0.2, 0.1}, {0.2, 0.1}, 1, 0};
    EXPECT_NO_THROW(ok.check());
}

TEST(DeltaInvariance, ConstantShiftOfPhi) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        auto spec = random_model(rng);
        TestFunction phi = TestFunction::random_polynomial(1, 3, rng);
        const double shift = 10.0 * unit(rng);
        ControlValue u = control(vec({unit(rng)}), {vec({unit(rng)})});
        const Vector x = vec({unit(rng)});
        const double a = Delta_ue(0.3, x, 0.1, u, 0, phi, spec);
        const double b = Delta_ue(0.3, x, 0.1, u, 0, phi.plus_constant(shift), spec);
        EXPECT_EQ(a, b);
    }
}

TEST(TestFunctionDerivatives, MatchCentralDifferences) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double h = 1e-4;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = 1 + static_cast<std::size_t>(trial % 3);
        TestFunction phi = TestFunction::random_polynomial(d, 3, rng);
        Vector center(static_cast<Eigen::Index>(d));
        for (Eigen::Index j = 0; j < center.size(); ++j) center[j] = unit(rng);
        phi.add_bump(unit(rng), center, 0.7);
        const double t = 0.5 * (unit(rng) + 1.0);
        Vector x(static_cast<Eigen::Index>(d));
        for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = unit(rng);

        auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
        worst = std::max(worst, rel((phi(t + h, x) - phi(t - h, x)) / (2 * h), phi.time_derivative(t, x)));
        const Vector g = phi.gradient(t, x);
        const Matrix H = phi.hessian(t, x);
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            Vector e = Vector::Zero(x.size());
            e[j] = h;
            worst = std::max(worst, rel((phi(t, x + e) - phi(t, x - e)) / (2 * h), g[j]));
            worst = std::max(worst, rel((phi.gradient(t, x + e) - phi.gradient(t, x - e)).dot(Vector::Unit(x.size(), j)) / (2 * h), H(j, j)));
            for (Eigen::Index k = 0; k < x.size(); ++k) {
                worst = std::max(worst, rel((phi.gradient(t, x + e)[k] - phi.gradient(t, x - e)[k]) / (2 * h), H(k, j)));
            }
        }
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(DeltaGap, SingleControlWithZeroNAndDelta) {
    auto spec = zero_model();
    ControlSet grid = grid_of({spec.zero_control()});
    DeltaSearch search{Box{vec({-1.0}), vec({1.0})}, -1.0, 1.0, 21};
    auto res = delta_gap(0.5, vec({0.0}), 0.0, vec({0.0}), TestFunction::constant(1, 0.0), search, grid, spec);
    EXPECT_EQ(res.dist_in, 0.0);
    // 𝐍 = {(0, s): s <= 0}: nearest outside lattice point is one cell away
    EXPECT_NEAR(res.value, 0.0, res.cell_diameter);
    // brute-force classification
    for (std::size_t i = 0; i < res.lattice.size(); ++i) {
        const bool expected = std::abs(res.lattice[i][0]) < 1e-12 && res.lattice[i][1] <= 1e-12;
        EXPECT_EQ(res.member[i], expected);
    }
}

TEST(DeltaGap, SentinelsAndPreconditions) {
    auto set = zero_set(1, 0, 0, 1);
    set.sigma_y.c = vec({50.0});
    auto spec = make_spec(set, one_mark(1.0), 1, 0, 0, 1.0, zero_g);
    ControlSet grid = grid_of({spec.zero_control()});
    DeltaSearch search{Box{vec({-1.0}), vec({1.0})}, -1.0, 1.0, 5};
    EXPECT_EQ(delta_gap(0.0, vec({0.0}), 0.0, vec({0.0}), TestFunction::constant(1, 0.0), search, grid, spec).value, -kInf);
    DeltaSearch off{Box{vec({0.0}), vec({1.0})}, -1.0, 1.0, 5};
    EXPECT_THROW(delta_gap(0.0, vec({0.0}), 0.0, vec({0.0}), TestFunction::constant(1, 0.0), off, grid, spec), ValidationError);
}

TEST(DeltaGap, PositiveGapImpliesBallInside) {
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::size_t positive = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto spec = random_model(rng);
        spec.u2_box = Box{vec({-2.0}), vec({2.0})};
        spec.u1_box = Box{vec({-2.0}), vec({2.0})};
        // u1 spacing 0.125 is finer than the r-lattice tolerance, so most of the lattice is reachable
        ControlSet grid = make_lattice_grid(spec, 33, 9);
        DeltaSearch search{Box{vec({-1.0}), vec({1.0})}, -1.0, 1.0, 9};
        auto res = delta_gap(0.2, vec({unit(rng)}), unit(rng), vec({0.2 * unit(rng)}), TestFunction::constant(1, 0.0),
                             search, grid, spec);
        if (!(res.value > res.cell_diameter)) continue;
        ++positive;
        for (std::size_t i = 0; i < res.lattice.size(); ++i) {
            if (res.lattice[i].norm() < res.value) {
                EXPECT_TRUE(res.member[i]);
            }
        }
    }
    EXPECT_GT(positive, 0u);
}

TEST(Generator, Examples) {
    auto spec = zero_model();
    const auto u = spec.zero_control();
    EXPECT_EQ(generator_L_u(0.3, vec({1.0}), u, TestFunction::constant(1, 4.0), spec), 0.0);
    EXPECT_EQ(generator_L_u(0.3, vec({1.0}), u, TestFunction::time(1), spec), 1.0);

    auto set = zero_set(1, 0, 0, 0);
    set.mu_x.c = vec({1.0});
    set.sigma_x.c = mat1(2.0);
    auto s2 = make_spec(set, MarkSpace{}, 1, 0, 0, 1.0, zero_g);
    TestFunction sq(1);
    sq.add_monomial(1.0, 0, {2});
    EXPECT_DOUBLE_EQ(generator_L_u(0.0, vec({3.0}), s2.zero_control(), sq, s2), 10.0);
}

TEST(BoldH, Examples) {
    TestFunction phi = TestFunction::coordinate(1, 0);
    // β ≡ 0: classical drift term
    auto set = zero_set(1, 0, 0, 1);
    set.mu_x.c = vec({0.5});
    auto spec = make_spec(set, one_mark(2.0), 1, 0, 0, 1.0, zero_g);
    ControlGrid single = grid_of({spec.zero_control()});
    EXPECT_DOUBLE_EQ(bold_H(0.0, vec({0.0}), vec({2.0}), mat1(0.0), phi, single, spec), -1.0);

    // single control, φ = x, β = 1, m = 2, μ_X = 0 → -I[φ] = -2
    auto set2 = zero_set(1, 0, 0, 1);
    set2.beta.c = mat1(1.0);
    auto s2 = make_spec(set2, one_mark(2.0), 1, 0, 0, 1.0, zero_g);
    EXPECT_DOUBLE_EQ(integro_I(0.0, vec({0.4}), s2.zero_control(), phi, s2), 2.0);
    EXPECT_DOUBLE_EQ(bold_H(0.0, vec({0.4}), vec({0.0}), mat1(0.0), phi, grid_of({s2.zero_control()}), s2), -2.0);

    // two controls with values -2 and 0.5
    auto set3 = zero_set(1, 1, 0, 1);
    set3.mu_x.u1_coef = mat1(1.0);
    auto s3 = make_spec(set3, one_mark(1.0), 1, 1, 0, 1.0, zero_g);
    s3.u1_box = Box{vec({-5.0}), vec({5.0})};
    ControlGrid two = grid_of({control(vec({2.0})), control(vec({-0.5}))});
    auto eval = bold_H_eval(0.0, vec({0.0}), vec({1.0}), mat1(0.0), phi, two, s3);
    EXPECT_EQ(eval.value, 0.5);
    EXPECT_EQ(*eval.argmax, 1u);
}

TEST(OperatorCsv, Header) {
    std::ostringstream out;
    write_operator_csv(out, {{"F_u", "t=0;x=1", -3.0, 1}});
    EXPECT_EQ(out.str(), "operator,point,value,admissible_count\nF_u,t=0;x=1,-3,1\n");
}
