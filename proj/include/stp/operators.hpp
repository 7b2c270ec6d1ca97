#pragma once

// Operator algebra of the target problem at a point Θ = (t, x, y, p, A):
//   F^u(Θ)   = μ_Y - μ_X·p - ½ Tr[σ_X σ_X^T A]
//   N^u      = σ_Y - σ_X^T p
//   J_i^{u,e} = b_i - φ(t, x + β_i) + φ(t, x),  Δ^{u,e} = min_i J_i^{u,e}
//   H_{ε,η}  = sup { F^u : |N^u| <= ε, Δ^{u,e} >= η for all e }   (sup ∅ = -∞)
// plus the finite semi-limit surrogates, the boundary gap δ, the generator 𝓛^u
// and the control-form Hamiltonian with its nonlocal term I[φ].

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "stp/csv.hpp"
#include "stp/embedding.hpp"
#include "stp/model.hpp"
#include "stp/parallel.hpp"
#include "stp/test_function.hpp"

namespace stp {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Theta {
    double t = 0.0;
    Vector x;
    double y = 0.0;
    Vector p;
    Matrix A;
};

/// Builds Θ; A must be symmetric up to round-off and is symmetrized exactly.
inline Theta make_theta(double t, Vector x, double y, Vector p, Matrix A) {
    if (A.rows() != A.cols() || A.rows() != x.size() || p.size() != x.size()) {
        throw ValidationError("Theta: dimensions of x, p, A disagree");
    }
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + A.cwiseAbs().maxCoeff())) {
        throw ValidationError("Theta: A is not symmetric");
    }
    Matrix sym = 0.5 * (A + A.transpose());
    return Theta{t, std::move(x), y, std::move(p), std::move(sym)};
}

namespace detail {

inline void check_time(double t, const ProblemSpec& spec) {
    if (!(t >= 0.0 && t <= spec.horizon)) throw ValidationError("operator: t outside [0, T]");
}

inline double finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericalError(std::string("operator: nonfinite ") + what);
    return v;
}

template <typename M>
const M& finite(const M& v, const char* what) {
    if (!v.allFinite()) throw NumericalError(std::string("operator: nonfinite ") + what);
    return v;
}

/// φ(t, x + dx) - φ(t, x) for any field; test functions cancel constants exactly.
template <typename Phi>
double increment(const Phi& phi, double t, const Vector& x, const Vector& dx) {
    return phi(t, x + dx) - phi(t, x);
}

inline double increment(const TestFunction& phi, double t, const Vector& x, const Vector& dx) {
    return phi.increment(t, x, dx);
}

}  // namespace detail

inline double F_u(const Theta& th, const ControlValue& u, const ProblemSpec& spec) {
    detail::check_time(th.t, spec);
    const auto& c = spec.coefficients;
    const double my = detail::finite(c.mu_y(th.t, th.x, th.y, u), "mu_Y");
    const Vector mx = detail::finite(c.mu_x(th.t, th.x, u), "mu_X");
    const Matrix sx = detail::finite(c.sigma_x(th.t, th.x, u), "sigma_X");
    return my - mx.dot(th.p) - 0.5 * (sx * sx.transpose() * th.A).trace();
}

inline Vector N_u(double t, const Vector& x, double y, const Vector& p, const ControlValue& u, const ProblemSpec& spec) {
    const auto& c = spec.coefficients;
    const Vector sy = detail::finite(c.sigma_y(t, x, y, u), "sigma_Y");
    const Matrix sx = detail::finite(c.sigma_x(t, x, u), "sigma_X");
    return sy - sx.transpose() * p;
}

/// The vector (J_1, ..., J_I) at mark index k.
template <typename Phi>
Vector J_vector(double t, const Vector& x, double y, const ControlValue& u, std::size_t k,
                       const Phi& phi, const ProblemSpec& spec) {
    const auto& c = spec.coefficients;
    const double e = spec.marks.point(k);
    const Matrix beta = detail::finite(c.beta(t, x, u.u1, u.at_mark(k), e), "beta");
    const Vector b = detail::finite(c.b(t, x, y, u.u1, u.at_mark(k), e), "b");
    Vector J(b.size());
    for (Eigen::Index i = 0; i < b.size(); ++i) J[i] = b[i] - detail::increment(phi, t, x, beta.col(i));
    return J;
}

/// Δ^{u,e} = min_i J_i^{u,e}; +∞ when there are no jump processes.
template <typename Phi>
double Delta_ue(double t, const Vector& x, double y, const ControlValue& u, std::size_t k,
                       const Phi& phi, const ProblemSpec& spec) {
    const Vector J = J_vector(t, x, y, u, k, phi, spec);
    return J.size() == 0 ? kInf : J.minCoeff();
}

/// J^u = min over marks of Δ^{u,e}.
template <typename Phi>
double J_u(double t, const Vector& x, double y, const ControlValue& u, const Phi& phi,
                  const ProblemSpec& spec) {
    double m = kInf;
    for (std::size_t k = 0; k < spec.marks.num_marks(); ++k) m = std::min(m, Delta_ue(t, x, y, u, k, phi, spec));
    return m;
}

template <typename Phi>
bool in_N_eps_eta(double t, const Vector& x, double y, const Vector& p, const ControlValue& u, double eps,
                         double eta, const Phi& phi, const ProblemSpec& spec) {
    if (N_u(t, x, y, p, u, spec).norm() > eps) return false;
    for (std::size_t k = 0; k < spec.marks.num_marks(); ++k) {
        if (!(Delta_ue(t, x, y, u, k, phi, spec) >= eta)) return false;
    }
    return true;
}

struct HEvaluation {
    double value = -kInf;
    std::optional<std::size_t> argmax;  // index into the grid (or the base grid of a span)
    std::size_t admissible = 0;
    std::optional<ControlValue> control;
};

namespace detail {

/// The embedded control that puts N^u = 0 and J_i^{u,e} = η exactly (smallest γ, hence largest F).
template <typename Phi>
ControlValue span_control_for_H(const EmbeddingSpan& span, const ControlValue& nu, const Theta& th, double eta,
                                       const Phi& phi, const ProblemSpec& spec) {
    const auto& L = span.layout;
    const ControlValue probe = L.make(nu, Vector::Zero(static_cast<Eigen::Index>(L.d)),
                                      std::vector<Vector>(L.marks, Vector::Zero(static_cast<Eigen::Index>(L.processes))));
    const Vector alpha = spec.coefficients.sigma_x(th.t, th.x, probe).transpose() * th.p;
    std::vector<Vector> gamma(L.marks, Vector::Zero(static_cast<Eigen::Index>(L.processes)));
    for (std::size_t k = 0; k < L.marks; ++k) {
        const Matrix beta = spec.coefficients.beta(th.t, th.x, probe.u1, probe.u2[k], spec.marks.point(k));
        for (std::size_t i = 0; i < L.processes; ++i) {
            const double inc = increment(phi, th.t, th.x, beta.col(static_cast<Eigen::Index>(i)));
            gamma[k][static_cast<Eigen::Index>(i)] = nudge_jump(eta, inc);
        }
    }
    return L.make(nu, alpha, gamma);
}

}  // namespace detail

/// H_{ε,η}(Θ, φ) over a control set, with first-index tie breaking.
template <typename Phi>
HEvaluation H_eps_eta_eval(const Theta& th, const Phi& phi, double eps, double eta,
                                  const ControlSet& controls, const ProblemSpec& spec) {
    HEvaluation out;
    auto consider = [&](std::size_t index, const ControlValue& u) {
        if (!in_N_eps_eta(th.t, th.x, th.y, th.p, u, eps, eta, phi, spec)) return;
        ++out.admissible;
        const double f = F_u(th, u, spec);
        if (!out.argmax || f > out.value) {
            out.value = f;
            out.argmax = index;
            out.control = u;
        }
    };
    if (const auto* grid = std::get_if<ControlGrid>(&controls)) {
        if (grid->values.empty()) throw ValidationError("H_eps_eta: control grid is empty");
        for (std::size_t i = 0; i < grid->size(); ++i) consider(i, (*grid)[i]);
    } else {
        const auto& span = std::get<EmbeddingSpan>(controls);
        if (span.base.values.empty()) throw ValidationError("H_eps_eta: base grid is empty");
        for (std::size_t i = 0; i < span.base.size(); ++i) {
            consider(i, detail::span_control_for_H(span, span.base[i], th, eta, phi, spec));
        }
    }
    return out;
}

template <typename Phi>
double H_eps_eta(const Theta& th, const Phi& phi, double eps, double eta, const ControlSet& controls,
                        const ProblemSpec& spec) {
    return H_eps_eta_eval(th, phi, eps, eta, controls, spec).value;
}

/// Finite surrogate of the relaxed semi-limits. Level k uses the pairs (ε_i, η_j)
/// with i, j >= k and, besides the unperturbed (Θ, φ), n_samples perturbations
/// within theta_radii[k] and test_fn_scales[k].
struct SemiLimitSchedule {
    std::vector<double> eps;
    std::vector<double> eta;
    std::vector<double> theta_radii;
    std::vector<double> test_fn_scales;
    std::size_t n_samples = 4;
    std::uint64_t seed = 0;

    std::size_t levels() const { return eps.size(); }

    /// eps, radii, scales: strictly decreasing and positive. eta: entries in [-1, 1]
    /// with strictly decreasing magnitude and a nonzero final entry (signs may alternate).
    void check() const {
        const std::size_t K = eps.size();
        if (K == 0 || eta.size() != K || theta_radii.size() != K || test_fn_scales.size() != K) {
            throw ValidationError("schedule: eps, eta, radii and scales must be nonempty and of equal length");
        }
        auto decreasing_positive = [](const std::vector<double>& v, const char* name) {
            for (std::size_t k = 0; k < v.size(); ++k) {
                if (!(v[k] > 0.0) || (k > 0 && !(v[k] < v[k - 1]))) {
                    throw ValidationError(std::string("schedule: ") + name + " must be positive and strictly decreasing");
                }
            }
        };
        decreasing_positive(eps, "eps");
        decreasing_positive(theta_radii, "theta_radii");
        decreasing_positive(test_fn_scales, "test_fn_scales");
        for (std::size_t k = 0; k < K; ++k) {
            if (!(std::abs(eta[k]) <= 1.0) || (k > 0 && !(std::abs(eta[k]) < std::abs(eta[k - 1])))) {
                throw ValidationError("schedule: |eta| must be <= 1 and strictly decreasing");
            }
        }
        if (eta.back() == 0.0) throw ValidationError("schedule: final eta must be nonzero");
    }
};

/// Per-level semi-limit values. upper[k] is the max over levels >= k, lower[k] the
/// min, so upper is nonincreasing and lower nondecreasing in k (refinement).
struct SemiLimitProfile {
    std::vector<double> upper;
    std::vector<double> lower;
};

namespace detail {

inline Theta perturb_theta(const Theta& th, double r, const ProblemSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Theta out = th;
    out.t = std::clamp(th.t + r * unit(rng), 0.0, spec.horizon);
    for (Eigen::Index j = 0; j < out.x.size(); ++j) out.x[j] += r * unit(rng);
    out.y += r * unit(rng);
    for (Eigen::Index j = 0; j < out.p.size(); ++j) out.p[j] += r * unit(rng);
    for (Eigen::Index j = 0; j < out.A.rows(); ++j) {
        for (Eigen::Index k = j; k < out.A.cols(); ++k) {
            const double v = r * unit(rng);
            out.A(j, k) += v;
            if (k != j) out.A(k, j) += v;
        }
    }
    return out;
}

inline TestFunction perturb_phi(const TestFunction& phi, const Theta& th, double scale, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    TestFunction psi = TestFunction::random_polynomial(phi.dim(), 2, rng);
    Vector center = th.x;
    for (Eigen::Index j = 0; j < center.size(); ++j) center[j] += unit(rng);
    psi.add_bump(unit(rng), center, 0.5 + 0.5 * (unit(rng) + 1.0));
    return phi.plus(psi, scale);
}

}  // namespace detail

inline SemiLimitProfile semi_limit_profile(const Theta& th, const TestFunction& phi, const SemiLimitSchedule& schedule,
                                           const ControlSet& controls, const ProblemSpec& spec) {
    schedule.check();
    const std::size_t K = schedule.levels();
    std::vector<double> level_max(K, -kInf), level_min(K, kInf);
    for (std::size_t k = 0; k < K; ++k) {
        auto rng = stream_engine(schedule.seed, k);
        std::vector<std::pair<Theta, TestFunction>> points{{th, phi}};
        for (std::size_t s = 0; s < schedule.n_samples; ++s) {
            Theta t2 = detail::perturb_theta(th, schedule.theta_radii[k], spec, rng);
            TestFunction psi = detail::perturb_phi(phi, th, schedule.test_fn_scales[k], rng);
            points.emplace_back(std::move(t2), std::move(psi));
        }
        for (std::size_t i = k; i < K; ++i) {
            for (std::size_t j = k; j < K; ++j) {
                for (const auto& [tp, psi] : points) {
                    const double h = H_eps_eta(tp, psi, schedule.eps[i], schedule.eta[j], controls, spec);
                    level_max[k] = std::max(level_max[k], h);
                    level_min[k] = std::min(level_min[k], h);
                }
            }
        }
    }
    SemiLimitProfile out{std::vector<double>(K), std::vector<double>(K)};
    double hi = -kInf, lo = kInf;
    for (std::size_t k = K; k-- > 0;) {
        hi = std::max(hi, level_max[k]);
        lo = std::min(lo, level_min[k]);
        out.upper[k] = hi;
        out.lower[k] = lo;
    }
    return out;
}

inline double H_upper(const Theta& th, const TestFunction& phi, const SemiLimitSchedule& schedule,
                      const ControlSet& controls, const ProblemSpec& spec) {
    return semi_limit_profile(th, phi, schedule, controls, spec).upper.front();
}

inline double H_lower(const Theta& th, const TestFunction& phi, const SemiLimitSchedule& schedule,
                      const ControlSet& controls, const ProblemSpec& spec) {
    return semi_limit_profile(th, phi, schedule, controls, spec).lower.front();
}

/// Lattice over the (r, s) search box for δ. r ranges over r_box (dimension d),
/// s over [s_lo, s_hi]; `points` per axis (odd counts put 0 on the lattice).
struct DeltaSearch {
    Box r_box;
    double s_lo = -1.0;
    double s_hi = 1.0;
    std::size_t points = 11;

    double cell_diameter() const {
        double sq = 0.0;
        const double n = static_cast<double>(points - 1);
        for (Eigen::Index j = 0; j < r_box.lo.size(); ++j) sq += std::pow((r_box.hi[j] - r_box.lo[j]) / n, 2);
        sq += std::pow((s_hi - s_lo) / n, 2);
        return std::sqrt(sq);
    }
};

struct DeltaResult {
    double value = 0.0;  // +∞: no lattice point outside 𝐍; -∞: none inside
    double dist_in = kInf;
    double dist_out = kInf;
    std::size_t inside = 0;
    std::size_t outside = 0;
    double cell_diameter = 0.0;
    /// Lattice points (r_1..r_d, s) and their classification, in lexicographic order.
    std::vector<Vector> lattice;
    std::vector<bool> member;
};

namespace detail {

template <typename Phi>
bool lattice_member(double t, const Vector& x, double y, const Vector& p, const Vector& r, double s,
                           const ControlValue& u, double r_tol, const Phi& phi, const ProblemSpec& spec) {
    if ((N_u(t, x, y, p, u, spec) - r).norm() > r_tol) return false;
    const double s_tol = 1e-12 * (1.0 + std::abs(s));
    for (std::size_t k = 0; k < spec.marks.num_marks(); ++k) {
        if (!(Delta_ue(t, x, y, u, k, phi, spec) >= s - s_tol)) return false;
    }
    return true;
}

}  // namespace detail

/// δ = dist(0, 𝐍^c) - dist(0, 𝐍) on a lattice, where (r, s) ∈ 𝐍 iff some control has
/// |N^u - r| <= half a cell diagonal in r and Δ^{u,e} >= s for every mark.
template <typename Phi>
DeltaResult delta_gap(double t, const Vector& x, double y, const Vector& p, const Phi& phi,
                             const DeltaSearch& search, const ControlSet& controls, const ProblemSpec& spec) {
    const std::size_t d = spec.d;
    if (search.r_box.dim() != d) throw ValidationError("delta_gap: search box dimension differs from d");
    if (search.points < 2) throw ValidationError("delta_gap: need >= 2 lattice points per axis");
    for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        if (!(search.r_box.lo[jj] < 0.0 && 0.0 < search.r_box.hi[jj])) {
            throw ValidationError("delta_gap: search box must contain 0 in its interior");
        }
    }
    if (!(search.s_lo < 0.0 && 0.0 < search.s_hi)) throw ValidationError("delta_gap: s range must contain 0 inside");

    const double n = static_cast<double>(search.points - 1);
    double r_tol_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        r_tol_sq += std::pow(0.5 * (search.r_box.hi[jj] - search.r_box.lo[jj]) / n, 2);
    }
    const double r_tol = std::sqrt(r_tol_sq) * (1.0 + 1e-12);

    DeltaResult out;
    out.cell_diameter = search.cell_diameter();
    std::vector<std::size_t> idx(d + 1, 0);
    while (true) {
        Vector z(static_cast<Eigen::Index>(d + 1));
        for (std::size_t j = 0; j < d; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            z[jj] = search.r_box.lo[jj] + (search.r_box.hi[jj] - search.r_box.lo[jj]) * static_cast<double>(idx[j]) / n;
        }
        z[static_cast<Eigen::Index>(d)] = search.s_lo + (search.s_hi - search.s_lo) * static_cast<double>(idx[d]) / n;
        const Vector r = z.head(static_cast<Eigen::Index>(d));
        const double s = z[static_cast<Eigen::Index>(d)];

        bool member = false;
        if (const auto* grid = std::get_if<ControlGrid>(&controls)) {
            for (const auto& u : grid->values) {
                if (detail::lattice_member(t, x, y, p, r, s, u, r_tol, phi, spec)) {
                    member = true;
                    break;
                }
            }
        } else {
            // Free (α, γ): α = r + σ_X^T p, γ_i(e) = s + φ(x + β_i) - φ(x) hits (r, s) exactly.
            const auto& span = std::get<EmbeddingSpan>(controls);
            const Theta th{t, x, y, p, Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
            for (const auto& nu : span.base.values) {
                ControlValue u = detail::span_control_for_H(span, nu, th, s, phi, spec);
                u.u1.tail(static_cast<Eigen::Index>(d)) += r;
                if (detail::lattice_member(t, x, y, p, r, s, u, r_tol, phi, spec)) {
                    member = true;
                    break;
                }
            }
        }
        const double dist = z.norm();
        if (member) {
            ++out.inside;
            out.dist_in = std::min(out.dist_in, dist);
        } else {
            ++out.outside;
            out.dist_out = std::min(out.dist_out, dist);
        }
        out.lattice.push_back(z);
        out.member.push_back(member);

        std::size_t k = 0;
        while (k <= d && ++idx[k] == search.points) idx[k++] = 0;
        if (k > d) break;
    }
    if (out.outside == 0) {
        out.value = kInf;
    } else if (out.inside == 0) {
        out.value = -kInf;
    } else {
        out.value = out.dist_out - out.dist_in;
    }
    return out;
}

/// 𝓛^u φ = φ_t + μ_X·Dφ + ½ Tr[σ_X σ_X^T D²φ]
inline double generator_L_u(double t, const Vector& x, const ControlValue& u, const TestFunction& phi,
                            const ProblemSpec& spec) {
    const auto& c = spec.coefficients;
    const Vector mx = detail::finite(c.mu_x(t, x, u), "mu_X");
    const Matrix sx = detail::finite(c.sigma_x(t, x, u), "sigma_X");
    return phi.time_derivative(t, x) + mx.dot(phi.gradient(t, x)) + 0.5 * (sx * sx.transpose() * phi.hessian(t, x)).trace();
}

/// I[φ](t, x, u) = Σ_i Σ_e (φ(t, x + β_i) - φ(t, x)) m_i(e)
template <typename Field>
double integro_I(double t, const Vector& x, const ControlValue& u, const Field& phi, const ProblemSpec& spec) {
    double total = 0.0;
    for (std::size_t k = 0; k < spec.marks.num_marks(); ++k) {
        const Matrix beta = detail::finite(spec.coefficients.beta(t, x, u.u1, u.at_mark(k), spec.marks.point(k)), "beta");
        for (std::size_t i = 0; i < spec.num_processes(); ++i) {
            total += detail::increment(phi, t, x, beta.col(static_cast<Eigen::Index>(i))) * spec.marks.weight(i, k);
        }
    }
    return total;
}

/// 𝐇 = max over the grid of -I[φ] - μ_X·p - ½ Tr[σ_X σ_X^T A] (control-form spec).
inline HEvaluation bold_H_eval(double t, const Vector& x, const Vector& p, const Matrix& A, const TestFunction& phi,
                               const ControlGrid& grid, const ProblemSpec& spec) {
    if (grid.values.empty()) throw ValidationError("bold_H: control grid is empty");
    HEvaluation out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& u = grid[i];
        const Vector mx = detail::finite(spec.coefficients.mu_x(t, x, u), "mu_X");
        const Matrix sx = detail::finite(spec.coefficients.sigma_x(t, x, u), "sigma_X");
        const double v = -integro_I(t, x, u, phi, spec) - mx.dot(p) - 0.5 * (sx * sx.transpose() * A).trace();
        ++out.admissible;
        if (!out.argmax || v > out.value) {
            out.value = v;
            out.argmax = i;
            out.control = u;
        }
    }
    return out;
}

inline double bold_H(double t, const Vector& x, const Vector& p, const Matrix& A, const TestFunction& phi,
                     const ControlGrid& grid, const ProblemSpec& spec) {
    return bold_H_eval(t, x, p, A, phi, grid, spec).value;
}

/// Audit rows: operator,point,value,admissible_count. `point` is a free-form label.
struct OperatorRecord {
    std::string op;
    std::string point;
    double value = 0.0;
    std::size_t admissible = 0;
};

inline void write_operator_csv(std::ostream& out, const std::vector<OperatorRecord>& rows) {
    out << "operator,point,value,admissible_count\n";
    for (const auto& r : rows) out << r.op << "," << r.point << "," << fmt_double(r.value) << "," << r.admissible << "\n";
}

}  // namespace stp
