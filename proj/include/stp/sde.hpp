#pragma once

// Euler–Maruyama simulation of the controlled pair (X, Y) with jumps thinned
// on the time grid. Every path draws from its own stream derived from
// (seed, path index), so output does not depend on the worker count.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "stp/csv.hpp"
#include "stp/model.hpp"
#include "stp/parallel.hpp"
#include "stp/policy.hpp"

namespace stp {

struct JumpEvent {
    std::size_t step = 0;  // index of the grid time at which the post-jump state is recorded
    double time = 0.0;
    std::size_t process = 0;
    std::size_t mark = 0;
};

/// Simulated paths. Values at step k hold on [t_k, t_{k+1}).
class PathBundle {
public:
    std::vector<double> times;
    std::vector<std::vector<JumpEvent>> jump_log;
    std::uint64_t seed = 0;

    std::size_t num_paths() const { return n_paths_; }
    std::size_t num_steps() const { return times.empty() ? 0 : times.size() - 1; }
    std::size_t dim() const { return d_; }
    bool full() const { return full_; }

    Vector X(std::size_t path, std::size_t step) const {
        const std::size_t slot = slot_of(step);
        return Eigen::Map<const Vector>(&x_[(path * slots() + slot) * d_], static_cast<Eigen::Index>(d_));
    }
    double Y(std::size_t path, std::size_t step) const { return y_[path * slots() + slot_of(step)]; }
    Vector X_terminal(std::size_t path) const { return X(path, num_steps()); }
    double Y_terminal(std::size_t path) const { return Y(path, num_steps()); }

private:
    friend class Simulator;

    std::size_t slots() const { return full_ ? times.size() : 2; }
    std::size_t slot_of(std::size_t step) const {
        if (full_) return step;
        if (step == 0) return 0;
        if (step == num_steps()) return 1;
        throw std::out_of_range("PathBundle: intermediate steps not stored");
    }

    std::size_t n_paths_ = 0;
    std::size_t d_ = 0;
    bool full_ = true;
    std::vector<double> x_;
    std::vector<double> y_;
};

struct SimulationOptions {
    bool store_paths = true;  // false keeps only the initial and terminal states
    std::size_t workers = 1;
};

/// Per-step Euler transition shared by the engine and its replays.
struct EulerIncrement {
    Vector dx;
    double dy = 0.0;
};

class Simulator {
public:
    Simulator(const ProblemSpec& spec, const ControlPolicy& policy) : spec_(spec), policy_(policy) {}

    PathBundle run(double t, const Vector& x, double y, std::size_t n_paths, std::size_t n_steps,
                   std::uint64_t seed, const SimulationOptions& options = {}) const {
        if (!(t >= 0.0 && t < spec_.horizon)) throw ValidationError("simulate: need 0 <= t < T");
        if (n_steps < 1) throw ValidationError("simulate: n_steps must be >= 1");
        if (static_cast<std::size_t>(x.size()) != spec_.d) throw ValidationError("simulate: x has wrong dimension");

        PathBundle out;
        out.seed = seed;
        out.n_paths_ = n_paths;
        out.d_ = spec_.d;
        out.full_ = options.store_paths;
        const double dt = (spec_.horizon - t) / static_cast<double>(n_steps);
        out.times.resize(n_steps + 1);
        for (std::size_t k = 0; k <= n_steps; ++k) out.times[k] = t + static_cast<double>(k) * dt;
        out.times[n_steps] = spec_.horizon;
        const std::size_t slots = out.slots();
        out.x_.assign(n_paths * slots * spec_.d, 0.0);
        out.y_.assign(n_paths * slots, 0.0);
        out.jump_log.assign(n_paths, {});

        parallel_for(n_paths, options.workers, [&](std::size_t p) { simulate_path(out, p, x, y, dt, seed); });
        return out;
    }

private:
    void simulate_path(PathBundle& out, std::size_t path, const Vector& x0, double y0, double dt,
                       std::uint64_t seed) const {
        const auto& c = spec_.coefficients;
        const std::size_t d = spec_.d;
        const std::size_t I = spec_.num_processes();
        const std::size_t n_steps = out.num_steps();
        auto rng = stream_engine(seed, path);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double sqrt_dt = std::sqrt(dt);
        std::vector<double> jump_prob(I), mass(I);
        for (std::size_t i = 0; i < I; ++i) {
            mass[i] = spec_.marks.process_mass(i);
            jump_prob[i] = std::min(1.0, mass[i] * dt);
        }

        auto state = policy_.initial_state();
        Vector x = x0;
        double y = y0;
        auto store = [&](std::size_t step) {
            std::size_t slot = out.full_ ? step : (step == 0 ? 0 : 1);
            double* xs = &out.x_[(path * out.slots() + slot) * d];
            for (std::size_t j = 0; j < d; ++j) xs[j] = x[static_cast<Eigen::Index>(j)];
            out.y_[path * out.slots() + slot] = y;
        };
        store(0);

        Vector dw(static_cast<Eigen::Index>(d));
        for (std::size_t k = 0; k < n_steps; ++k) {
            const double s = out.times[k];
            const ControlValue u = policy_.evaluate(s, dt, x, y, state);
            for (Eigen::Index j = 0; j < dw.size(); ++j) dw[j] = sqrt_dt * normal(rng);

            Vector xn = x + c.mu_x(s, x, u) * dt + c.sigma_x(s, x, u) * dw;
            double yn = y + c.mu_y(s, x, y, u) * dt + c.sigma_y(s, x, y, u).dot(dw);
            for (std::size_t i = 0; i < I; ++i) {
                const double draw = unit(rng);
                const double mark_draw = unit(rng);
                if (draw >= jump_prob[i]) continue;
                const std::size_t e = pick_mark(i, mark_draw * mass[i]);
                const double ev = spec_.marks.point(e);
                xn += c.beta(s, x, u.u1, u.at_mark(e), ev).col(static_cast<Eigen::Index>(i));
                yn += c.b(s, x, y, u.u1, u.at_mark(e), ev)[static_cast<Eigen::Index>(i)];
                out.jump_log[path].push_back({k + 1, out.times[k + 1], i, e});
            }
            if (!xn.allFinite() || !std::isfinite(yn)) {
                throw NumericalError("simulate: nonfinite state on path " + std::to_string(path) + " at step " +
                                     std::to_string(k));
            }
            x = std::move(xn);
            y = yn;
            if (out.full_ || k + 1 == n_steps) store(k + 1);
        }
    }

    std::size_t pick_mark(std::size_t process, double level) const {
        double acc = 0.0;
        const std::size_t marks = spec_.marks.num_marks();
        for (std::size_t e = 0; e < marks; ++e) {
            acc += spec_.marks.weight(process, e);
            if (level < acc) return e;
        }
        return marks - 1;
    }

    const ProblemSpec& spec_;
    ControlPolicy policy_;
};

/// Euler–Maruyama over [t, T]; deterministic given seed.
inline PathBundle simulate(const ProblemSpec& spec, const ControlPolicy& policy, double t, const Vector& x, double y,
                           std::size_t n_paths, std::size_t n_steps, std::uint64_t seed,
                           const SimulationOptions& options = {}) {
    return Simulator(spec, policy).run(t, x, y, n_paths, n_steps, seed, options);
}

/// Checks |Σ_{simultaneous jumps} b| <= K on a lattice over C = x_box × [y_lo, y_hi]
/// at every realized jump step of every path, with the control the policy applied there.
inline bool check_admissibility(const ProblemSpec& spec, const ControlPolicy& policy, const Box& x_box, double y_lo,
                                double y_hi, double K, const PathBundle& bundle, std::size_t lattice_points = 5) {
    if (!bundle.full()) throw ValidationError("check_admissibility: bundle must store full paths");
    const std::size_t d = spec.d;
    // lattice over C
    std::vector<std::pair<Vector, double>> lattice;
    const std::size_t per_axis = std::max<std::size_t>(1, lattice_points);
    std::vector<std::size_t> idx(d + 1, 0);
    auto coord = [&](double lo, double hi, std::size_t k) {
        return per_axis == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(per_axis - 1);
    };
    while (true) {
        Vector xl(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) {
            xl[static_cast<Eigen::Index>(j)] = coord(x_box.lo[static_cast<Eigen::Index>(j)], x_box.hi[static_cast<Eigen::Index>(j)], idx[j]);
        }
        lattice.emplace_back(xl, coord(y_lo, y_hi, idx[d]));
        std::size_t p = 0;
        while (p <= d && ++idx[p] == per_axis) idx[p++] = 0;
        if (p > d) break;
    }

    const double dt = bundle.times.size() > 1 ? bundle.times[1] - bundle.times[0] : 0.0;
    for (std::size_t path = 0; path < bundle.num_paths(); ++path) {
        const auto& log = bundle.jump_log[path];
        if (log.empty()) continue;
        auto state = policy.initial_state();
        std::size_t next = 0;
        for (std::size_t k = 0; k < bundle.num_steps() && next < log.size(); ++k) {
            const double s = bundle.times[k];
            const ControlValue u = policy.evaluate(s, dt, bundle.X(path, k), bundle.Y(path, k), state);
            std::size_t end = next;
            while (end < log.size() && log[end].step == k + 1) ++end;
            if (end == next) continue;
            for (const auto& [xl, yl] : lattice) {
                double total = 0.0;
                for (std::size_t j = next; j < end; ++j) {
                    const auto& ev = log[j];
                    total += spec.coefficients.b(s, xl, yl, u.u1, u.at_mark(ev.mark), spec.marks.point(ev.mark))
                                 [static_cast<Eigen::Index>(ev.process)];
                }
                if (!(std::abs(total) <= K)) return false;
            }
            next = end;
        }
    }
    return true;
}

/// Runs Y under the exponentially transformed coefficients from y and the original
/// Y from y e^{-ct}, on identical noise, and returns max |Ỹ(s) e^{-cs} - Y(s)|.
inline double exp_transform_check(const ProblemSpec& spec, const ControlPolicy& policy, double c, double t,
                                  const Vector& x, double y, std::size_t n_paths, std::size_t n_steps,
                                  std::uint64_t seed, std::size_t workers = 1) {
    if (c < 0.0) throw ValidationError("exp_transform_check: c must be >= 0");
    ProblemSpec transformed = spec;
    const auto original = spec.coefficients;
    transformed.coefficients.mu_y = [original, c](double s, const Vector& xs, double ys, const ControlValue& u) {
        return c * ys + std::exp(c * s) * original.mu_y(s, xs, std::exp(-c * s) * ys, u);
    };
    transformed.coefficients.sigma_y = [original, c](double s, const Vector& xs, double ys, const ControlValue& u) {
        return Vector(std::exp(c * s) * original.sigma_y(s, xs, std::exp(-c * s) * ys, u));
    };
    transformed.coefficients.b = [original, c](double s, const Vector& xs, double ys, const Vector& u1,
                                               const Vector& u2e, double e) {
        return Vector(std::exp(c * s) * original.b(s, xs, std::exp(-c * s) * ys, u1, u2e, e));
    };
    const ControlPolicy seen = policy.map_y([c](double s, double ys) { return std::exp(-c * s) * ys; });

    SimulationOptions options{true, workers};
    const PathBundle base = simulate(spec, policy, t, x, y * std::exp(-c * t), n_paths, n_steps, seed, options);
    const PathBundle tilde = simulate(transformed, seen, t, x, y, n_paths, n_steps, seed, options);
    double deviation = 0.0;
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t k = 0; k <= n_steps; ++k) {
            const double s = base.times[k];
            deviation = std::max(deviation, std::abs(tilde.Y(p, k) * std::exp(-c * s) - base.Y(p, k)));
        }
    }
    return deviation;
}

/// CSV export: a "# seed=..." header line, then path,step,time,X_1..X_d,Y,jump_1..jump_I.
inline void write_paths_csv(std::ostream& out, const PathBundle& bundle, std::size_t processes) {
    out << "# seed=" << bundle.seed << "\n";
    out << "path,step,time";
    for (std::size_t j = 0; j < bundle.dim(); ++j) out << ",X_" << (j + 1);
    out << ",Y";
    for (std::size_t i = 0; i < processes; ++i) out << ",jump_" << (i + 1);
    out << "\n";
    std::vector<std::size_t> steps;
    if (bundle.full()) {
        for (std::size_t k = 0; k <= bundle.num_steps(); ++k) steps.push_back(k);
    } else {
        steps = {0, bundle.num_steps()};
    }
    for (std::size_t p = 0; p < bundle.num_paths(); ++p) {
        for (std::size_t k : steps) {
            out << p << "," << k << "," << fmt_double(bundle.times[k]);
            const Vector xv = bundle.X(p, k);
            for (Eigen::Index j = 0; j < xv.size(); ++j) out << "," << fmt_double(xv[j]);
            out << "," << fmt_double(bundle.Y(p, k));
            std::vector<int> flags(processes, 0);
            for (const auto& ev : bundle.jump_log[p]) {
                if (ev.step == k) ++flags[ev.process];
            }
            for (int f : flags) out << "," << f;
            out << "\n";
        }
    }
}

}  // namespace stp
