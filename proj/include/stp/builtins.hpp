#pragma once

// Named coefficient and payoff families selectable from problem files.
// Every family is affine in its arguments except the saturating y-drift and
// the 1-d tables, which are piecewise linear in x[0].

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stp/model.hpp"

namespace stp::builtins {

/// Piecewise-linear interpolation table in x[0], constant beyond its end nodes.
struct Table1d {
    std::vector<double> nodes;
    std::vector<double> values;

    void check() const {
        if (nodes.size() < 2 || nodes.size() != values.size()) {
            throw ValidationError("table: need >= 2 nodes and matching values");
        }
        for (std::size_t k = 1; k < nodes.size(); ++k) {
            if (!(nodes[k] > nodes[k - 1])) throw ValidationError("table: nodes must be strictly increasing");
        }
    }

    double operator()(double x) const {
        if (x <= nodes.front()) return values.front();
        if (x >= nodes.back()) return values.back();
        auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
        auto k = static_cast<std::size_t>(it - nodes.begin());
        double w = (x - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
        return (1.0 - w) * values[k - 1] + w * values[k];
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }
};

/// mu_X = c + t_coef t + X x + U u1 (+ table(x[0]) on the first component)
struct DriftX {
    Vector c, t_coef;
    Matrix x_coef, u1_coef;
    std::optional<Table1d> table;

    static DriftX zero(std::size_t d, std::size_t q) {
        auto di = static_cast<Eigen::Index>(d), qi = static_cast<Eigen::Index>(q);
        return {Vector::Zero(di), Vector::Zero(di), Matrix::Zero(di, di), Matrix::Zero(di, qi), std::nullopt};
    }

    Coefficients::DriftX make() const {
        return [p = *this](double t, const Vector& x, const ControlValue& u) -> Vector {
            Vector out = p.c + t * p.t_coef + p.x_coef * x;
            if (p.u1_coef.cols() > 0) out += p.u1_coef * u.u1;
            if (p.table) out[0] += (*p.table)(x[0]);
            return out;
        };
    }
};

/// sigma_X = C + Σ_j x_j X_j + Σ_k u1_k U_k (+ table(x[0]) on entry (0,0))
struct DiffusionX {
    Matrix c;
    std::vector<Matrix> x_coef;   // d matrices
    std::vector<Matrix> u1_coef;  // q matrices
    std::optional<Table1d> table;

    static DiffusionX zero(std::size_t d, std::size_t q) {
        auto di = static_cast<Eigen::Index>(d);
        return {Matrix::Zero(di, di), std::vector<Matrix>(d, Matrix::Zero(di, di)),
                std::vector<Matrix>(q, Matrix::Zero(di, di)), std::nullopt};
    }

    Coefficients::DiffusionX make() const {
        return [p = *this](double, const Vector& x, const ControlValue& u) -> Matrix {
            Matrix out = p.c;
            for (std::size_t j = 0; j < p.x_coef.size(); ++j) out += x[static_cast<Eigen::Index>(j)] * p.x_coef[j];
            for (std::size_t k = 0; k < p.u1_coef.size(); ++k) {
                out += u.u1[static_cast<Eigen::Index>(k)] * p.u1_coef[k];
            }
            if (p.table) out(0, 0) += (*p.table)(x[0]);
            return out;
        };
    }
};

/// beta = C + Σ_j x_j X_j + Σ_k u1_k U_k + Σ_k u2_k V_k + e E   (each d x I)
struct JumpX {
    Matrix c, e_coef;
    std::vector<Matrix> x_coef, u1_coef, u2_coef;

    static JumpX zero(std::size_t d, std::size_t q, std::size_t n, std::size_t processes) {
        auto di = static_cast<Eigen::Index>(d), ii = static_cast<Eigen::Index>(processes);
        return {Matrix::Zero(di, ii), Matrix::Zero(di, ii), std::vector<Matrix>(d, Matrix::Zero(di, ii)),
                std::vector<Matrix>(q, Matrix::Zero(di, ii)), std::vector<Matrix>(n, Matrix::Zero(di, ii))};
    }

    Coefficients::JumpX make() const {
        return [p = *this](double, const Vector& x, const Vector& u1, const Vector& u2e, double e) -> Matrix {
            Matrix out = p.c + e * p.e_coef;
            for (std::size_t j = 0; j < p.x_coef.size(); ++j) out += x[static_cast<Eigen::Index>(j)] * p.x_coef[j];
            for (std::size_t k = 0; k < p.u1_coef.size(); ++k) out += u1[static_cast<Eigen::Index>(k)] * p.u1_coef[k];
            for (std::size_t k = 0; k < p.u2_coef.size(); ++k) out += u2e[static_cast<Eigen::Index>(k)] * p.u2_coef[k];
            return out;
        };
    }
};

/// mu_Y = c + t_coef t + x_coef·x + y_coef y + u1_coef·u1
///        + Σ_e Σ_i m_i(e) compensator.row(i)·u2(e) + saturation tanh(y)
struct DriftY {
    double c = 0.0, t_coef = 0.0, y_coef = 0.0, saturation = 0.0;
    Vector x_coef, u1_coef;
    Matrix compensator;  // I x n

    static DriftY zero(std::size_t d, std::size_t q, std::size_t n, std::size_t processes) {
        return {0.0, 0.0, 0.0, 0.0, Vector::Zero(static_cast<Eigen::Index>(d)),
                Vector::Zero(static_cast<Eigen::Index>(q)),
                Matrix::Zero(static_cast<Eigen::Index>(processes), static_cast<Eigen::Index>(n))};
    }

    bool affine_in_y() const { return saturation == 0.0; }

    Coefficients::DriftY make(const MarkSpace& marks) const {
        return [p = *this, marks](double t, const Vector& x, double y, const ControlValue& u) -> double {
            double out = p.c + p.t_coef * t + p.x_coef.dot(x) + p.y_coef * y;
            if (p.u1_coef.size() > 0) out += p.u1_coef.dot(u.u1);
            if (p.saturation != 0.0) out += p.saturation * std::tanh(y);
            if (p.compensator.size() > 0) {
                for (std::size_t k = 0; k < marks.num_marks(); ++k) {
                    Vector per_process = p.compensator * u.u2[k];
                    for (std::size_t i = 0; i < marks.num_processes(); ++i) {
                        out += marks.weight(i, k) * per_process[static_cast<Eigen::Index>(i)];
                    }
                }
            }
            return out;
        };
    }
};

/// sigma_Y = c + X x + y_coef y + U u1   (d-vector)
struct DiffusionY {
    Vector c, y_coef;
    Matrix x_coef, u1_coef;

    static DiffusionY zero(std::size_t d, std::size_t q) {
        auto di = static_cast<Eigen::Index>(d);
        return {Vector::Zero(di), Vector::Zero(di), Matrix::Zero(di, di), Matrix::Zero(di, static_cast<Eigen::Index>(q))};
    }

    Coefficients::DiffusionY make() const {
        return [p = *this](double, const Vector& x, double y, const ControlValue& u) -> Vector {
            Vector out = p.c + p.x_coef * x + y * p.y_coef;
            if (p.u1_coef.cols() > 0) out += p.u1_coef * u.u1;
            return out;
        };
    }
};

/// b = c + X x + y_coef y + U1 u1 + U2 u2(e) + e e_coef   (I-vector)
struct JumpY {
    Vector c, y_coef, e_coef;
    Matrix x_coef, u1_coef, u2_coef;

    static JumpY zero(std::size_t d, std::size_t q, std::size_t n, std::size_t processes) {
        auto ii = static_cast<Eigen::Index>(processes);
        return {Vector::Zero(ii), Vector::Zero(ii), Vector::Zero(ii), Matrix::Zero(ii, static_cast<Eigen::Index>(d)),
                Matrix::Zero(ii, static_cast<Eigen::Index>(q)), Matrix::Zero(ii, static_cast<Eigen::Index>(n))};
    }

    Coefficients::JumpY make() const {
        return [p = *this](double, const Vector& x, double y, const Vector& u1, const Vector& u2e, double e) -> Vector {
            Vector out = p.c + p.x_coef * x + y * p.y_coef + e * p.e_coef;
            if (p.u1_coef.cols() > 0) out += p.u1_coef * u1;
            if (p.u2_coef.cols() > 0) out += p.u2_coef * u2e;
            return out;
        };
    }
};

/// Bundle of all six coefficient families.
struct CoefficientSet {
    DriftX mu_x;
    DiffusionX sigma_x;
    JumpX beta;
    DriftY mu_y;
    DiffusionY sigma_y;
    JumpY b;

    static CoefficientSet zero(std::size_t d, std::size_t q, std::size_t n, std::size_t processes) {
        return {DriftX::zero(d, q),        DiffusionX::zero(d, q), JumpX::zero(d, q, n, processes),
                DriftY::zero(d, q, n, processes), DiffusionY::zero(d, q), JumpY::zero(d, q, n, processes)};
    }

    Coefficients make(const MarkSpace& marks, double lipschitz_L, std::optional<double> growth_C) const {
        Coefficients c;
        c.mu_x = mu_x.make();
        c.sigma_x = sigma_x.make();
        c.beta = beta.make();
        c.mu_y = mu_y.make(marks);
        c.sigma_y = sigma_y.make();
        c.b = b.make();
        c.lipschitz_L = lipschitz_L;
        c.growth_C = growth_C;
        c.y_affine = mu_y.affine_in_y();
        return c;
    }
};

/// Payoff families: constant, affine, tanh, table.
struct Payoff {
    std::string kind = "constant";
    double c = 0.0;
    double scale = 1.0;
    Vector slope;
    std::optional<Table1d> table;

    std::function<double(const Vector&)> make() const {
        if (kind == "constant") return [c = c](const Vector&) { return c; };
        if (kind == "affine") return [c = c, a = slope](const Vector& x) { return c + a.dot(x); };
        if (kind == "tanh") {
            return [c = c, s = scale, a = slope](const Vector& x) { return s * std::tanh(a.dot(x) + c); };
        }
        if (kind == "table") {
            if (!table) throw ConfigError("payoff: table kind without table");
            return [t = *table](const Vector& x) { return t(x[0]); };
        }
        throw ConfigError("payoff: unknown kind '" + kind + "'");
    }

    /// sup |g| when the family is bounded.
    std::optional<double> bound() const {
        if (kind == "constant") return std::abs(c);
        if (kind == "tanh") return std::abs(scale);
        if (kind == "table" && table) return table->max_abs();
        if (kind == "affine" && slope.size() > 0 && slope.isZero(0.0)) return std::abs(c);
        return std::nullopt;
    }
};

}  // namespace stp::builtins
