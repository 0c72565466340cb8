#pragma once

// The logarithmic chart phi : (0,1) -> R with phi(x) = ln x / ln(alpha)
// near 0 and phi(x) = ln(1-x) / ln(beta) near 1, glued by a C^2 quintic
// blend of the inverse on [-K0, K0].

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "matherkit/rootfind.hpp"

namespace matherkit {

namespace detail {

// Two-point quintic Hermite matching value / first / second derivative.
class Quintic {
public:
    Quintic() = default;
    Quintic(double a, double b, double v0, double d0, double s0, double v1,
            double d1, double s1)
        : a_(a), h_(b - a) {
        const double c0 = v0, c1 = d0 * h_, c2 = 0.5 * s0 * h_ * h_;
        const double A = v1 - c0 - c1 - c2;
        const double B = d1 * h_ - c1 - 2 * c2;
        const double C = s1 * h_ * h_ - 2 * c2;
        c_ = {c0, c1, c2, 10 * A - 4 * B + 0.5 * C, -15 * A + 7 * B - C,
              6 * A - 3 * B + 0.5 * C};
    }

    double value(double y) const {
        const double t = (y - a_) / h_;
        double v = c_[5];
        for (int i = 4; i >= 0; --i) v = v * t + c_[i];
        return v;
    }
    double deriv(double y) const {
        const double t = (y - a_) / h_;
        double v = 5 * c_[5];
        for (int i = 4; i >= 1; --i) v = v * t + i * c_[i];
        return v / h_;
    }

private:
    double a_ = 0, h_ = 1;
    std::array<double, 6> c_{};
};

}  // namespace detail

class Chart {
public:
    Chart(double alpha, double beta, double K0 = 3.0)
        : alpha_(alpha), beta_(beta), K0_(K0), la_(std::log(alpha)), lb_(std::log(beta)) {
        if (!(alpha > 1.0)) throw std::invalid_argument("Chart: alpha must be > 1");
        if (!(beta > 0.0 && beta < 1.0))
            throw std::invalid_argument("Chart: beta must be in (0,1)");
        const double xl = std::exp(-K0_ * la_);        // phi^{-1}(-K0)
        const double xr = 1.0 - std::exp(K0_ * lb_);   // phi^{-1}(K0)
        blend_ = detail::Quintic(-K0_, K0_, xl, la_ * xl, la_ * la_ * xl, xr,
                                 -lb_ * (1.0 - xr), -lb_ * lb_ * (1.0 - xr));
        // certify monotonicity of the blend
        for (int i = 0; i <= 4096; ++i) {
            const double y = -K0_ + 2.0 * K0_ * i / 4096.0;
            if (!(blend_.deriv(y) > 0.0))
                throw std::runtime_error("Chart: blend is not monotone; increase K0");
        }
    }

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    double K0() const { return K0_; }
    double log_alpha() const { return la_; }
    double log_beta() const { return lb_; }

    double inverse(double y) const {
        if (y <= -K0_) return std::exp(y * la_);
        if (y >= K0_) return 1.0 - std::exp(y * lb_);
        return blend_.value(y);
    }
    double inverse_deriv(double y) const {
        if (y <= -K0_) return la_ * std::exp(y * la_);
        if (y >= K0_) return -lb_ * std::exp(y * lb_);
        return blend_.deriv(y);
    }

    double value(double x) const {
        if (x <= 0.0 || x >= 1.0) throw std::domain_error("Chart: x outside (0,1)");
        if (x <= inverse(-K0_)) return std::log(x) / la_;
        if (x >= inverse(K0_)) return std::log1p(-x) / lb_;
        return solve_increasing(
            [this](double y, double& v, double& d) {
                v = blend_.value(y);
                d = blend_.deriv(y);
            },
            -K0_, K0_, x, 1e-6, 1e-14);
    }
    double deriv(double x) const { return 1.0 / inverse_deriv(value(x)); }

private:
    double alpha_, beta_, K0_, la_, lb_;
    detail::Quintic blend_;
};

using ChartPtr = std::shared_ptr<const Chart>;

inline ChartPtr make_chart(double alpha, double beta, double K0 = 3.0) {
    // weakly hyperbolic multipliers need a wider blend: the glued region's
    // mean slope ~1/(2 K0) must dominate the end slopes ~|ln a| e^{-K0 |ln a|}
    for (;; K0 += 1.0) {
        try {
            return std::make_shared<Chart>(alpha, beta, K0);
        } catch (const std::runtime_error&) {
            if (K0 >= 64.0) throw;
        }
    }
}

}  // namespace matherkit
