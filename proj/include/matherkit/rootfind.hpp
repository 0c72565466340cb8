#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

namespace matherkit {

// Root of a strictly increasing scalar function on [lo, hi]: bisection
// down to `bracket_tol`, then Newton polished to `tol` (falls back to
// bisection steps whenever Newton leaves the bracket).
inline double solve_increasing(const std::function<void(double, double&, double&)>& f,
                               double lo, double hi, double target,
                               double bracket_tol = 1e-6, double tol = 1e-12,
                               int max_iter = 200) {
    double flo, fhi, d;
    f(lo, flo, d);
    f(hi, fhi, d);
    if (flo > target + tol || fhi < target - tol)
        throw std::domain_error("solve_increasing: target outside bracket");
    while (hi - lo > bracket_tol) {
        const double mid = 0.5 * (lo + hi);
        double fm;
        f(mid, fm, d);
        (fm < target ? lo : hi) = mid;
    }
    double x = 0.5 * (lo + hi);
    for (int i = 0; i < max_iter; ++i) {
        double fx, dfx;
        f(x, fx, dfx);
        const double err = fx - target;
        if (std::abs(err) < tol * std::max(1.0, std::abs(target))) return x;
        double step = (dfx > 0) ? err / dfx : 0.0;
        double next = x - step;
        if (!(next > lo && next < hi) || step == 0.0) next = 0.5 * (lo + hi);
        double fn;
        f(next, fn, dfx);
        ((fn < target) ? lo : hi) = next;
        x = next;
    }
    return x;
}

}  // namespace matherkit
