#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>

namespace matherkit {

// Fixed-step RK4 over [0, t] for dx/dt = f(x), with step doubling until
// two successive refinements agree to `tol`.
inline double rk4_flow(const std::function<double(double)>& f, double x0, double t,
                       double tol = 1e-10, int n0 = 32, int max_n = 1 << 18) {
    if (t == 0.0) return x0;
    auto run = [&](int n) {
        const double h = t / n;
        double x = x0;
        for (int i = 0; i < n; ++i) {
            const double k1 = f(x);
            const double k2 = f(x + 0.5 * h * k1);
            const double k3 = f(x + 0.5 * h * k2);
            const double k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        return x;
    };
    double prev = run(n0);
    for (int n = 2 * n0; n <= max_n; n *= 2) {
        const double cur = run(n);
        if (std::abs(cur - prev) < tol) return cur;
        prev = cur;
    }
    return prev;
}

// Composite Simpson with interval doubling.
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      double tol = 1e-11, int n0 = 16, int max_n = 1 << 20) {
    auto run = [&](int n) {
        const double h = (b - a) / n;
        double s = f(a) + f(b);
        for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
        return s * h / 3.0;
    };
    double prev = run(n0);
    for (int n = 2 * n0; n <= max_n; n *= 2) {
        const double cur = run(n);
        if (std::abs(cur - prev) < tol * std::max(1.0, std::abs(cur))) return cur;
        prev = cur;
    }
    return prev;
}

}  // namespace matherkit
