#pragma once

// Centralizer embedding through periodic islands on the d-torus, d >= 3.
//
// The model map is a rigid translation by (1/n, 0, ..., 0), optionally
// composed with a "decoration" supported away from the orbit of a
// designated ball.  The n iterates of the ball are pairwise disjoint and
// the n-th return to the ball is the identity, so any diffeomorphism of
// the unit ball that is the identity near the boundary can be copied
// onto every iterate; the copies assemble into an ambient diffeomorphism
// that commutes with the model map.  The assignment h -> h_phi is an
// injective group homomorphism into the centralizer.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace matherkit {

using VecN = std::vector<double>;

namespace isl {

inline double wrap1(double x) { return x - std::floor(x); }

inline double wrap_half(double x) { return x - std::round(x); }

// distance on the flat torus (R/Z)^d
inline double torus_dist(const VecN& a, const VecN& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = wrap_half(a[i] - b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

inline void wrap_inplace(VecN& x) {
    for (double& c : x) c = wrap1(c);
}

}  // namespace isl

// ---------------------------------------------------------------------------
// diffeomorphisms of R^d equal to the identity outside the unit ball

// Identity + compactly supported displacement.  jac_bound is a certified
// upper bound for sup |J - Id| (operator norm) over the ball; a bound
// below 1 makes the displacement a contraction, so the map is invertible
// and the inverse is computable by fixed-point iteration.
struct SupportedDiffeo {
    int d = 3;
    std::function<VecN(const VecN&)> disp;  // zero outside the unit ball
    double jac_bound = 0.0;

    VecN apply(const VecN& x) const {
        VecN y = disp(x);
        for (int i = 0; i < d; ++i) y[static_cast<std::size_t>(i)] += x[static_cast<std::size_t>(i)];
        return y;
    }

    VecN invert(const VecN& p) const {
        VecN y = p;
        for (int it = 0; it < 200; ++it) {
            const VecN dy = disp(y);
            double step = 0.0;
            for (int i = 0; i < d; ++i) {
                const std::size_t k = static_cast<std::size_t>(i);
                const double ny = p[k] - dy[k];
                step = std::max(step, std::abs(ny - y[k]));
                y[k] = ny;
            }
            if (step < 1e-16) break;
        }
        return y;
    }
};

inline SupportedDiffeo identity_supported(int d) {
    SupportedDiffeo h;
    h.d = d;
    h.disp = [d](const VecN&) { return VecN(static_cast<std::size_t>(d), 0.0); };
    h.jac_bound = 0.0;
    return h;
}

// Smooth shift inside the unit ball: x -> x + eta(|x|^2) * shift with a
// C^2 cubic profile.  |grad(eta)| <= 2, so |shift| < 1/2 certifies
// invertibility; the constructor rejects larger shifts.
inline SupportedDiffeo ball_shift(int d, const VecN& shift) {
    if (static_cast<int>(shift.size()) != d)
        throw std::invalid_argument("ball_shift: dimension mismatch");
    double s2 = 0.0;
    for (double c : shift) s2 += c * c;
    const double sn = std::sqrt(s2);
    if (sn >= 0.45)
        throw std::invalid_argument("ball_shift: |shift| must stay below 0.45");
    SupportedDiffeo h;
    h.d = d;
    h.disp = [d, shift](const VecN& x) {
        double q = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = x[static_cast<std::size_t>(i)];
            q += c * c;
        }
        VecN out(static_cast<std::size_t>(d), 0.0);
        if (q >= 1.0) return out;
        const double t = 1.0 - q;
        const double eta = t * t * t;
        for (int i = 0; i < d; ++i)
            out[static_cast<std::size_t>(i)] = eta * shift[static_cast<std::size_t>(i)];
        return out;
    };
    // sup |D disp| <= |shift| * sup |d(eta)/dx| = |shift| * 6 q^(1/2) t^2 <= 2|shift|
    h.jac_bound = 2.0 * sn;
    return h;
}

inline SupportedDiffeo compose(const SupportedDiffeo& g, const SupportedDiffeo& h) {
    if (g.d != h.d) throw std::invalid_argument("compose: dimension mismatch");
    SupportedDiffeo out;
    out.d = g.d;
    out.disp = [g, h](const VecN& x) {
        VecN y = h.apply(x);
        VecN z = g.apply(y);
        for (std::size_t i = 0; i < x.size(); ++i) z[i] -= x[i];
        return z;
    };
    out.jac_bound = (1.0 + g.jac_bound) * (1.0 + h.jac_bound) - 1.0;
    return out;
}

inline SupportedDiffeo inverse_of(const SupportedDiffeo& h) {
    SupportedDiffeo out;
    out.d = h.d;
    out.disp = [h](const VecN& x) {
        VecN y = h.invert(x);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] -= x[i];
        return y;
    };
    // |J(h^{-1}) - Id| = |J^{-1}(Id - J)| <= b / (1 - b)
    out.jac_bound = h.jac_bound / (1.0 - h.jac_bound);
    return out;
}

// ---------------------------------------------------------------------------
// island maps

// Decoration: a supported diffeomorphism acting in the chart of a ball
// (center, radius) on the torus, extended by the identity.
struct IslandDecoration {
    SupportedDiffeo map;
    VecN center;
    double radius = 0.0;
};

// Rigid translation by (1/n, 0, ..., 0) on (R/Z)^d, composed with an
// optional decoration whose support is disjoint from all n iterates of
// the designated ball.  On the ball orbit the map is the bare
// translation, so the n-th return to the ball is the identity.
struct IslandMap {
    int d = 3;
    int n = 2;
    VecN center;
    double radius = 0.0;
    std::vector<IslandDecoration> decorations;
    double return_defect = 0.0;  // certified sup over probe ball points

    VecN ball_center(int i) const {
        VecN c = center;
        c[0] = isl::wrap1(c[0] + static_cast<double>(i) / n);
        return c;
    }

    VecN apply(const VecN& x) const {
        VecN y = x;
        y[0] = isl::wrap1(y[0] + 1.0 / n);
        for (const IslandDecoration& dec : decorations) {
            if (isl::torus_dist(y, dec.center) >= dec.radius) continue;
            VecN u(static_cast<std::size_t>(d));
            for (int i = 0; i < d; ++i) {
                const std::size_t k = static_cast<std::size_t>(i);
                u[k] = isl::wrap_half(y[k] - dec.center[k]) / dec.radius;
            }
            const VecN v = dec.map.apply(u);
            for (int i = 0; i < d; ++i) {
                const std::size_t k = static_cast<std::size_t>(i);
                y[k] = isl::wrap1(dec.center[k] + dec.radius * v[k]);
            }
        }
        return y;
    }
};

// Sample a point of the unit ball with a seeded generator (rejection
// from the cube; acceptance is fine for the small d used here).
inline VecN sample_unit_ball(int d, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        VecN p(static_cast<std::size_t>(d));
        double q = 0.0;
        for (double& c : p) {
            c = u(rng);
            q += c * c;
        }
        if (q < 1.0) return p;
    }
}

inline IslandMap make_island_map(int d, int n,
                                 std::vector<IslandDecoration> decorations = {},
                                 VecN center = {}, double radius = -1.0) {
    if (d < 3) throw std::invalid_argument("make_island_map: dimension must be >= 3");
    if (n < 2) throw std::invalid_argument("make_island_map: period must be >= 2");
    if (center.empty()) center = VecN(static_cast<std::size_t>(d), 0.5);
    if (static_cast<int>(center.size()) != d)
        throw std::invalid_argument("make_island_map: center dimension mismatch");
    if (radius < 0.0) radius = 0.4 / n;
    if (!(radius > 0.0 && radius < 0.5 / n))
        throw std::invalid_argument(
            "make_island_map: ball radius must lie in (0, 1/(2n))");
    IslandMap f;
    f.d = d;
    f.n = n;
    f.center = std::move(center);
    f.radius = radius;
    for (IslandDecoration& dec : decorations) {
        if (static_cast<int>(dec.center.size()) != d || dec.map.d != d)
            throw std::invalid_argument(
                "make_island_map: decoration dimension mismatch");
        if (!(dec.radius > 0.0 && dec.radius < 0.5))
            throw std::invalid_argument(
                "make_island_map: decoration radius must lie in (0, 0.5)");
        if (dec.map.jac_bound >= 1.0)
            throw std::invalid_argument(
                "make_island_map: decoration Jacobian bound must stay below 1");
        for (int i = 0; i < n; ++i)
            if (isl::torus_dist(dec.center, f.ball_center(i)) <
                dec.radius + f.radius)
                throw std::invalid_argument(
                    "make_island_map: decoration support overlaps ball iterate " +
                    std::to_string(i));
        f.decorations.push_back(std::move(dec));
    }
    // certify the n-th return on >= 10^3 probe ball points
    std::mt19937 rng(0x15a5eed);
    double worst = 0.0;
    for (int t = 0; t < 1024; ++t) {
        const VecN u = sample_unit_ball(d, rng);
        VecN x = f.center;
        for (int i = 0; i < d; ++i)
            x[static_cast<std::size_t>(i)] =
                isl::wrap1(x[static_cast<std::size_t>(i)] +
                           f.radius * u[static_cast<std::size_t>(i)]);
        VecN y = x;
        for (int i = 0; i < n; ++i) y = f.apply(y);
        worst = std::max(worst, isl::torus_dist(y, x));
    }
    f.return_defect = worst;
    if (worst > 1e-12)
        throw std::runtime_error(
            "make_island_map: n-th return to the ball is not the identity");
    return f;
}

// ---------------------------------------------------------------------------
// the centralizer embedding h -> h_phi

// Ambient diffeomorphism of the d-torus given by forward and inverse maps.
struct AmbientDiffeo {
    int d = 3;
    std::function<VecN(const VecN&)> fwd;
    std::function<VecN(const VecN&)> inv;
};

inline AmbientDiffeo torus_translation(int d, VecN v) {
    AmbientDiffeo out;
    out.d = d;
    VecN mv = v;
    for (double& c : mv) c = -c;
    out.fwd = [v](const VecN& x) {
        VecN y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = isl::wrap1(y[i] + v[i]);
        return y;
    };
    out.inv = [mv](const VecN& x) {
        VecN y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = isl::wrap1(y[i] + mv[i]);
        return y;
    };
    return out;
}

inline AmbientDiffeo ambient_of(const IslandMap& f) {
    AmbientDiffeo out;
    out.d = f.d;
    out.fwd = [f](const VecN& x) { return f.apply(x); };
    return out;
}

// Copy h onto every ball iterate through the chart transported by the
// translation: on the i-th iterate the copy is f^i o h_0 o f^{-i}, and
// because f is the bare translation on the orbit all copies coincide
// with h read in the local ball chart.  The result is the identity
// outside the iterate union, exactly, and h_{i+n} = h_i by construction.
inline AmbientDiffeo embed_centralizer(const IslandMap& f, const SupportedDiffeo& h) {
    if (h.d != f.d)
        throw std::invalid_argument("embed_centralizer: dimension mismatch");
    if (h.jac_bound >= 1.0)
        throw std::invalid_argument(
            "embed_centralizer: Jacobian bound must stay below 1");
    const int d = f.d;
    auto chart_apply = [f, d](const VecN& x, const VecN& c,
                              bool forward, const SupportedDiffeo& g) {
        VecN u(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            u[k] = isl::wrap_half(x[k] - c[k]) / f.radius;
        }
        const VecN v = forward ? g.apply(u) : g.invert(u);
        VecN y(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            y[k] = isl::wrap1(c[k] + f.radius * v[k]);
        }
        return y;
    };
    auto act = [f, d, h, chart_apply](const VecN& x, bool forward) {
        for (int i = 0; i < f.n; ++i) {
            const VecN c = f.ball_center(i);
            if (isl::torus_dist(x, c) < f.radius)
                return chart_apply(x, c, forward, h);
        }
        VecN y = x;
        isl::wrap_inplace(y);
        return y;
    };
    AmbientDiffeo out;
    out.d = d;
    out.fwd = [act](const VecN& x) { return act(x, true); };
    out.inv = [act](const VecN& x) { return act(x, false); };
    return out;
}

// Max over seeded probe points of the torus distance between f(g(x))
// and g(f(x)).
inline double commutator_defect(const AmbientDiffeo& f, const AmbientDiffeo& g,
                                int probes = 1000, unsigned seed = 0x900dbeef) {
    if (f.d != g.d)
        throw std::invalid_argument("commutator_defect: dimension mismatch");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < probes; ++t) {
        VecN x(static_cast<std::size_t>(f.d));
        for (double& c : x) c = u(rng);
        worst = std::max(worst, isl::torus_dist(f.fwd(g.fwd(x)), g.fwd(f.fwd(x))));
    }
    return worst;
}

}  // namespace matherkit
