#pragma once

// The conjugacy invariant of fixed-point-free interval diffeomorphisms
// with affine tails: transfer to the translation chart, the induced
// circle map, rotation defect, reconstruction of a generating field, and
// the flattening pipeline that kills the invariant by composing with
// deeply supported bump factors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "matherkit/diffeo1d.hpp"

namespace matherkit {

// f conjugated through the chart: H(y) = y + 1 + d(y), d compactly
// supported in [-K, K].
struct ThetaMap {
    ChartPtr chart;
    CubicHermite dev;       // deviation d
    bool has_dev = false;
    double K = 3.0;         // H(y) = y + 1 exactly outside [-K, K]
    double supp_lo = 0.0;   // actual deviation support, [supp_lo, supp_hi]
    double supp_hi = 0.0;
    // disjoint intervals where d may be nonzero, sorted; lets orbits hop
    // across the (possibly long) translation gaps between lifted bumps
    std::vector<std::pair<double, double>> supports;
    double dmax = 0.0;      // sup |d|

    bool in_support(double y) const {
        if (!has_dev || y <= supp_lo || y >= supp_hi) return false;
        if (supports.empty()) return true;
        auto it = std::upper_bound(supports.begin(), supports.end(),
                                   std::make_pair(y, std::numeric_limits<double>::max()));
        if (it == supports.begin()) return false;
        --it;
        return y > it->first && y < it->second;
    }
    bool range_clear(double lo, double hi) const {
        if (!has_dev || hi <= supp_lo || lo >= supp_hi) return true;
        if (supports.empty()) return false;
        auto it = std::upper_bound(supports.begin(), supports.end(),
                                   std::make_pair(hi, std::numeric_limits<double>::max()));
        if (it == supports.begin()) return true;
        --it;
        return it->second <= lo;
    }

    double value(double y) const {
        double v = y + 1.0;
        if (in_support(y)) v += dev.value(y);
        return v;
    }
    double deriv(double y) const {
        double d = 1.0;
        if (in_support(y)) d += dev.deriv(y);
        return d;
    }
    void value_and_deriv(double y, double& v, double& d) const {
        v = y + 1.0;
        d = 1.0;
        if (in_support(y)) {
            double dv, dd;
            dev.value_and_deriv(y, dv, dd);
            v += dv;
            d += dd;
        }
    }
    double inverse(double z) const {
        const double slack = dmax + 1e-9;
        if (range_clear(z - 1.0 - slack, z - 1.0 + slack)) return z - 1.0;
        return solve_increasing(
            [this](double y, double& v, double& d) { value_and_deriv(y, v, d); },
            z - 1.0 - slack, z - 1.0 + slack, z, 1e-6, 1e-13);
    }
};

namespace m1 {
constexpr int kThetaSamples = 2048;

// nonzero clusters of a compactly supported spline: between two knots
// that are both exactly (0, 0) the cubic vanishes identically, so the
// support is the union of the nonzero runs
inline std::vector<std::pair<double, double>> supports_from_knots(
    const std::vector<Knot>& ks) {
    std::vector<std::pair<double, double>> out;
    auto zero = [](const Knot& k) { return k.y == 0.0 && k.dy == 0.0; };
    std::size_t i = 0;
    while (i + 1 < ks.size()) {
        if (zero(ks[i]) && zero(ks[i + 1])) {
            ++i;
            continue;
        }
        // start of a nonzero run
        const double lo = ks[i].x;
        while (i + 1 < ks.size() && !(zero(ks[i]) && zero(ks[i + 1]))) ++i;
        out.emplace_back(lo, ks[i].x);
    }
    return out;
}

// safe upper bound for sup |spline| from the knot data
inline double sup_bound(const CubicHermite& s) {
    double b = 0.0, hmax = 0.0;
    const auto& ks = s.knots();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        b = std::max(b, std::abs(ks[i].y));
        if (i > 0) hmax = std::max(hmax, ks[i].x - ks[i - 1].x);
    }
    double dmax = 0.0;
    for (const auto& k : ks) dmax = std::max(dmax, std::abs(k.dy));
    return b + 0.5 * dmax * hmax;
}

}  // namespace m1

// Transfer an interval diffeomorphism with affine tails (slope > 1 at 0,
// slope < 1 at 1, no interior fixed point) to the chart.
inline ThetaMap theta_of(const Diffeo1D& f, ChartPtr chart = nullptr) {
    if (f.domain() != DomainKind::Interval)
        throw std::invalid_argument("theta_of: interval map expected");

    // exact path: the map already lives in a chart
    if (const auto* core = f.chart_core()) {
        if (std::abs(core->tau - 1.0) > 1e-12)
            throw std::invalid_argument("theta_of: chart map must translate by one");
        ThetaMap th;
        th.chart = core->chart;
        th.K = std::max({core->chart->K0() + 1.0, std::abs(core->lo), std::abs(core->hi)});
        if (core->dev) {
            th.dev = *core->dev;
            th.has_dev = true;
            th.supp_lo = core->lo;
            th.supp_hi = core->hi;
            th.dmax = m1::sup_bound(th.dev);
            th.supports = m1::supports_from_knots(th.dev.knots());
        }
        return th;
    }

    const auto* core = f.spline_core();
    if (!core) throw std::invalid_argument("theta_of: unsupported representation");
    const double alpha = core->left.slope;
    const double beta = core->right.slope;
    if (!(alpha > 1.0) || !(beta < 1.0))
        throw std::invalid_argument(
            "theta_of: tail slopes must satisfy alpha > 1 at 0 and beta < 1 at 1");
    if (!chart) chart = make_chart(alpha, beta);
    if (std::abs(chart->alpha() - alpha) > 1e-12 || std::abs(chart->beta() - beta) > 1e-12)
        throw std::invalid_argument("theta_of: chart multipliers do not match the tails");

    const double yl = std::log(core->left.radius) / chart->log_alpha();   // < 0
    const double yr = std::log(core->right.radius) / chart->log_beta();   // > 0
    const double K = std::max({-yl, yr, chart->K0()}) + 1.0;

    const int n = m1::kThetaSamples;
    std::vector<Knot> dk;
    dk.reserve(n + 1);
    for (int i = 0; i <= n; ++i) {
        const double y = -K + 2.0 * K * i / n;
        const double x = chart->inverse(y);
        double fx, fd;
        f.eval(x, fx, fd);
        if (!(fx > x))
            throw std::invalid_argument("theta_of: map has a fixed point in (0,1)");
        const double v = chart->value(fx) - y - 1.0;
        const double d = chart->deriv(fx) * fd * chart->inverse_deriv(y) - 1.0;
        dk.push_back({y, v, d});
    }
    // the deviation must already vanish at the sample ends; snap the
    // roundoff residue to zero
    if (std::abs(dk.front().y) > 1e-8 || std::abs(dk.back().y) > 1e-8 ||
        std::abs(dk.front().dy) > 1e-8 || std::abs(dk.back().dy) > 1e-8)
        throw std::runtime_error("theta_of: deviation support exceeds the tail estimate");
    dk.front().y = 0.0;
    dk.front().dy = 0.0;
    dk.back().y = 0.0;
    dk.back().dy = 0.0;
    for (const auto& k : dk)
        if (!(1.0 + k.dy > 0.0))
            throw std::invalid_argument("theta_of: transferred map is not increasing");

    ThetaMap th;
    th.chart = chart;
    th.K = K;
    th.supp_lo = -K;
    th.supp_hi = K;
    th.dev = CubicHermite(std::move(dk));
    th.has_dev = true;
    th.dmax = m1::sup_bound(th.dev);
    return th;
}

// Rebuild the interval diffeomorphism from its chart data.
inline Diffeo1D from_theta(const ThetaMap& th) {
    auto node = std::make_shared<d1::ChartMapNode>();
    node->chart = th.chart;
    node->tau = 1.0;
    if (th.has_dev) {
        node->dev = th.dev;
        node->lo = th.supp_lo;
        node->hi = th.supp_hi;
    }
    return Diffeo1D(DomainKind::Interval, 1, node);
}

// ---------------------------------------------------------------------------
// the induced circle map

struct MatherInvariant {
    Diffeo1D map;                 // circle diffeomorphism, degree 1
    std::vector<double> x;        // sample grid on [0,1)
    std::vector<double> value;    // lift values
    std::vector<double> deriv;
    double K = 0.0;
};

namespace m1 {

// Lift value and derivative of the induced circle map at xbar, by
// shuttling an orbit from below -K to above K.
inline void invariant_point(const ThetaMap& th, double xbar, double& v, double& d) {
    const double m = std::ceil(xbar - th.supp_lo + 1.0 + 1e-9);
    double y = xbar - m;
    double dprod = 1.0;
    const int cap = 4 * static_cast<int>(th.supp_hi - th.supp_lo + 2.0) + 64;
    int n = 0;
    while (y < th.supp_hi) {
        double vy, dy;
        th.value_and_deriv(y, vy, dy);
        if (!(vy > y)) throw std::runtime_error("invariant: orbit stalled");
        y = vy;
        dprod *= dy;
        if (++n > cap) throw std::runtime_error("invariant: orbit iteration cap exceeded");
    }
    v = y - n + m;
    d = dprod;
}

}  // namespace m1

inline MatherInvariant mather_invariant(const ThetaMap& th, const GridSpec& grid) {
    MatherInvariant out;
    out.K = th.K;
    int n = grid.resolution;
    for (;; n *= 2) {
        out.x.clear();
        out.value.clear();
        out.deriv.clear();
        bool monotone = true;
        double prev = -1.0;
        for (int i = 0; i < n; ++i) {
            const double xb = static_cast<double>(i) / n;
            double v, d;
            m1::invariant_point(th, xb, v, d);
            if (!(d > 0.0) || (i > 0 && !(v > prev))) monotone = false;
            prev = v;
            out.x.push_back(xb);
            out.value.push_back(v);
            out.deriv.push_back(d);
        }
        if (monotone) break;
        if (n >= (1 << 16))
            throw std::runtime_error("invariant: induced map failed the monotone lift check");
    }
    // normalize the lift so the displacement has no integer part
    const double off = std::floor(out.value[0]);
    for (double& v : out.value) v -= off;
    std::vector<Knot> ks;
    ks.reserve(out.x.size() + 1);
    for (std::size_t i = 0; i < out.x.size(); ++i)
        ks.push_back({out.x[i], out.value[i], out.deriv[i]});
    ks.push_back({1.0, out.value[0] + 1.0, out.deriv[0]});
    clamp_monotone(ks);
    auto node = std::make_shared<d1::CircleSplineNode>();
    node->lift = CubicHermite(std::move(ks));
    node->deg = 1;
    out.map = Diffeo1D(DomainKind::Circle, 1, node);
    return out;
}

inline MatherInvariant mather_invariant(const Diffeo1D& f, const GridSpec& grid) {
    return mather_invariant(theta_of(f), grid);
}

// ---------------------------------------------------------------------------
// rotation defect

struct RotationDefect {
    double rho = 0.0;     // mean displacement of the lift
    double defect = 0.0;  // sup |F(x) - x - rho|
};

inline RotationDefect rotation_defect(const Diffeo1D& c, const GridSpec& grid) {
    if (c.domain() != DomainKind::Circle || c.degree() != 1)
        throw std::invalid_argument("rotation_defect: degree-one circle map expected");
    const int n = grid.resolution;
    std::vector<double> disp(n);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / n;
        disp[i] = c(x) - x;
        mean += disp[i];
    }
    mean /= n;
    RotationDefect out;
    out.rho = mean - std::floor(mean);
    double sup = 0.0;
    for (double d : disp) sup = std::max(sup, std::abs(d - mean));
    out.defect = sup;
    return out;
}

// ---------------------------------------------------------------------------
// reconstruction of a generating vector field

// Push the constant unit field from below -K along the orbit of H; exact
// when the induced circle map is a rotation, a uniform approximation
// otherwise.  Returned in interval coordinates with analytic tails of
// slopes ln(alpha) at 0 and ln(beta) at 1.
inline VectorField1D reconstruct_field_theta(const ThetaMap& th, const GridSpec& grid) {
    auto Y = [&th](double y) {
        double prod = 1.0;
        int guard = 0;
        const int cap = 4 * static_cast<int>(th.supp_hi - th.supp_lo + 2.0) + 64;
        while (y > th.supp_lo) {
            y = th.inverse(y);
            double v, d;
            th.value_and_deriv(y, v, d);
            prod *= d;
            if (++guard > cap)
                throw std::runtime_error("reconstruct_field: backward orbit cap exceeded");
        }
        return prod;
    };

    const double la = th.chart->log_alpha();
    const double lb = th.chart->log_beta();
    const double K0 = th.chart->K0();

    // window of chart heights where the field can differ from the linear
    // tails, clipped to a depth still representable in double; past the
    // clip the pushed field differs from the tail by a factor bounded by
    // the rotation defect, scaled by the tail size itself
    const double Kw = 30.0 / std::max(std::abs(la), std::abs(lb));
    const double y_lo = std::max(-Kw, std::min(th.supp_lo, -K0) - 1.0);
    const double y_hi = std::min(Kw, std::max(th.supp_hi + 1.0, K0) + 1.0);

    // sample uniformly in chart height so the x-knots refine
    // geometrically toward the endpoints
    const int n = std::max({grid.resolution, 2048,
                            std::min(32768, static_cast<int>(192.0 * (y_hi - y_lo)))});
    const double h = (y_hi - y_lo) / n;
    std::vector<double> xs(n + 1), vals(n + 1), jac(n + 1);
    for (int i = 0; i <= n; ++i) {
        const double y = y_lo + h * i;
        xs[i] = th.chart->inverse(y);
        jac[i] = th.chart->inverse_deriv(y);
        vals[i] = jac[i] * Y(y);
    }
    // slopes dX/dx = (dX/dy) / (dx/dy), fourth-order differences in y
    std::vector<Knot> ks(n + 1);
    for (int i = 0; i <= n; ++i) {
        double dXdy;
        if (i >= 2 && i + 2 <= n)
            dXdy = (8.0 * (vals[i + 1] - vals[i - 1]) - (vals[i + 2] - vals[i - 2])) /
                   (12.0 * h);
        else if (i >= 1 && i + 1 <= n)
            dXdy = (vals[i + 1] - vals[i - 1]) / (2.0 * h);
        else if (i == 0)
            dXdy = (vals[1] - vals[0]) / h;
        else
            dXdy = (vals[n] - vals[n - 1]) / h;
        ks[i] = {xs[i], vals[i], dXdy / jac[i]};
    }
    // splice exactly into the linear tails
    const double rl = xs.front();
    const double rr = 1.0 - xs.back();
    ks.front() = {xs.front(), la * rl, la};
    ks.back() = {xs.back(), lb * (xs.back() - 1.0), lb};
    std::vector<FieldZero> zeros{{0.0, la, rl}, {1.0, lb, rr}};
    return VectorField1D(DomainKind::Interval, std::move(zeros), CubicHermite(std::move(ks)));
}

struct ReconstructResult {
    VectorField1D X;
    double residual = 0.0;  // sup-grid |flow(X, 1, x) - f(x)|
};

inline ReconstructResult reconstruct_field(const Diffeo1D& f, const GridSpec& grid) {
    const ThetaMap th = theta_of(f);
    ReconstructResult out{reconstruct_field_theta(th, grid), 0.0};
    const int n = grid.resolution;
    for (int i = 0; i <= n; ++i) {
        const double x = static_cast<double>(i) / n;
        out.residual = std::max(out.residual, std::abs(flow_map(out.X, 1.0, x) - f(x)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// bump factors and their lifts

struct CircleBump {
    Diffeo1D map;          // circle diffeomorphism, identity outside the arc
    double arc_lo = 0.0;   // support arc start, in [0,1)
    double arc_len = 0.0;
    C1Distance c1;         // distance from the identity
};

// Lift a supported circle diffeomorphism to a deeply supported interval
// diffeomorphism through the chart: identity outside phi^{-1}((a, a+1)),
// the unique lift of psi with support in (a, a+1) inside.  Rejected when
// the projection of a lands in the support arc.
inline Diffeo1D lift_bump(ChartPtr chart, const CircleBump& psi, double a) {
    if (psi.arc_len >= 1.0)
        throw std::invalid_argument("lift_bump: support must be a proper arc");
    double s = psi.arc_lo - a;
    s -= std::floor(s);
    if (psi.arc_len > 0.0 && (s < 1e-9 || s + psi.arc_len > 1.0 - 1e-9))
        throw std::invalid_argument(
            "lift_bump: projection of the height lies in the bump support");
    const double lo = psi.arc_lo;
    const double len = psi.arc_len;
    const double k = (a + s) - lo;  // integer shift placing the arc in (a, a+1)

    // deviation d(y) = lift(y - k) + k - y on [lo + k, lo + k + len]
    const auto* cs = psi.map.circle_core();
    std::vector<Knot> dk;
    auto push = [&](double x) {
        double v, d;
        psi.map.eval(x, v, d);
        dk.push_back({x + k, v - x, d - 1.0});
    };
    push(lo);
    if (cs) {
        for (const auto& kn : cs->lift.knots()) {
            double xx = kn.x;
            double off = xx - lo;
            off -= std::floor(off);
            if (off > 1e-12 && off < len - 1e-12) {
                double v, d;
                psi.map.eval(lo + off, v, d);
                dk.push_back({lo + off + k, v - (lo + off), d - 1.0});
            }
        }
    } else {
        for (int i = 1; i < 64; ++i) push(lo + len * i / 64.0);
    }
    push(lo + len);
    std::sort(dk.begin(), dk.end(), [](const Knot& a_, const Knot& b_) { return a_.x < b_.x; });
    dk.erase(std::unique(dk.begin(), dk.end(),
                         [](const Knot& a_, const Knot& b_) {
                             return std::abs(a_.x - b_.x) < 1e-12;
                         }),
             dk.end());
    dk.front().y = 0.0;
    dk.front().dy = 0.0;
    dk.back().y = 0.0;
    dk.back().dy = 0.0;

    auto node = std::make_shared<d1::ChartMapNode>();
    node->chart = std::move(chart);
    node->tau = 0.0;
    node->lo = dk.front().x;
    node->hi = dk.back().x;
    node->dev = CubicHermite(std::move(dk));
    return Diffeo1D(DomainKind::Interval, 1, node);
}

// C1 size of a lifted bump, measured in interval coordinates but through
// the chart formula, which is independent of the lift height.
inline double lifted_bump_c1(const Diffeo1D& g) {
    const auto* core = g.chart_core();
    if (!core || !core->dev) return 0.0;
    const double s = (0.5 * (core->lo + core->hi) >= 0.0) ? core->chart->log_beta()
                                                          : core->chart->log_alpha();
    double worst = 0.0;
    const int n = 512;
    for (int i = 0; i <= n; ++i) {
        const double y = core->lo + (core->hi - core->lo) * i / n;
        double d, dd;
        core->dev->value_and_deriv(y, d, dd);
        const double ratio = std::exp(d * s);
        worst = std::max(worst, std::abs(ratio - 1.0));           // C0 scale
        worst = std::max(worst, std::abs(ratio * (1.0 + dd) - 1.0));  // derivative
    }
    return worst;
}

// ---------------------------------------------------------------------------
// fragmentation of a near-identity circle diffeomorphism

namespace m1 {

inline double smoother(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
}
inline double smoother_d(double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    return 30.0 * t * t * (t - 1.0) * (t - 1.0);
}

// Cumulative partition function: 0 for m == 0, 1 for m == M, otherwise a
// periodic plateau that ramps up over [0, w] and down over [m/M, m/M+w].
struct Cumulative {
    int m = 0, M = 3;
    double w = 0.05;
    void eval(double x, double& v, double& d) const {
        if (m <= 0) { v = 0.0; d = 0.0; return; }
        if (m >= M) { v = 1.0; d = 0.0; return; }
        x -= std::floor(x);
        const double down = static_cast<double>(m) / M;
        if (x < w) {
            v = smoother(x / w);
            d = smoother_d(x / w) / w;
        } else if (x <= down) {
            v = 1.0;
            d = 0.0;
        } else if (x < down + w) {
            v = 1.0 - smoother((x - down) / w);
            d = -smoother_d((x - down) / w) / w;
        } else {
            v = 0.0;
            d = 0.0;
        }
    }
};

}  // namespace m1

// Write a near-identity degree-one circle diffeomorphism as a product of
// factors, each supported in an arc of length <= max_support and within
// max_c1 of the identity.  Factors are returned in application order:
// composing last o ... o first recovers the input.
inline std::vector<CircleBump> fragment_circle(const Diffeo1D& G, double max_c1,
                                               double max_support,
                                               const GridSpec& grid = GridSpec(512)) {
    if (G.domain() != DomainKind::Circle || G.degree() != 1)
        throw std::invalid_argument("fragment_circle: degree-one circle map expected");
    const int n = std::max(grid.resolution, 256);

    const double shift = std::round(G(0.0) - 0.0);  // integer part of the lift

    // resample the displacement once; all isotopy work runs off this
    // spline instead of re-evaluating (possibly composite) G
    double umax = 0.0, dumax = 0.0, umean = 0.0;
    std::vector<double> us(n);
    std::vector<Knot> uk;
    uk.reserve(n + 1);
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / n;
        double v, d;
        G.eval(x, v, d);
        us[i] = v - x - shift;
        uk.push_back({x, us[i], d - 1.0});
        umax = std::max(umax, std::abs(us[i]));
        umean += us[i];
        dumax = std::max(dumax, std::abs(d - 1.0));
    }
    uk.push_back({1.0, us[0], uk.front().dy});
    const CubicHermite uspline(std::move(uk));
    umean /= n;
    if (umax < 1e-9) return {};  // identity: nothing to fragment
    double udev = 0.0;  // supports grow with the variation of u, not its size
    for (double u : us) udev = std::max(udev, std::abs(u - umean));

    // wide cutoff ramps cost fewer isotopy steps; affordable when the
    // displacement is nearly constant
    const double wide = (udev < 0.05) ? std::min(0.18, 0.35 * max_support) : 0.05;
    const double cap = 0.9 * (max_support - 1.0 / 3.0 - 2.0 * udev - 8.0 / n);
    double w = std::clamp(std::max(wide, cap), 0.05, 0.45);
    int M = 3;
    for (int pass = 0; pass < 8; ++pass) {
        const double room = max_support - w - 2.0 * udev - 4.0 / n;
        if (!(room > 0.01))
            throw std::runtime_error(
                "fragment_circle: support bound unreachable, map varies too much");
        M = std::max(3, static_cast<int>(std::ceil(1.0 / room)));
        // the cutoff ramp must end before the next one starts
        if (w <= 0.95 / M + 1e-12) break;
        w = std::max(0.05, 0.95 / M);
    }

    auto u_eval = [&uspline](double x, double& u, double& du) {
        uspline.value_and_deriv(x - std::floor(x), u, du);
    };

    // intermediate map h = id + c(x) u(x) with c = (j + Lambda_m) / k
    struct Inter {
        double t0;              // base level j/k
        double dt;              // 1/k
        m1::Cumulative lam;
        const std::function<void(double, double&, double&)>* u;
        void eval(double x, double& v, double& d) const {
            double uu, du, lv, ld;
            (*u)(x, uu, du);
            lam.eval(x, lv, ld);
            const double c = t0 + dt * lv;
            v = x + c * uu;
            d = 1.0 + c * du + dt * ld * uu;
        }
        double inverse(double y) const {
            double x = y;
            for (int it = 0; it < 100; ++it) {
                double v, d;
                eval(x, v, d);
                const double r = v - y;
                if (std::abs(r) < 1e-14) break;
                x -= r / d;
            }
            return x;
        }
    };

    std::function<void(double, double&, double&)> uf = u_eval;

    // leading factor-size estimate: derivative part dumax/k plus the
    // cutoff ramp moving by umax/k over width w
    const double lam = 1.875 / w;
    int k = std::max(1, static_cast<int>(std::ceil(
                            1.05 * (dumax + lam * umax) / std::max(max_c1, 1e-12))));
    std::vector<CircleBump> out;
    double achieved = 0.0;
    bool met = false;
    for (; k <= 65536; k *= 2) {
        out.clear();
        double worst_c1 = 0.0;
        bool support_ok = true;
        for (int j = 0; j < k && support_ok; ++j) {
            for (int m = 1; m <= M; ++m) {
                Inter hprev{static_cast<double>(j) / k, 1.0 / k,
                            {m - 1, M, w}, &uf};
                Inter hcur{static_cast<double>(j) / k, 1.0 / k,
                           {m, M, w}, &uf};
                // sample psi = hcur o hprev^{-1}
                std::vector<double> pv(n), pd(n);
                for (int i = 0; i < n; ++i) {
                    const double x = static_cast<double>(i) / n;
                    const double z = hprev.inverse(x);
                    double cv, cd, bv, bd;
                    hcur.eval(z, cv, cd);
                    hprev.eval(z, bv, bd);
                    pv[i] = cv;
                    pd[i] = cd / bd;
                }
                // locate the support arc: complement of the longest
                // circular run of identity samples
                std::vector<char> is_id(n);
                for (int i = 0; i < n; ++i) {
                    const double x = static_cast<double>(i) / n;
                    is_id[i] = std::abs(pv[i] - x) < 1e-13 &&
                               std::abs(pd[i] - 1.0) < 1e-11;
                }
                int best_start = -1, best_len = 0, cur_start = -1, cur_len = 0;
                for (int i = 0; i < 2 * n; ++i) {
                    if (is_id[i % n]) {
                        if (cur_start < 0) cur_start = i;
                        ++cur_len;
                        if (cur_len > best_len) {
                            best_len = std::min(cur_len, n);
                            best_start = cur_start;
                        }
                    } else {
                        cur_start = -1;
                        cur_len = 0;
                    }
                }
                if (best_len >= n) continue;  // this factor is the identity
                double arc_lo, arc_len;
                if (best_len <= 0) {
                    arc_lo = 0.0;
                    arc_len = 1.0;
                } else {
                    const double gap_lo = static_cast<double>(best_start % n) / n;
                    const double gap_len = static_cast<double>(best_len) / n;
                    arc_lo = gap_lo + gap_len;
                    arc_lo -= std::floor(arc_lo);
                    arc_len = 1.0 - gap_len + 2.0 / n;  // one-sample margin each side
                    arc_lo -= 1.0 / n;
                    arc_lo -= std::floor(arc_lo);
                }
                if (arc_len > max_support) {
                    support_ok = false;
                    break;
                }

                // build the factor as a lift spline, exactly identity
                // outside the arc
                std::vector<Knot> ks;
                ks.reserve(n + 1);
                for (int i = 0; i < n; ++i) {
                    const double x = static_cast<double>(i) / n;
                    double off = x - arc_lo;
                    off -= std::floor(off);
                    if (off < arc_len) {
                        ks.push_back({x, pv[i], pd[i]});
                    } else {
                        ks.push_back({x, x, 1.0});
                    }
                }
                ks.push_back({1.0, ks.front().y + 1.0, ks.front().dy});
                clamp_monotone(ks);
                auto node = std::make_shared<d1::CircleSplineNode>();
                node->lift = CubicHermite(std::move(ks));
                node->deg = 1;
                CircleBump b;
                b.map = Diffeo1D(DomainKind::Circle, 1, node);
                b.arc_lo = arc_lo;
                b.arc_len = arc_len;
                double c0 = 0.0, c1 = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double x = static_cast<double>(i) / n;
                    c0 = std::max(c0, std::abs(pv[i] - x));
                    c1 = std::max(c1, std::abs(pd[i] - 1.0));
                }
                b.c1 = {c0, c1};
                worst_c1 = std::max(worst_c1, std::max(c0, c1));
                out.push_back(std::move(b));
            }
        }
        achieved = worst_c1;
        if (support_ok && worst_c1 <= max_c1) {
            met = true;
            break;
        }
    }
    if (!met)
        throw std::runtime_error(
            "fragment_circle: bounds not met within the step cap, achieved c1 " +
            std::to_string(achieved));
    return out;
}

// ---------------------------------------------------------------------------
// flatten: make the induced circle map a rigid rotation

struct FlattenResult {
    Diffeo1D g;                     // the corrected interval diffeomorphism
    std::vector<Diffeo1D> factors;  // lifted bump factors, application order
    std::vector<double> heights;    // placement of each factor
    double defect_before = 0.0;
    double defect_after = 0.0;
    double c1_perturbation = 0.0;   // largest lifted-factor C1 size
};

inline FlattenResult flatten(const Diffeo1D& f, double epsilon, const GridSpec& grid) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("flatten: epsilon must be > 0");
    FlattenResult out;
    ThetaMap th = theta_of(f);
    MatherInvariant inv = mather_invariant(th, grid);
    out.defect_before = rotation_defect(inv.map, grid).defect;
    if (out.defect_before < 1e-12) {
        out.g = from_theta(th);
        out.defect_after = out.defect_before;
        return out;
    }

    // kill the invariant outright: psi_l o ... o psi_1 = Delta^{-1},
    // peeling the rotation part first so both fragmentations act on maps
    // with nearly constant or nearly zero displacement
    const double rho = rotation_defect(inv.map, grid).rho;
    Diffeo1D near_id = compose(circle_rotation(-rho), inv.map);  // R_{-rho} o Delta
    std::vector<CircleBump> bumps =
        fragment_circle(circle_rotation(-rho), 0.5 * epsilon, 0.49, grid);
    std::vector<CircleBump> tail_bumps =
        fragment_circle(inverse(near_id), 0.5 * epsilon, 0.49, grid);
    bumps.insert(bumps.end(), std::make_move_iterator(tail_bumps.begin()),
                 std::make_move_iterator(tail_bumps.end()));

    // supports at heights Kf + 2i live in pairwise disjoint unit windows,
    // so the deviation of the product is a plain knot union
    std::vector<Knot> dk;
    std::vector<std::pair<double, double>> supports;
    if (th.has_dev) {
        dk.insert(dk.end(), th.dev.knots().begin(), th.dev.knots().end());
        supports.emplace_back(th.supp_lo, th.supp_hi);
    } else {
        dk.insert(dk.end(), {{-th.K, 0.0, 0.0}, {th.K, 0.0, 0.0}});
    }

    double a = th.K;
    for (const auto& b : bumps) {
        a += 2.0;
        double used = a;
        double s = b.arc_lo - a;
        s -= std::floor(s);
        const double margin = 0.02;
        if (s < margin || s + b.arc_len > 1.0 - margin) {
            // recenter the window on the arc; the shift stays below 1/2
            double delta = b.arc_lo - 0.5 * (1.0 - b.arc_len) - a;
            delta -= std::round(delta);
            used = a + delta;
        }
        Diffeo1D lifted = lift_bump(th.chart, b, used);
        out.c1_perturbation = std::max(out.c1_perturbation, lifted_bump_c1(lifted));
        const auto* core = lifted.chart_core();
        dk.insert(dk.end(), core->dev->knots().begin(), core->dev->knots().end());
        supports.emplace_back(core->lo, core->hi);
        out.factors.push_back(std::move(lifted));
        out.heights.push_back(used);
    }

    ThetaMap th2;
    th2.chart = th.chart;
    th2.K = std::max(th.K, dk.back().x + 1.0);
    th2.supp_lo = dk.front().x;
    th2.supp_hi = dk.back().x;
    th2.dev = CubicHermite(std::move(dk));
    th2.has_dev = true;
    th2.dmax = m1::sup_bound(th2.dev);
    std::sort(supports.begin(), supports.end());
    th2.supports = std::move(supports);
    out.g = from_theta(th2);

    MatherInvariant inv2 = mather_invariant(th2, grid);
    out.defect_after = rotation_defect(inv2.map, grid).defect;
    return out;
}

// ---------------------------------------------------------------------------
// banded flatten, for downstream flow reconstruction

namespace m1 {

// Lift a supported circle diffeomorphism with an explicit integer shift:
// the deviation lands on [arc_lo + shift, arc_lo + shift + arc_len].
inline Diffeo1D lift_bump_shift(ChartPtr chart, const CircleBump& psi, double shift) {
    const double lo = psi.arc_lo;
    const double len = psi.arc_len;
    const auto* cs = psi.map.circle_core();
    std::vector<Knot> dk;
    auto push = [&](double x) {
        double v, d;
        psi.map.eval(x, v, d);
        dk.push_back({x + shift, v - x, d - 1.0});
    };
    push(lo);
    if (cs) {
        for (const auto& kn : cs->lift.knots()) {
            double off = kn.x - lo;
            off -= std::floor(off);
            if (off > 1e-12 && off < len - 1e-12) push(lo + off);
        }
    } else {
        for (int i = 1; i < 64; ++i) push(lo + len * i / 64.0);
    }
    push(lo + len);
    std::sort(dk.begin(), dk.end(),
              [](const Knot& a, const Knot& b) { return a.x < b.x; });
    dk.erase(std::unique(dk.begin(), dk.end(),
                         [](const Knot& a, const Knot& b) {
                             return std::abs(a.x - b.x) < 1e-12;
                         }),
             dk.end());
    dk.front().y = 0.0;
    dk.front().dy = 0.0;
    dk.back().y = 0.0;
    dk.back().dy = 0.0;

    auto node = std::make_shared<d1::ChartMapNode>();
    node->chart = std::move(chart);
    node->tau = 0.0;
    node->lo = dk.front().x;
    node->hi = dk.back().x;
    node->dev = CubicHermite(std::move(dk));
    return Diffeo1D(DomainKind::Interval, 1, node);
}

}  // namespace m1

// Variant of `flatten` whose corrected map is exactly a translation in the
// chart beyond a *representable* height on both sides: the factors are
// packed sequentially into a compact band on the side of the chart with
// the larger depth budget (depth 34 divided by the tail log-multiplier).
// Factor size starts at epsilon and doubles until the band fits the
// budget; resource error if it cannot fit even at the monotonicity bound.
inline FlattenResult flatten_banded(const Diffeo1D& f, double epsilon,
                                    const GridSpec& grid) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("flatten_banded: epsilon must be > 0");
    FlattenResult out;
    ThetaMap th = theta_of(f);
    MatherInvariant inv = mather_invariant(th, grid);
    out.defect_before = rotation_defect(inv.map, grid).defect;
    if (out.defect_before < 1e-9) {
        out.g = from_theta(th);
        out.defect_after = out.defect_before;
        return out;
    }

    const double la = th.chart->log_alpha();
    const double lb = std::abs(th.chart->log_beta());
    const bool below = la <= lb;                 // band on the roomier side
    const double unit = below ? la : lb;
    const double budget = 30.0 / unit - th.K - 3.0;
    if (budget < 3.0)
        throw std::runtime_error(
            "flatten_banded: no representable window band for these multipliers");

    const double rho = rotation_defect(inv.map, grid).rho;
    Diffeo1D near_id = compose(circle_rotation(-rho), inv.map);

    std::vector<CircleBump> bumps;
    double extent = 0.0;
    for (double c1 = epsilon;; c1 *= 2.0) {
        if (c1 > 0.9)
            throw std::runtime_error(
                "flatten_banded: factor band exceeds the depth budget at the "
                "monotonicity bound");
        try {
            bumps = fragment_circle(circle_rotation(-rho), c1, 0.95, grid);
            std::vector<CircleBump> tail_bumps =
                fragment_circle(inverse(near_id), c1, 0.95, grid);
            bumps.insert(bumps.end(), std::make_move_iterator(tail_bumps.begin()),
                         std::make_move_iterator(tail_bumps.end()));
        } catch (const std::runtime_error&) {
            continue;
        }
        // sequential packing: each deviation starts just above the last
        extent = 0.0;
        for (const auto& b : bumps) {
            const double start = extent + 0.02;
            const double lo_frac = b.arc_lo - std::floor(b.arc_lo);
            double pos = lo_frac + std::ceil(start - lo_frac);
            extent = pos + b.arc_len;
        }
        if (extent <= budget) break;
    }

    // integer base placing the band: above [K+1, ...] or below [..., -K-1],
    // ascending with application order in both cases
    const double base = below ? -std::ceil(th.K + 2.0 + extent)
                              : std::ceil(th.K + 1.0);

    std::vector<Knot> dk;
    std::vector<std::pair<double, double>> supports;
    const bool dev_first = below;  // band knots precede the original deviation
    if (!dev_first && th.has_dev) {
        dk.insert(dk.end(), th.dev.knots().begin(), th.dev.knots().end());
        supports.emplace_back(th.supp_lo, th.supp_hi);
    }
    double cursor = 0.0;
    for (const auto& b : bumps) {
        const double start = cursor + 0.02;
        const double lo_frac = b.arc_lo - std::floor(b.arc_lo);
        const double pos = lo_frac + std::ceil(start - lo_frac);
        cursor = pos + b.arc_len;
        const double shift = base + pos - b.arc_lo;
        Diffeo1D lifted = m1::lift_bump_shift(th.chart, b, shift);
        out.c1_perturbation = std::max(out.c1_perturbation, lifted_bump_c1(lifted));
        const auto* core = lifted.chart_core();
        dk.insert(dk.end(), core->dev->knots().begin(), core->dev->knots().end());
        supports.emplace_back(core->lo, core->hi);
        out.factors.push_back(std::move(lifted));
        out.heights.push_back(base + pos);
    }
    if (dev_first && th.has_dev) {
        dk.insert(dk.end(), th.dev.knots().begin(), th.dev.knots().end());
        supports.emplace_back(th.supp_lo, th.supp_hi);
    }
    if (!th.has_dev)
        dk.push_back({below ? th.K : -th.K, 0.0, 0.0});
    std::sort(dk.begin(), dk.end(),
              [](const Knot& a, const Knot& b) { return a.x < b.x; });

    ThetaMap th2;
    th2.chart = th.chart;
    th2.K = std::max({th.K, std::abs(dk.front().x) + 1.0, std::abs(dk.back().x) + 1.0});
    th2.supp_lo = dk.front().x;
    th2.supp_hi = dk.back().x;
    th2.dev = CubicHermite(std::move(dk));
    th2.has_dev = true;
    th2.dmax = m1::sup_bound(th2.dev);
    std::sort(supports.begin(), supports.end());
    th2.supports = std::move(supports);
    out.g = from_theta(th2);

    MatherInvariant inv2 = mather_invariant(th2, grid);
    out.defect_after = rotation_defect(inv2.map, grid).defect;
    return out;
}

}  // namespace matherkit
