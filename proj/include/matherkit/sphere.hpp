#pragma once

// North-south dynamics on the two-sphere: conformal orbit-torus
// coordinates, the winding class, the torus Mather map, its flattening,
// and the pair of commuting invariant fields.
//
// All computations run in the cylinder coordinate (u, phi) with
// u = ln|z| in the north plane chart and phi = arg z; the chart
// transition w = z/|z|^2 is simply (u, phi) -> (-u, phi), so a single
// coordinate covers the sphere minus the two poles.  The base map is a
// suspension whose radial part decouples into a monotone scalar ODE,
// precomputed once as splines; everything else is closed-form, so chart
// Jacobians are analytic (no finite differences along orbits).

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "matherkit/diffeo1d.hpp"
#include "matherkit/integrate.hpp"
#include "matherkit/spline.hpp"

namespace matherkit {

// ---------------------------------------------------------------------------
// small planar linear algebra

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double c, Vec2 a) { return {c * a.x, c * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Mat2 {
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0;  // [[a, b], [c, d]]

    static Mat2 identity() { return Mat2{}; }
    Vec2 apply(Vec2 v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    Mat2 mul(const Mat2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c,
                c * o.b + d * o.d};
    }
    double det() const { return a * d - b * c; }
    Mat2 inverse() const {
        const double dt = det();
        if (std::abs(dt) < 1e-300) throw std::runtime_error("Mat2: singular");
        return {d / dt, -b / dt, -c / dt, a / dt};
    }
};

// spectral norm of a 2x2 matrix (largest singular value)
inline double op_norm(const Mat2& m) {
    const double p = m.a * m.a + m.b * m.b + m.c * m.c + m.d * m.d;
    const double q = m.det();
    const double disc = std::max(p * p - 4.0 * q * q, 0.0);
    return std::sqrt(0.5 * (p + std::sqrt(disc)));
}

inline Mat2 operator-(const Mat2& m, const Mat2& n) {
    return {m.a - n.a, m.b - n.b, m.c - n.c, m.d - n.d};
}

// ---------------------------------------------------------------------------
// conformal linear maps of the plane

struct ConformalMap {
    double angle = 0.0;  // in [0, 2*pi)
    double ratio = 1.0;  // > 0, != 1

    ConformalMap() = default;
    ConformalMap(double ang, double rat) : angle(ang), ratio(rat) {
        if (!(ratio > 0.0))
            throw std::invalid_argument("ConformalMap: ratio must be positive");
        constexpr double two_pi = 2.0 * 3.14159265358979323846;
        angle -= two_pi * std::floor(angle / two_pi);
    }

    Vec2 apply(Vec2 z) const {
        const double c = std::cos(angle), s = std::sin(angle);
        return {ratio * (c * z.x - s * z.y), ratio * (s * z.x + c * z.y)};
    }
    Mat2 matrix() const {
        const double c = std::cos(angle), s = std::sin(angle);
        return {ratio * c, -ratio * s, ratio * s, ratio * c};
    }
    ConformalMap compose(const ConformalMap& o) const {  // this after o
        return ConformalMap(angle + o.angle, ratio * o.ratio);
    }
    ConformalMap inverse() const { return ConformalMap(-angle, 1.0 / ratio); }
};

// ---------------------------------------------------------------------------
// orbit-torus chart of a conformal linear map

namespace sph {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

inline double wrap1(double x) { return x - std::floor(x); }
inline double wrap_half(double x) { return x - std::round(x); }

}  // namespace sph

// Chart of the orbit torus of A: with z = rho e^{i phi},
//   s = ln rho / ln(ratio)  (mod 1),
//   r = (phi - (angle + 2 pi n) s) / (2 pi)  (mod 1);
// it sends the projection of Z to d/dr and of X_{A,n} to d/ds.
inline Vec2 orbit_chart(const ConformalMap& A, int n, Vec2 z) {
    if (z.x == 0.0 && z.y == 0.0)
        throw std::domain_error("orbit_chart: the origin has no orbit coordinates");
    if (A.ratio == 1.0)
        throw std::invalid_argument("orbit_chart: ratio must differ from 1");
    const double rho = norm(z);
    const double phi = std::atan2(z.y, z.x);
    const double s = std::log(rho) / std::log(A.ratio);
    const double r = (phi - (A.angle + sph::kTwoPi * n) * s) / sph::kTwoPi;
    return {sph::wrap1(r), sph::wrap1(s)};
}

// ---------------------------------------------------------------------------
// compactly supported torus diffeomorphisms (the bump factors)

// psi(p) = p + eta(|p - center|^2 / radius^2) * shift with eta(q) = (1-q)^5
// (C^4 at the boundary, so grid interpolants of derived data keep full
// order); a diffeomorphism as long as 2.08 |shift| / radius < 1.
struct TorusBump {
    Vec2 center;         // (r, s)
    double radius = 0.2;
    Vec2 shift;

    Vec2 displacement(Vec2 p, Mat2* jac = nullptr) const {
        // nearest periodic representative of p - center
        Vec2 d{sph::wrap_half(p.x - center.x), sph::wrap_half(p.y - center.y)};
        const double q = dot(d, d) / (radius * radius);
        if (q >= 1.0) {
            if (jac) *jac = Mat2{0, 0, 0, 0};
            return {0, 0};
        }
        const double e = 1.0 - q;
        const double e2 = e * e;
        const double eta = e2 * e2 * e;
        if (jac) {
            const double deta = -5.0 * e2 * e2 * (2.0 / (radius * radius));
            *jac = Mat2{shift.x * deta * d.x, shift.x * deta * d.y,
                        shift.y * deta * d.x, shift.y * deta * d.y};
        }
        return {eta * shift.x, eta * shift.y};
    }

    double c1_norm() const {
        // sup of |eta'(q)| 2|d|/R^2 |shift| = 10 max sqrt(q)(1-q)^4 |shift|/R,
        // with the max at q = 1/9
        const double m = 10.0 * (1.0 / 3.0) * std::pow(8.0 / 9.0, 4);
        return m * norm(shift) / radius;
    }
};

// A general torus map given by a displacement functional, with declared
// disk support; used for the fragmentation factors.
struct TorusFactor {
    // displacement and its Jacobian at a torus point
    std::function<Vec2(Vec2, Mat2*)> disp;
    Vec2 center;          // support disk center (r, s)
    double radius = 0.5;  // support radius; diameter = 2 * radius
    double c1 = 0.0;      // measured sup ||Dpsi - Id||

    Vec2 apply(Vec2 p, Mat2* jac = nullptr) const {
        Mat2 dj;
        const Vec2 d = disp(p, jac ? &dj : nullptr);
        if (jac) *jac = Mat2{1 + dj.a, dj.b, dj.c, 1 + dj.d};
        return p + d;
    }
    Vec2 invert(Vec2 p) const {
        Vec2 y = p;
        for (int it = 0; it < 64; ++it) {
            Mat2 j;
            const Vec2 r = apply(y, &j) - p;
            if (std::abs(r.x) + std::abs(r.y) < 1e-14) break;
            const Vec2 step = j.inverse().apply(r);
            y = y - step;
        }
        return y;
    }
};

inline TorusFactor factor_from_bump(const TorusBump& b) {
    TorusFactor f;
    f.center = b.center;
    f.radius = b.radius;
    f.c1 = b.c1_norm();
    f.disp = [b](Vec2 p, Mat2* j) { return b.displacement(p, j); };
    return f;
}

// ---------------------------------------------------------------------------
// the sphere diffeomorphism family
//
// Base: time-one map of the latitude-blended field
//   u' = Re c(u), phi' = Im c(u),
// with c = log A-data near the north pole and the (negated-transition)
// log B-data near the south pole, blended by a quintic ramp on [u1, u2].
// Composed with finitely many lifted south bumps, each a torus factor
// read through the orbit chart of B on one fundamental annulus (sheet).

struct SouthLift {
    TorusFactor psi;
    int n = 0;         // chart winding used for the lift
    double sheet = 0;  // the lift acts where s_global in [sheet, sheet + 1)
};

class SphereDiffeo {
public:
    SphereDiffeo(const ConformalMap& A, const ConformalMap& B, int n_blend,
                 double u1 = -0.5, double u2 = 0.5)
        : A_(A), B_(B), n_blend_(n_blend), u1_(u1), u2_(u2) {
        if (!(A.ratio > 1.0))
            throw std::invalid_argument("SphereDiffeo: north ratio must exceed 1");
        if (!(B.ratio > 0.0 && B.ratio < 1.0))
            throw std::invalid_argument("SphereDiffeo: south ratio must be in (0,1)");
        if (!(u2 > u1)) throw std::invalid_argument("SphereDiffeo: u2 must exceed u1");
        build_radial();
    }

    const ConformalMap& north() const { return A_; }
    const ConformalMap& south() const { return B_; }
    int blend_class() const { return n_blend_; }

    // f is exactly A for u <= north_linear_u, exactly B (in the south
    // chart) for u >= south_linear_u, bumps aside
    double north_linear_u() const { return u1_ - std::log(A_.ratio); }
    double south_linear_u() const { return u2_; }

    // below this height the map is exactly B and no bump ever acts
    double south_clear_u() const {
        double u = u2_;
        for (const auto& l : lifts_)
            u = std::max(u, -std::log(B_.ratio) * (l.sheet + 1.0) + 1e-9);
        return u;
    }

    // Lifts are kept sorted by sheet with pairwise disjoint windows, so at
    // most one lift acts on any point and the lookup is a binary search.
    void push_lift(SouthLift l) {
        auto it = std::lower_bound(
            lifts_.begin(), lifts_.end(), l.sheet,
            [](const SouthLift& a, double s) { return a.sheet < s; });
        if ((it != lifts_.end() && it->sheet < l.sheet + 1.0) ||
            (it != lifts_.begin() && std::prev(it)->sheet + 1.0 > l.sheet))
            throw std::invalid_argument(
                "SphereDiffeo: lift sheets must be pairwise disjoint");
        lifts_.insert(it, std::move(l));
    }
    const std::vector<SouthLift>& lifts() const { return lifts_; }

    // ---- cylinder evaluation ------------------------------------------------

    // forward map; Jacobian (in (u, phi) coordinates) optional
    void eval(double u, double phi, double& uo, double& po, Mat2* jac = nullptr) const {
        Mat2 J = Mat2::identity();
        if (const SouthLift* l = lift_at(south_s(u)))
            apply_lift(*l, u, phi, jac ? &J : nullptr);
        base_eval(u, phi, uo, po, jac);
        if (jac) *jac = jac->mul(J);
    }

    void eval_inverse(double u, double phi, double& uo, double& po,
                      Mat2* jac = nullptr) const {
        base_eval_inverse(u, phi, uo, po, jac);
        if (const SouthLift* l = lift_at(south_s(uo))) {
            Mat2 Ji;
            apply_lift_inverse(*l, uo, po, jac ? &Ji : nullptr);
            if (jac) *jac = Ji.mul(*jac);
        }
    }

    // ---- plane-chart evaluation (spec shape) -------------------------------

    Vec2 north_eval(Vec2 z, Mat2* jac = nullptr) const {
        return plane_eval(z, /*north=*/true, jac);
    }
    Vec2 south_eval(Vec2 w, Mat2* jac = nullptr) const {
        return plane_eval(w, /*north=*/false, jac);
    }

    // chart transition w = z / |z|^2
    static Vec2 transition(Vec2 z) {
        const double q = dot(z, z);
        if (q == 0.0) throw std::domain_error("SphereDiffeo: pole has no image chart");
        return {z.x / q, z.y / q};
    }

    // ---- helpers exposed for the torus computations ------------------------

    double log_alpha() const { return std::log(A_.ratio); }
    double log_beta() const { return std::log(B_.ratio); }

    // global (unwrapped) south chart height: s = -u / ln(beta)
    double south_s(double u) const { return -u / log_beta(); }
    double u_of_south_s(double s) const { return -log_beta() * s; }

    // orbit-torus coordinates through B's chart, with lifted s
    Vec2 south_chart(double u, double phi, int n) const {
        const double s = south_s(u);
        const double r = (phi - (B_.angle + sph::kTwoPi * n) * s) / sph::kTwoPi;
        return {r, s};
    }

private:
    void build_radial() {
        const double la = std::log(A_.ratio);
        const double lb = std::log(B_.ratio);
        gn_ = la;
        gs_ = -lb;
        wn_ = A_.angle;
        ws_ = B_.angle + sph::kTwoPi * n_blend_;
        const int n = 2048;
        std::vector<Knot> tk(n + 1), qk(n + 1);
        double t = 0.0, q = 0.0;
        double prev_u = u1_;
        double prev_it = 1.0 / speed(u1_), prev_iq = swirl(u1_) / speed(u1_);
        tk[0] = {u1_, 0.0, prev_it};
        qk[0] = {u1_, 0.0, prev_iq};
        for (int i = 1; i <= n; ++i) {
            const double u = u1_ + (u2_ - u1_) * i / n;
            const double it = 1.0 / speed(u);
            const double iq = swirl(u) / speed(u);
            const double um = 0.5 * (prev_u + u);
            const double h = u - prev_u;
            t += h / 6.0 * (prev_it + 4.0 / speed(um) + it);
            q += h / 6.0 * (prev_iq + 4.0 * swirl(um) / speed(um) + iq);
            tk[i] = {u, t, it};
            qk[i] = {u, q, iq};
            prev_u = u;
            prev_it = it;
            prev_iq = iq;
        }
        tau_ = CubicHermite(std::move(tk));
        qint_ = CubicHermite(std::move(qk));
        tau_span_ = t;
    }

    // blended radial speed and angular rate
    double ramp(double u, double* d = nullptr) const {
        if (u <= u1_) {
            if (d) *d = 0.0;
            return 0.0;
        }
        if (u >= u2_) {
            if (d) *d = 0.0;
            return 1.0;
        }
        const double t = (u - u1_) / (u2_ - u1_);
        if (d) *d = 30.0 * t * t * (1 - t) * (1 - t) / (u2_ - u1_);
        return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    }
    double speed(double u) const {
        const double l = ramp(u);
        return (1 - l) * gn_ + l * gs_;
    }
    double swirl(double u) const {
        const double l = ramp(u);
        return (1 - l) * wn_ + l * ws_;
    }

    // time to flow the radial part from u1 to u (closed form off the band)
    double time_of(double u) const {
        if (u <= u1_) return (u - u1_) / gn_;
        if (u >= u2_) return tau_span_ + (u - u2_) / gs_;
        return tau_.value(u);
    }
    // inverse of time_of: safeguarded Newton on the monotone primitive
    double u_of_time(double t) const {
        if (t <= 0.0) return u1_ + t * gn_;
        if (t >= tau_span_) return u2_ + (t - tau_span_) * gs_;
        double lo = u1_, hi = u2_;
        double u = u1_ + (u2_ - u1_) * (t / tau_span_);
        for (int it = 0; it < 60; ++it) {
            double v, d;
            tau_.value_and_deriv(u, v, d);
            if (v < t)
                lo = u;
            else
                hi = u;
            const double step = (v - t) / d;
            double un = u - step;
            if (!(un > lo && un < hi)) un = 0.5 * (lo + hi);
            if (std::abs(un - u) < 1e-15 * std::max(1.0, std::abs(u))) return un;
            u = un;
        }
        return u;
    }
    // primitive of swirl/speed
    double angle_of(double u) const {
        if (u <= u1_) return (u - u1_) * wn_ / gn_;
        if (u >= u2_) return qint_.value(u2_) + (u - u2_) * ws_ / gs_;
        return qint_.value(u);
    }

    void base_eval(double u, double phi, double& uo, double& po, Mat2* jac) const {
        uo = u_of_time(time_of(u) + 1.0);
        po = phi + (angle_of(uo) - angle_of(u));
        if (jac) {
            const double du = speed(uo) / speed(u);
            const double dw = (swirl(uo) / speed(uo)) * du - swirl(u) / speed(u);
            *jac = Mat2{du, 0.0, dw, 1.0};
        }
    }
    void base_eval_inverse(double u, double phi, double& uo, double& po,
                           Mat2* jac) const {
        uo = u_of_time(time_of(u) - 1.0);
        po = phi + (angle_of(uo) - angle_of(u));
        if (jac) {
            const double du = speed(uo) / speed(u);
            const double dw = (swirl(uo) / speed(uo)) * du - swirl(u) / speed(u);
            *jac = Mat2{du, 0.0, dw, 1.0};
        }
    }

    // chart differential M = d(r, s)/d(u, phi) for B's orbit chart
    Mat2 south_chart_diff(int n) const {
        const double lb = log_beta();
        const double c = B_.angle + sph::kTwoPi * n;
        return Mat2{c / (sph::kTwoPi * lb), 1.0 / sph::kTwoPi, -1.0 / lb, 0.0};
    }

    void apply_lift(const SouthLift& l, double& u, double& phi, Mat2* jac) const {
        const double s = south_s(u);
        if (!(s >= l.sheet && s < l.sheet + 1.0)) return;
        const double r = (phi - (B_.angle + sph::kTwoPi * l.n) * s) / sph::kTwoPi;
        Mat2 dpsi;
        const Vec2 d = l.psi.disp({r, s}, jac ? &dpsi : nullptr);
        const double lb = log_beta();
        u += -lb * d.y;
        phi += sph::kTwoPi * d.x + (B_.angle + sph::kTwoPi * l.n) * d.y;
        if (jac) {
            const Mat2 M = south_chart_diff(l.n);
            const Mat2 inner = M.inverse().mul(dpsi).mul(M);
            *jac = Mat2{1 + inner.a, inner.b, inner.c, 1 + inner.d}.mul(*jac);
        }
    }

    const SouthLift* lift_at(double s) const {
        auto it = std::upper_bound(
            lifts_.begin(), lifts_.end(), s,
            [](double v, const SouthLift& a) { return v < a.sheet; });
        if (it == lifts_.begin()) return nullptr;
        const SouthLift& l = *std::prev(it);
        return (s < l.sheet + 1.0) ? &l : nullptr;
    }

    // the lift preserves its sheet window (support disk plus image slop is
    // interior to the window by construction), so the plain window check
    // also decides the inverse
    void apply_lift_inverse(const SouthLift& l, double& u, double& phi,
                            Mat2* jac) const {
        if (jac) *jac = Mat2::identity();
        const double s = south_s(u);
        if (!(s >= l.sheet && s < l.sheet + 1.0)) return;
        const double r = (phi - (B_.angle + sph::kTwoPi * l.n) * s) / sph::kTwoPi;
        const Vec2 pre = l.psi.invert({r, s});
        const Vec2 d = pre - Vec2{r, s};
        const double lb = log_beta();
        u += -lb * d.y;
        phi += sph::kTwoPi * d.x + (B_.angle + sph::kTwoPi * l.n) * d.y;
        if (jac) {
            Mat2 dpsi;
            l.psi.disp(pre, &dpsi);
            const Mat2 M = south_chart_diff(l.n);
            const Mat2 inner = M.inverse().mul(dpsi).mul(M);
            *jac = Mat2{1 + inner.a, inner.b, inner.c, 1 + inner.d}.inverse();
        }
    }

    Vec2 plane_eval(Vec2 p, bool north, Mat2* jac) const {
        const double rho = norm(p);
        if (rho == 0.0) {
            // fixed pole: derivative is the conformal datum
            if (jac) *jac = north ? A_.matrix() : B_.matrix();
            return {0, 0};
        }
        const double u = north ? std::log(rho) : -std::log(rho);
        const double phi = std::atan2(p.y, p.x);
        double uo, po;
        Mat2 J;
        eval(u, phi, uo, po, jac ? &J : nullptr);
        const double ro = north ? std::exp(uo) : std::exp(-uo);
        const Vec2 out{ro * std::cos(po), ro * std::sin(po)};
        if (jac) {
            // d z = z (du + i dphi): conjugate the cylinder Jacobian
            const double sgn = north ? 1.0 : -1.0;
            const Mat2 Cin{sgn * p.x, -p.y, sgn * p.y, p.x};
            const Mat2 Cout{sgn * out.x, -out.y, sgn * out.y, out.x};
            *jac = Cout.mul(J).mul(Cin.inverse());
        }
        return out;
    }

    ConformalMap A_, B_;
    int n_blend_ = 0;
    double u1_, u2_;
    double gn_ = 0, gs_ = 0, wn_ = 0, ws_ = 0;
    CubicHermite tau_, qint_;
    double tau_span_ = 0.0;
    std::vector<SouthLift> lifts_;
};

// ---------------------------------------------------------------------------
// the torus Mather map

struct TorusGridMap {
    int resolution = 0;
    int n = 0;                     // chart winding used on the south side
    std::vector<Vec2> image;      // lifted images, row-major (r fast)
    int h1[2][2] = {{1, 0}, {0, 1}};
    Vec2 translation;             // best translation fit
    double translation_defect = 0.0;

    Vec2 node(int i, int j) const {
        return {static_cast<double>(i) / resolution,
                static_cast<double>(j) / resolution};
    }
    const Vec2& at(int i, int j) const {
        return image[static_cast<std::size_t>(j) * resolution + i];
    }
};

namespace sph {

// push a chart point into the north linear collar and iterate forward
// until the pure-B region, reading through B's chart with winding n
inline Vec2 push_through(const SphereDiffeo& f, double r, double s, int n,
                         int* steps_out = nullptr) {
    const double la = f.log_alpha();
    const double u_in = f.north_linear_u() - std::abs(la);
    double sl = s;
    while (la * sl > u_in) sl -= 1.0;
    double u = la * sl;
    double phi = sph::kTwoPi * r + f.north().angle * sl;
    const double u_read = f.south_clear_u() - f.log_beta();
    int steps = 0;
    while (u < u_read) {
        double uo, po;
        f.eval(u, phi, uo, po);
        u = uo;
        phi = po;
        if (++steps > 10000)
            throw std::runtime_error(
                "mather_torus: orbit failed to reach the south collar");
    }
    if (steps_out) *steps_out = steps;
    return f.south_chart(u, phi, n);
}

}  // namespace sph

// The r-winding of the transition loop s -> (r0, s); the integer n(f).
inline int winding_class(const SphereDiffeo& f, const GridSpec& grid = GridSpec(256),
                         double r0 = 0.25) {
    int N = std::max(grid.resolution, 64);
    for (; N <= (1 << 12); N *= 2) {
        std::vector<double> lift(static_cast<std::size_t>(N) + 1);
        bool ok = true;
        double prev = 0.0;
        for (int j = 0; j <= N && ok; ++j) {
            const double s = static_cast<double>(j) / N;
            const Vec2 rs = sph::push_through(f, r0, s, 0);
            double r = rs.x;
            if (j == 0) {
                lift[0] = r - std::floor(r);
            } else {
                const double jump = sph::wrap_half(r - prev);
                if (std::abs(jump) >= 0.25) {
                    ok = false;
                    break;
                }
                lift[static_cast<std::size_t>(j)] = lift[static_cast<std::size_t>(j) - 1] + jump;
            }
            prev = r;
        }
        if (ok) return static_cast<int>(std::lround(lift[static_cast<std::size_t>(N)] - lift[0]));
    }
    throw std::runtime_error(
        "winding_class: transition loop not resolvable below resolution 4096");
}

// Full torus Mather map on an N x N grid, read with winding n = n(f).
inline TorusGridMap mather_torus(const SphereDiffeo& f,
                                 const GridSpec& grid = GridSpec(256)) {
    const int n = winding_class(f, GridSpec(std::min(grid.resolution, 512)));
    const int N = grid.resolution;
    TorusGridMap out;
    out.resolution = N;
    out.n = n;
    out.image.resize(static_cast<std::size_t>(N) * N);

    for (int j = 0; j < N; ++j) {
        for (int i = 0; i < N; ++i) {
            const double r = static_cast<double>(i) / N;
            const double s = static_cast<double>(j) / N;
            Vec2 im = sph::push_through(f, r, s, n);
            im.y -= std::floor(im.y);  // reading height is depth-arbitrary
            out.image[static_cast<std::size_t>(j) * N + i] = im;
        }
    }

    // continuous lift over the grid, anchored near the node displacement
    for (int j = 0; j < N; ++j) {
        for (int i = 0; i < N; ++i) {
            Vec2& im = out.image[static_cast<std::size_t>(j) * N + i];
            Vec2 ref;
            if (i == 0 && j == 0) {
                // anchor: reduce mod 1, no continuity constraint
                im.x = sph::wrap1(im.x);
                im.y = sph::wrap1(im.y);
                continue;
            } else if (i == 0) {
                ref = out.at(0, j - 1) + Vec2{0.0, 1.0 / N};
            } else {
                ref = out.at(i - 1, j) + Vec2{1.0 / N, 0.0};
            }
            im.x = ref.x + sph::wrap_half(im.x - ref.x);
            im.y = ref.y + sph::wrap_half(im.y - ref.y);
            if (std::abs(im.x - ref.x) > 0.25 || std::abs(im.y - ref.y) > 0.25)
                throw std::runtime_error(
                    "mather_torus: lift continuity violated; refine the grid");
        }
    }

    // H1 action from the boundary lifts
    const Vec2 dr = out.at(N - 1, 0) + Vec2{1.0 / N, 0.0} - out.at(0, 0);
    const Vec2 ds = out.at(0, N - 1) + Vec2{0.0, 1.0 / N} - out.at(0, 0);
    out.h1[0][0] = static_cast<int>(std::lround(dr.x));
    out.h1[1][0] = static_cast<int>(std::lround(dr.y));
    out.h1[0][1] = static_cast<int>(std::lround(ds.x));
    out.h1[1][1] = static_cast<int>(std::lround(ds.y));

    // translation part and defect
    double mx = 0, my = 0;
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i) {
            const Vec2 d = out.at(i, j) - out.node(i, j);
            mx += d.x;
            my += d.y;
        }
    mx /= N * static_cast<double>(N);
    my /= N * static_cast<double>(N);
    out.translation = {mx, my};
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i) {
            const Vec2 d = out.at(i, j) - out.node(i, j);
            out.translation_defect = std::max(
                out.translation_defect,
                std::max(std::abs(d.x - mx), std::abs(d.y - my)));
        }
    return out;
}

// ---------------------------------------------------------------------------
// periodic grid interpolation of a torus displacement field

class TorusField {
public:
    TorusField() = default;
    TorusField(int N, std::vector<Vec2> disp) : N_(N), d_(std::move(disp)) {
        if (static_cast<int>(d_.size()) != N_ * N_)
            throw std::invalid_argument("TorusField: grid size mismatch");
    }

    // bicubic (Catmull-Rom) interpolation, periodic in both coordinates
    Vec2 value(Vec2 p, Mat2* jac = nullptr) const {
        const double gx = sph::wrap1(p.x) * N_;
        const double gy = sph::wrap1(p.y) * N_;
        const int i0 = static_cast<int>(std::floor(gx));
        const int j0 = static_cast<int>(std::floor(gy));
        const double tx = gx - i0, ty = gy - j0;
        double wx[4], wy[4], dwx[4], dwy[4];
        weights(tx, wx, dwx);
        weights(ty, wy, dwy);
        Vec2 v{0, 0}, vx{0, 0}, vy{0, 0};
        for (int b = 0; b < 4; ++b) {
            const int j = mod(j0 + b - 1);
            for (int a = 0; a < 4; ++a) {
                const int i = mod(i0 + a - 1);
                const Vec2& g = d_[static_cast<std::size_t>(j) * N_ + i];
                const double w = wx[a] * wy[b];
                v = v + w * g;
                if (jac) {
                    vx = vx + (dwx[a] * wy[b]) * g;
                    vy = vy + (wx[a] * dwy[b]) * g;
                }
            }
        }
        if (jac) *jac = Mat2{vx.x * N_, vy.x * N_, vx.y * N_, vy.y * N_};
        return v;
    }

    double sup_norm() const {
        double m = 0;
        for (const auto& g : d_) m = std::max(m, norm(g));
        return m;
    }
    double sup_jacobian() const {
        double m = 0;
        for (int j = 0; j < N_; ++j)
            for (int i = 0; i < N_; ++i) {
                Mat2 J;
                value({(i + 0.5) / N_, (j + 0.5) / N_}, &J);
                m = std::max(m, op_norm(J));
            }
        return m;
    }

private:
    static void weights(double t, double w[4], double dw[4]) {
        // Catmull-Rom basis
        const double t2 = t * t, t3 = t2 * t;
        w[0] = 0.5 * (-t3 + 2 * t2 - t);
        w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
        w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
        w[3] = 0.5 * (t3 - t2);
        dw[0] = 0.5 * (-3 * t2 + 4 * t - 1);
        dw[1] = 0.5 * (9 * t2 - 10 * t);
        dw[2] = 0.5 * (-9 * t2 + 8 * t + 1);
        dw[3] = 0.5 * (3 * t2 - 2 * t);
    }
    int mod(int i) const {
        i %= N_;
        return i < 0 ? i + N_ : i;
    }

    int N_ = 0;
    std::vector<Vec2> d_;
};

// ---------------------------------------------------------------------------
// fragmentation of a near-identity torus map into disk-supported factors

namespace sph {

// Shared state of one fragmentation: the displacement interpolant, the
// disk cover with its partition of unity, and the isotopy step count.
// Factors hold this by shared_ptr so they stay valid on their own.
struct FragState {
    TorusField dev;
    std::vector<Vec2> centers;
    double hump_r = 0.3;
    int steps = 1;

    int nc() const { return static_cast<int>(centers.size()); }

    // radial hump: quintic smoothstep of 1 - |d|^2/R^2 (C^2, support |d| < R)
    double hump(Vec2 p, Vec2 c, Vec2* grad) const {
        const Vec2 d{wrap_half(p.x - c.x), wrap_half(p.y - c.y)};
        const double q = dot(d, d) / (hump_r * hump_r);
        if (q >= 1.0) {
            if (grad) *grad = {0, 0};
            return 0.0;
        }
        const double t = 1.0 - q;
        const double S = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
        if (grad) {
            const double dS = 30.0 * t * t * (1.0 - t) * (1.0 - t);
            const double fct = -dS * 2.0 / (hump_r * hump_r);
            *grad = {fct * d.x, fct * d.y};
        }
        return S;
    }

    // isotopy parameter after stage (s, k): (s + sum_{c <= k} w_c) / steps,
    // with w_c the normalized partition weights
    double tau(int s, int k, Vec2 p, Vec2* grad) const {
        double tot = 0.0, part = 0.0;
        Vec2 gtot{0, 0}, gpart{0, 0};
        for (int c = 0; c < nc(); ++c) {
            Vec2 g;
            const double h = hump(p, centers[static_cast<std::size_t>(c)], &g);
            tot += h;
            gtot = gtot + g;
            if (c <= k) {
                part += h;
                gpart = gpart + g;
            }
        }
        if (grad)
            *grad = (1.0 / (steps * tot * tot)) *
                    Vec2{gpart.x * tot - part * gtot.x, gpart.y * tot - part * gtot.y};
        return (s + part / tot) / steps;
    }

    // the map after stage (s, k): x + tau(x) d(x); stage (s, -1) means the
    // end of the previous step, stage (0, -1) the identity
    Vec2 stage(int s, int k, Vec2 x, Mat2* jac) const {
        if (k < 0) {
            if (s == 0) {
                if (jac) *jac = Mat2::identity();
                return x;
            }
            s -= 1;
            k = nc() - 1;
        }
        Vec2 g;
        const double t = tau(s, k, x, jac ? &g : nullptr);
        Mat2 Jd;
        const Vec2 d = dev.value(x, jac ? &Jd : nullptr);
        if (jac)
            *jac = Mat2{1 + t * Jd.a + d.x * g.x, t * Jd.b + d.x * g.y,
                        t * Jd.c + d.y * g.x, 1 + t * Jd.d + d.y * g.y};
        return x + t * d;
    }

    Vec2 stage_invert(int s, int k, Vec2 p) const {
        Vec2 y = p;
        for (int it = 0; it < 100; ++it) {
            Mat2 J;
            const Vec2 r = stage(s, k, y, &J) - p;
            if (std::abs(r.x) + std::abs(r.y) < 1e-14) break;
            y = y - J.inverse().apply(r);
        }
        return y;
    }
};

inline TorusFactor make_fragment_factor(std::shared_ptr<const FragState> st, int s,
                                        int k, double sup_d) {
    TorusFactor f;
    f.center = st->centers[static_cast<std::size_t>(k)];
    f.radius = st->hump_r + sup_d + 0.005;
    const Vec2 ctr = f.center;
    const double rad = f.radius;
    f.disp = [st, s, k, ctr, rad](Vec2 p, Mat2* jac) -> Vec2 {
        // the factor is the identity off its disk (plus image slop)
        const Vec2 off{wrap_half(p.x - ctr.x), wrap_half(p.y - ctr.y)};
        if (dot(off, off) >= rad * rad) {
            if (jac) *jac = Mat2{0, 0, 0, 0};
            return {0, 0};
        }
        const Vec2 y = st->stage_invert(s, k - 1, p);
        Mat2 Jcur;
        const Vec2 q = st->stage(s, k, y, jac ? &Jcur : nullptr);
        if (jac) {
            Mat2 Jprev;
            st->stage(s, k - 1, y, &Jprev);
            const Mat2 D = Jcur.mul(Jprev.inverse());
            *jac = Mat2{D.a - 1, D.b, D.c, D.d - 1};
        }
        return q - p;
    };
    return f;
}

// C1-size functional used to drive the fragmentation; receives the
// factor displacement and displacement Jacobian at a torus point
using FactorNorm = std::function<double(Vec2 disp, const Mat2& dpsi)>;

inline double torus_factor_norm(Vec2, const Mat2& dpsi) { return op_norm(dpsi); }

}  // namespace sph

// Split a torus map isotopic and C^0-close to the identity (given by its
// displacement x -> g(x) - x) into factors, each supported in a disk of
// diameter below max_diam and of C^1 size below max_c1 in the given
// norm, whose ordered composition recovers g.  The straight-line isotopy
// g_t(x) = x + t d(x) is traversed in steps, each localized by a
// partition of unity over a periodic disk cover; factors telescope
// exactly by construction and carry analytic Jacobians.
inline std::vector<TorusFactor> fragment_torus(
    TorusField dev, double max_c1, double max_diam, int max_factors = 4096,
    const sph::FactorNorm& c1_norm = sph::torus_factor_norm) {
    const double sup_d = dev.sup_norm();
    if (sup_d < 1e-13) return {};
    if (!(max_diam > 0.0 && max_diam < 1.0))
        throw std::invalid_argument("fragment_torus: max_diam must be in (0,1)");
    if (sup_d >= 0.25)
        throw std::runtime_error(
            "fragment_torus: displacement too large; sup must stay below 1/4");
    const double hump_r = 0.95 * (0.5 * max_diam - sup_d - 0.005);
    if (hump_r <= 0.03)
        throw std::runtime_error(
            "fragment_torus: displacement too large for the support diameter");
    const int m = std::max(2, static_cast<int>(std::ceil(0.79 / hump_r)));
    if (std::sqrt(2.0) / (2.0 * m) >= hump_r)
        throw std::runtime_error("fragment_torus: disk cover construction failed");

    const double dj = dev.sup_jacobian();
    auto base = std::make_shared<sph::FragState>();
    base->dev = std::move(dev);
    base->hump_r = hump_r;
    for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i)
            base->centers.push_back({(i + 0.5) / m, (j + 0.5) / m});
    const int nc = base->nc();

    // schedule-gradient estimate for the initial step count; the doubling
    // loop below corrects it against the measured norms
    double gmax = 0.0;
    for (int k = 0; k < nc; ++k)
        for (int j = 0; j < 16; ++j)
            for (int i = 0; i < 16; ++i) {
                Vec2 g;
                base->tau(0, k, {(i + 0.5) / 16, (j + 0.5) / 16}, &g);
                gmax = std::max(gmax, norm(g));
            }
    int M = std::max(1, static_cast<int>(
                            std::ceil((dj + sup_d * gmax) / (0.45 * max_c1))));

    for (;; M *= 2) {
        if (M * nc > max_factors)
            throw std::runtime_error(
                "fragment_torus: factor budget exceeded before meeting the C1 bound");
        auto st = std::make_shared<sph::FragState>(*base);
        st->steps = M;
        std::vector<TorusFactor> out;
        double worst = 0.0;
        for (int s = 0; s < M && worst <= max_c1; ++s) {
            for (int k = 0; k < nc; ++k) {
                TorusFactor f = sph::make_fragment_factor(st, s, k, sup_d);
                // measure the C1 size on a probe grid over the disk
                double c1 = 0.0;
                const int np = 14;
                for (int b = 0; b <= np; ++b)
                    for (int a = 0; a <= np; ++a) {
                        const Vec2 p{f.center.x + f.radius * (2.0 * a / np - 1.0),
                                     f.center.y + f.radius * (2.0 * b / np - 1.0)};
                        Mat2 J;
                        const Vec2 d = f.disp(p, &J);
                        c1 = std::max(c1, c1_norm(d, J));
                    }
                f.c1 = c1;
                worst = std::max(worst, c1);
                if (worst > max_c1) break;
                if (c1 > 1e-14) out.push_back(std::move(f));
            }
        }
        if (worst > max_c1) continue;

        // compose-back certification on a probe grid
        double resid = 0.0;
        for (int j = 0; j < 24; ++j)
            for (int i = 0; i < 24; ++i) {
                const Vec2 p{(i + 0.5) / 24, (j + 0.5) / 24};
                Vec2 y = p;
                for (const TorusFactor& f : out) y = f.apply(y);
                const Vec2 want = p + st->dev.value(p);
                resid = std::max(resid, std::abs(y.x - want.x) +
                                            std::abs(y.y - want.y));
            }
        if (resid > 1e-5)
            throw std::runtime_error(
                "fragment_torus: compose-back residual above 1e-5");
        return out;
    }
}

inline std::vector<TorusFactor> fragment_torus_map(const TorusGridMap& delta,
                                                   double max_c1, double max_diam) {
    if (delta.h1[0][0] != 1 || delta.h1[0][1] != 0 || delta.h1[1][0] != 0 ||
        delta.h1[1][1] != 1)
        throw std::invalid_argument(
            "fragment_torus: the map must act trivially on homology");
    const int N = delta.resolution;
    std::vector<Vec2> disp(static_cast<std::size_t>(N) * N);
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i)
            disp[static_cast<std::size_t>(j) * N + i] =
                delta.at(i, j) - delta.node(i, j);
    return fragment_torus(TorusField(N, std::move(disp)), max_c1, max_diam);
}

// ---------------------------------------------------------------------------
// flattening: compose with lifted factors until the torus map is a translation

namespace sph {

// C1 size of a lifted factor measured on the sphere: the cylinder-to-
// plane conversion is conformal, so the plane-chart operator norm equals
// |e^{du_S + i dphi} J_S - Id| with the displacement and Jacobian pushed
// through the (affine) orbit chart.  Independent of the lift depth.
inline double lift_sphere_norm(double log_beta, double chart_c, Vec2 d,
                               const Mat2& dpsi) {
    const double lb = -log_beta;  // positive
    // chart differential M = d(r,s)/d(u,phi) and its inverse
    const Mat2 M{-chart_c / (kTwoPi * lb), 1.0 / kTwoPi, 1.0 / lb, 0.0};
    const Mat2 Jc = M.inverse().mul(dpsi).mul(M);
    // south-height coordinate flips u
    const Mat2 S{-1, 0, 0, 1};
    const Mat2 Js = S.mul(Mat2{1 + Jc.a, Jc.b, Jc.c, 1 + Jc.d}).mul(S);
    const double du_s = -lb * d.y;              // u_S displacement
    const double dphi = kTwoPi * d.x + chart_c * d.y;
    const double e = std::exp(du_s);
    const Mat2 E{e * std::cos(dphi), -e * std::sin(dphi), e * std::sin(dphi),
                 e * std::cos(dphi)};
    const Mat2 D = E.mul(Js);
    return op_norm(Mat2{D.a - 1, D.b, D.c, D.d - 1});
}

}  // namespace sph

struct SphereFlattenReport {
    SphereDiffeo flattened;
    TorusGridMap before;
    TorusGridMap after;
    std::size_t factor_count = 0;
    double c1_change = 0.0;  // sup ||D(g o f^{-1}) - Id|| over the lifts

    explicit SphereFlattenReport(SphereDiffeo g) : flattened(std::move(g)) {}
};

inline SphereFlattenReport flatten_sphere(const SphereDiffeo& f, double eps,
                                          const GridSpec& grid = GridSpec(256),
                                          double max_diam = 0.9) {
    SphereFlattenReport rep(f);
    rep.before = mather_torus(f, grid);
    if (rep.before.translation_defect >= 0.25)
        throw std::runtime_error(
            "flatten_sphere: torus map too far from a translation to correct");
    if (rep.before.translation_defect < 1e-9) {
        rep.after = rep.before;
        return rep;  // already a translation; nothing to do
    }

    // the correction is built from a finer measurement than the gate grid,
    // since its interpolation error bounds the achievable defect
    const int NC = std::max(1024, 2 * grid.resolution);
    TorusGridMap fine = mather_torus(f, GridSpec(NC));
    std::vector<Vec2> disp(static_cast<std::size_t>(NC) * NC);
    for (int j = 0; j < NC; ++j)
        for (int i = 0; i < NC; ++i)
            disp[static_cast<std::size_t>(j) * NC + i] =
                fine.at(i, j) - fine.node(i, j);
    TorusField dmap(NC, disp);

    // correction q = tau o Delta^{-1}, so that q o Delta is the translation
    std::vector<Vec2> qdisp(static_cast<std::size_t>(NC) * NC);
    for (int j = 0; j < NC; ++j)
        for (int i = 0; i < NC; ++i) {
            const Vec2 p = fine.node(i, j);
            Vec2 y = p - fine.translation;
            for (int it = 0; it < 64; ++it) {
                Mat2 Jd;
                const Vec2 r = y + dmap.value(y, &Jd) - p;
                if (std::abs(r.x) + std::abs(r.y) < 1e-14) break;
                const Mat2 J{1 + Jd.a, Jd.b, Jd.c, 1 + Jd.d};
                y = y - J.inverse().apply(r);
            }
            qdisp[static_cast<std::size_t>(j) * NC + i] =
                y + fine.translation - p;
        }

    const double lb = f.log_beta();
    const double cc = f.south().angle + sph::kTwoPi * fine.n;
    std::vector<TorusFactor> factors = fragment_torus(
        TorusField(NC, std::move(qdisp)), eps, max_diam, 4096,
        [lb, cc](Vec2 d, const Mat2& dpsi) {
            return sph::lift_sphere_norm(lb, cc, d, dpsi);
        });

    // lift the factors at pairwise disjoint sheets below everything the
    // map already does, spaced two apart
    const double s0 = std::ceil(f.south_s(f.south_clear_u())) + 1.0;
    int k = 0;
    for (TorusFactor& psi : factors) {
        SouthLift l;
        l.n = fine.n;
        const double cut = sph::wrap1(psi.center.y + psi.radius + 0.02);
        l.sheet = s0 + 2.0 * k + cut;
        rep.c1_change = std::max(rep.c1_change, psi.c1);
        l.psi = std::move(psi);
        rep.flattened.push_lift(std::move(l));
        ++k;
    }
    rep.factor_count = static_cast<std::size_t>(k);
    rep.after = mather_torus(rep.flattened, grid);
    return rep;
}

// ---------------------------------------------------------------------------
// the commuting pair of invariant fields

// A vector field on the sphere given in cylinder components (V_u, V_phi),
// built by spreading a conformally invariant germ at the source pole
// along the orbits of the map.  Where the map is linear the field is the
// germ itself; elsewhere it is the pushforward through however many
// iterates separate the point from the source collar.
struct SphereField {
    std::shared_ptr<const SphereDiffeo> map;
    bool rotation = true;  // seed: the rotation field, else the radial one

    Vec2 cyl(double u, double phi) const {
        const SphereDiffeo& f = *map;
        const double u_in = f.north_linear_u();
        double cu = u, cp = phi;
        int m = 0;
        while (cu > u_in) {
            double uo, po;
            f.eval_inverse(cu, cp, uo, po);
            cu = uo;
            cp = po;
            if (++m > 100000)
                throw std::runtime_error(
                    "SphereField: orbit failed to reach the source collar");
        }
        Vec2 v = rotation ? Vec2{0.0, sph::kTwoPi}
                          : Vec2{f.log_alpha(), f.north().angle};
        for (int i = 0; i < m; ++i) {
            double uo, po;
            Mat2 J;
            f.eval(cu, cp, uo, po, &J);
            v = J.apply(v);
            cu = uo;
            cp = po;
        }
        return v;
    }

    // plane-chart value; north for points with u <= 0, south otherwise
    Vec2 plane(double u, double phi) const {
        const Vec2 v = cyl(u, phi);
        if (u <= 0.0) {
            const double x = std::exp(u) * std::cos(phi);
            const double y = std::exp(u) * std::sin(phi);
            return {x * v.x - y * v.y, y * v.x + x * v.y};
        }
        const double x = std::exp(-u) * std::cos(phi);
        const double y = std::exp(-u) * std::sin(phi);
        return {-x * v.x - y * v.y, -y * v.x + x * v.y};
    }
};

struct InvariantFieldsReport {
    SphereField Z;  // spreads the rotation germ
    SphereField X;  // spreads the radial (suspension) germ
    int n = 0;
    double gate_defect = 0.0;   // translation defect of the torus map
    double invariance_Z = 0.0;  // sup |Df V - V o f|, bounded-chart scale
    double invariance_X = 0.0;
    double bracket = 0.0;       // finite-difference Lie bracket
    double collar_Z = 0.0;      // south-collar deviation from the
    double collar_X = 0.0;      //   conformal germs, cylinder scale
    double flow_commute = 0.0;  // flow-built centralizer elements vs f
    double conformal_fit = 0.0; // relative residual of the conformal fit
};

namespace sph {

// |C(z) v| for the bounded chart at height u (the chart whose pole is
// farther): the conversion cylinder -> plane is conformal of size e^{-|u|}
inline double bounded_scale(double u) { return std::exp(-std::abs(u)); }

inline Vec2 flow2d(const SphereField& F, double t, Vec2 p, int nsteps = 96) {
    const double h = t / nsteps;
    for (int i = 0; i < nsteps; ++i) {
        const Vec2 k1 = F.cyl(p.x, p.y);
        const Vec2 k2 = F.cyl(p.x + 0.5 * h * k1.x, p.y + 0.5 * h * k1.y);
        const Vec2 k3 = F.cyl(p.x + 0.5 * h * k2.x, p.y + 0.5 * h * k2.y);
        const Vec2 k4 = F.cyl(p.x + h * k3.x, p.y + h * k3.y);
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return p;
}

}  // namespace sph

inline InvariantFieldsReport invariant_fields(const SphereDiffeo& f,
                                              const GridSpec& grid = GridSpec(256)) {
    InvariantFieldsReport rep;
    {
        TorusGridMap d = mather_torus(f, grid);
        rep.gate_defect = d.translation_defect;
        rep.n = d.n;
        if (!(d.translation_defect < 1e-6))
            throw std::invalid_argument(
                "invariant_fields: torus map is not a translation; defect " +
                std::to_string(d.translation_defect) + " exceeds 1e-6");
    }
    auto fp = std::make_shared<SphereDiffeo>(f);
    rep.Z = SphereField{fp, true};
    rep.X = SphereField{fp, false};

    // probe band: chart-scale weights collapse past |u| ~ 32, so deeper
    // probes cannot contribute to the sup
    const double u_lo = f.north_linear_u() - 0.5;
    const double u_hi = std::min(f.south_clear_u() + 0.5, 32.0);
    const int PU = 20, PP = 10;

    // invariance: Df V = V o f at probe points, in the bounded chart
    for (int a = 0; a <= PU; ++a)
        for (int b = 0; b < PP; ++b) {
            const double u = u_lo + (u_hi - u_lo) * a / PU;
            const double phi = sph::kTwoPi * (b + 0.37) / PP;
            double uo, po;
            Mat2 J;
            f.eval(u, phi, uo, po, &J);
            const double sc = sph::bounded_scale(uo);
            {
                const Vec2 d = J.apply(rep.Z.cyl(u, phi)) - rep.Z.cyl(uo, po);
                rep.invariance_Z = std::max(rep.invariance_Z, sc * norm(d));
            }
            {
                const Vec2 d = J.apply(rep.X.cyl(u, phi)) - rep.X.cyl(uo, po);
                rep.invariance_X = std::max(rep.invariance_X, sc * norm(d));
            }
        }

    // finite-difference Lie bracket near the blend band
    {
        const double h = 1e-5;
        auto deriv = [&](const SphereField& F, double u, double phi) {
            const Vec2 du = (1.0 / (2 * h)) * (F.cyl(u + h, phi) - F.cyl(u - h, phi));
            const Vec2 dp = (1.0 / (2 * h)) * (F.cyl(u, phi + h) - F.cyl(u, phi - h));
            return Mat2{du.x, dp.x, du.y, dp.y};
        };
        const double b_lo = f.north_linear_u() - 0.3;
        const double b_hi = f.south_linear_u() + 0.8;
        for (int a = 0; a <= 8; ++a)
            for (int b = 0; b < 6; ++b) {
                const double u = b_lo + (b_hi - b_lo) * a / 8;
                const double phi = sph::kTwoPi * (b + 0.23) / 6;
                const Vec2 v = rep.Z.cyl(u, phi), w = rep.X.cyl(u, phi);
                const Vec2 br =
                    deriv(rep.X, u, phi).apply(v) - deriv(rep.Z, u, phi).apply(w);
                rep.bracket =
                    std::max(rep.bracket, sph::bounded_scale(u) * norm(br));
            }
    }

    // south collar: the fields must be the conformal germs of B, cylinder scale
    {
        const Vec2 zb{0.0, sph::kTwoPi};
        const Vec2 xb{-f.log_beta(), f.south().angle + sph::kTwoPi * rep.n};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 12; ++b) {
                const double u = f.south_clear_u() + 0.25 + 0.25 * a;
                const double phi = sph::kTwoPi * (b + 0.41) / 12;
                rep.collar_Z = std::max(rep.collar_Z, norm(rep.Z.cyl(u, phi) - zb));
                rep.collar_X = std::max(rep.collar_X, norm(rep.X.cyl(u, phi) - xb));
            }
    }

    // centralizer witnesses: the flow compositions commute with f
    {
        const double mid = 0.5 * (f.north_linear_u() + f.south_linear_u());
        const Vec2 pts[2] = {{mid, 0.7}, {f.south_linear_u() + 0.4, 2.9}};
        const double wit[2][2] = {{0.3, 0.5}, {0.5, 0.25}};
        for (const Vec2& p : pts)
            for (const auto& ts : wit) {
                auto gc = [&](Vec2 q) {
                    return sph::flow2d(rep.Z, ts[0], sph::flow2d(rep.X, ts[1], q));
                };
                double uo, po;
                f.eval(p.x, p.y, uo, po);
                const Vec2 a = gc({uo, po});
                const Vec2 gp = gc(p);
                double ub, pb;
                f.eval(gp.x, gp.y, ub, pb);
                Vec2 d = a - Vec2{ub, pb};
                d.y -= sph::kTwoPi * std::round(d.y / sph::kTwoPi);
                rep.flow_commute = std::max(
                    rep.flow_commute, sph::bounded_scale(a.x) * norm(d));
            }
    }

    // local rigidity: a flow-built centralizer element is conformal linear
    // near the sink; least-squares fit in the south chart, scale-normalized
    {
        const double uc = f.south_clear_u() + 0.3;
        std::vector<Vec2> w0, w1;
        for (int b = 0; b < 8; ++b) {
            const double phi = sph::kTwoPi * (b + 0.17) / 8;
            const double du = 0.1 * (b % 3);
            const Vec2 q = sph::flow2d(rep.X, 0.5,
                                       sph::flow2d(rep.Z, 0.3, {uc + du, phi}));
            // south-chart points relative to the base height, to keep the
            // moduli representable at any depth
            w0.push_back({std::exp(-du) * std::cos(phi), std::exp(-du) * std::sin(phi)});
            w1.push_back({std::exp(-(q.x - uc)) * std::cos(q.y),
                          std::exp(-(q.x - uc)) * std::sin(q.y)});
        }
        // complex least squares: minimize sum |w1 - lambda w0|^2
        double nx = 0, ny = 0, den = 0, sup = 0;
        for (std::size_t i = 0; i < w0.size(); ++i) {
            nx += w0[i].x * w1[i].x + w0[i].y * w1[i].y;
            ny += w0[i].x * w1[i].y - w0[i].y * w1[i].x;
            den += dot(w0[i], w0[i]);
            sup = std::max(sup, norm(w0[i]));
        }
        const double lr = nx / den, li = ny / den;
        for (std::size_t i = 0; i < w0.size(); ++i) {
            const Vec2 pred{lr * w0[i].x - li * w0[i].y,
                            lr * w0[i].y + li * w0[i].x};
            rep.conformal_fit =
                std::max(rep.conformal_fit, norm(w1[i] - pred) / sup);
        }
    }
    return rep;
}

}  // namespace matherkit
