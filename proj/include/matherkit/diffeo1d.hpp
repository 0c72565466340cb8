#pragma once

// One-dimensional diffeomorphisms of [0,1] and of the circle R/Z:
// representation, evaluation, inversion, composition, C0/C1 metrics and
// flow integration.  Maps are immutable; every operation is pure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "matherkit/chart.hpp"
#include "matherkit/integrate.hpp"
#include "matherkit/rootfind.hpp"
#include "matherkit/spline.hpp"

namespace matherkit {

enum class DomainKind { Interval, Circle };

struct Tail {
    double at = 0.0;
    double slope = 1.0;
    double radius = 0.0;
};

struct GridSpec {
    int resolution = 256;
    explicit GridSpec(int n = 256) : resolution(n) {
        if (n < 16) throw std::invalid_argument("GridSpec: resolution must be >= 16");
    }
};

// Exact affine piece of a circle map around a periodic point.
struct AffineCollar {
    double center = 0.0;   // in [0,1)
    double image = 0.0;    // lift image of center
    double slope = 1.0;    // signed (negative for reversing maps)
    double radius = 0.0;
};

namespace d1 {

struct MapNode {
    virtual ~MapNode() = default;
    // Interval maps: x in [0,1].  Circle maps: evaluates the lift at any
    // real x (F(x+1) = F(x) + deg).
    virtual void eval(double x, double& v, double& d) const = 0;
    // Abscissae carrying interpolation features, for resampling.
    virtual void collect_knots(std::vector<double>& xs) const = 0;
};

using NodePtr = std::shared_ptr<const MapNode>;

// ---- interval map given by affine tails + interior spline ----
struct IntervalSplineNode final : MapNode {
    Tail left, right;           // left.at == 0, right.at == 1
    CubicHermite interior;      // on [left.radius, 1 - right.radius]

    void eval(double x, double& v, double& d) const override {
        if (x <= left.radius) {
            v = left.slope * x;
            d = left.slope;
        } else if (x >= 1.0 - right.radius) {
            v = 1.0 + right.slope * (x - 1.0);
            d = right.slope;
        } else {
            interior.value_and_deriv(x, v, d);
        }
    }
    void collect_knots(std::vector<double>& xs) const override {
        for (const auto& k : interior.knots()) xs.push_back(k.x);
    }
};

// ---- interval map phi^{-1} o H o phi with H(y) = y + tau + dev(y) ----
struct ChartMapNode final : MapNode {
    ChartPtr chart;
    double tau = 0.0;                   // 1 for D_{alpha,beta} maps, 0 for lifted bumps
    std::optional<CubicHermite> dev;    // compactly supported deviation
    double lo = 0.0, hi = 0.0;          // dev == 0 outside [lo, hi]

    double H(double y) const {
        double v = y + tau;
        if (dev && y > lo && y < hi) v += dev->value(y);
        return v;
    }
    double dH(double y) const {
        double d = 1.0;
        if (dev && y > lo && y < hi) d += dev->deriv(y);
        return d;
    }

    void eval(double x, double& v, double& d) const override {
        if (x <= 0.0) { v = 0.0; d = std::pow(chart->alpha(), tau); return; }
        if (x >= 1.0) { v = 1.0; d = std::pow(chart->beta(), tau); return; }
        const double K0 = chart->K0();
        // exact tail formulas whenever both x and its image are in a tail
        // and the deviation vanishes in between
        const double lx = std::log(x);
        if (lx / chart->log_alpha() + 1e-12 < std::min(lo, -K0) - tau) {
            const double s = std::pow(chart->alpha(), tau);
            v = s * x;
            d = s;
            return;
        }
        const double l1x = std::log1p(-x);
        if (l1x / chart->log_beta() - 1e-12 > std::max(hi, K0) + tau ||
            !(l1x / chart->log_beta() < std::numeric_limits<double>::infinity())) {
            const double s = std::pow(chart->beta(), tau);
            v = 1.0 + s * (x - 1.0);
            d = s;
            return;
        }
        const double y = chart->value(x);
        const double dy = 1.0 / chart->inverse_deriv(y);
        const double z = H(y);
        v = chart->inverse(z);
        d = chart->inverse_deriv(z) * dH(y) * dy;
    }

    void collect_knots(std::vector<double>& xs) const override {
        if (!dev) return;
        for (const auto& k : dev->knots()) {
            const double x = chart->inverse(k.x);
            if (x > 0.0 && x < 1.0) xs.push_back(x);
        }
    }
};

// ---- circle map given by a lift spline on [0,1] plus exact affine collars ----
struct CircleSplineNode final : MapNode {
    CubicHermite lift;                 // on [0,1], lift(1) = lift(0) + deg
    std::vector<AffineCollar> collars;
    int deg = 1;

    void eval(double x, double& v, double& d) const override {
        const double n = std::floor(x);
        const double fx = x - n;
        for (const auto& c : collars) {
            double off = fx - c.center;
            off -= std::round(off);
            if (std::abs(off) <= c.radius) {
                v = c.image + c.slope * off + (fx - off - c.center) * deg + n * deg;
                d = c.slope;
                return;
            }
        }
        lift.value_and_deriv(fx, v, d);
        v += n * deg;
    }
    void collect_knots(std::vector<double>& xs) const override {
        for (const auto& k : lift.knots()) xs.push_back(k.x);
    }
};

struct ComposeNode final : MapNode {
    NodePtr outer, inner;
    void eval(double x, double& v, double& d) const override {
        double gv, gd, fv, fd;
        inner->eval(x, gv, gd);
        outer->eval(gv, fv, fd);
        v = fv;
        d = fd * gd;
    }
    void collect_knots(std::vector<double>& xs) const override {
        inner->collect_knots(xs);
    }
};

struct InverseNode final : MapNode {
    NodePtr base;
    DomainKind kind;
    int deg = 1;  // orientation sign of base

    void eval(double y, double& v, double& d) const override {
        double lo, hi;
        if (kind == DomainKind::Interval) {
            lo = 0.0;
            hi = 1.0;
        } else {
            lo = y * deg - 3.0;
            hi = y * deg + 3.0;
        }
        const double s = (deg >= 0) ? 1.0 : -1.0;
        const double x = solve_increasing(
            [this, s](double t, double& fv, double& fd) {
                base->eval(t, fv, fd);
                fv *= s;
                fd *= s;
            },
            lo, hi, s * y, 1e-6, 1e-13);
        double fv, fd;
        base->eval(x, fv, fd);
        v = x;
        d = 1.0 / fd;
    }
    void collect_knots(std::vector<double>& xs) const override {
        std::vector<double> base_knots;
        base->collect_knots(base_knots);
        for (double k : base_knots) {
            double fv, fd;
            base->eval(k, fv, fd);
            xs.push_back(fv);
        }
    }
};

}  // namespace d1

// Declarative description, mirroring the diffeo spec JSON schema.
struct DiffeoSpec {
    DomainKind domain = DomainKind::Interval;
    std::vector<Tail> tails;            // interval: {at 0, at 1}; circle: any
    std::vector<Knot> knots;            // interior samples (x, y, dy)
    int degree = 1;                     // circle only
};

class Diffeo1D {
public:
    Diffeo1D() = default;
    Diffeo1D(DomainKind kind, int deg, d1::NodePtr node)
        : kind_(kind), deg_(deg), node_(std::move(node)) {}

    DomainKind domain() const { return kind_; }
    int degree() const { return deg_; }
    bool orientation_preserving() const { return deg_ > 0; }
    const d1::NodePtr& node() const { return node_; }

    double operator()(double x) const {
        double v, d;
        node_->eval(x, v, d);
        return v;
    }
    double deriv(double x) const {
        double v, d;
        node_->eval(x, v, d);
        return d;
    }
    void eval(double x, double& v, double& d) const { node_->eval(x, v, d); }

    // The chart core, when this map is represented through a chart.
    const d1::ChartMapNode* chart_core() const {
        return dynamic_cast<const d1::ChartMapNode*>(node_.get());
    }
    const d1::IntervalSplineNode* spline_core() const {
        return dynamic_cast<const d1::IntervalSplineNode*>(node_.get());
    }
    const d1::CircleSplineNode* circle_core() const {
        return dynamic_cast<const d1::CircleSplineNode*>(node_.get());
    }

    std::vector<double> feature_knots() const {
        std::vector<double> xs;
        node_->collect_knots(xs);
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        return xs;
    }

private:
    DomainKind kind_ = DomainKind::Interval;
    int deg_ = 1;
    d1::NodePtr node_;
};

// ---------------------------------------------------------------------------
// construction

inline Diffeo1D build_from_spec(const DiffeoSpec& spec) {
    if (spec.domain == DomainKind::Interval) {
        if (spec.tails.size() != 2)
            throw std::invalid_argument("diffeo spec: interval domain needs two tails");
        Tail left = spec.tails[0], right = spec.tails[1];
        if (left.at > right.at) std::swap(left, right);
        if (left.at != 0.0 || right.at != 1.0)
            throw std::invalid_argument("diffeo spec: interval tails must sit at 0 and 1");
        if (!(left.slope > 0.0) || !(right.slope > 0.0))
            throw std::invalid_argument("diffeo spec: tail slope must be > 0");
        if (!(left.radius > 0.0) || !(right.radius > 0.0) ||
            left.radius + right.radius >= 1.0)
            throw std::invalid_argument("diffeo spec: tail radii must be positive and disjoint");

        std::vector<Knot> ks;
        ks.push_back({left.radius, left.slope * left.radius, left.slope});
        for (const auto& k : spec.knots) {
            if (k.x <= left.radius + 1e-15 || k.x >= 1.0 - right.radius - 1e-15) {
                // knots inside a tail must agree with the tail formula
                const double tv = (k.x <= left.radius) ? left.slope * k.x
                                                       : 1.0 + right.slope * (k.x - 1.0);
                const double td = (k.x <= left.radius) ? left.slope : right.slope;
                if (std::abs(k.y - tv) > 1e-9 || std::abs(k.dy - td) > 1e-9)
                    throw std::invalid_argument(
                        "diffeo spec: junction mismatch at x=" + std::to_string(k.x));
                continue;
            }
            ks.push_back(k);
        }
        ks.push_back({1.0 - right.radius, 1.0 - right.slope * right.radius, right.slope});
        std::sort(ks.begin(), ks.end(), [](const Knot& a, const Knot& b) { return a.x < b.x; });
        for (std::size_t i = 1; i < ks.size(); ++i)
            if (!(ks[i].y > ks[i - 1].y))
                throw std::invalid_argument(
                    "diffeo spec: knot values not strictly increasing between x=" +
                    std::to_string(ks[i - 1].x) + " and x=" + std::to_string(ks[i].x));
        for (auto& k : ks)
            if (!(k.dy > 0.0))
                throw std::invalid_argument("diffeo spec: knot derivative must be > 0 at x=" +
                                            std::to_string(k.x));
        clamp_monotone(ks);

        auto node = std::make_shared<d1::IntervalSplineNode>();
        node->left = left;
        node->right = right;
        node->interior = CubicHermite(std::move(ks));
        return Diffeo1D(DomainKind::Interval, 1, node);
    }

    // circle
    if (spec.degree != 1 && spec.degree != -1)
        throw std::invalid_argument("diffeo spec: circle degree must be +1 or -1");
    std::vector<Knot> ks = spec.knots;
    std::sort(ks.begin(), ks.end(), [](const Knot& a, const Knot& b) { return a.x < b.x; });
    if (ks.size() < 2 || ks.front().x != 0.0 || ks.back().x != 1.0)
        throw std::invalid_argument("diffeo spec: circle lift needs knots at x=0 and x=1");
    if (std::abs((ks.back().y - ks.front().y) - spec.degree) > 1e-9)
        throw std::invalid_argument("diffeo spec: lift must satisfy F(1) = F(0) + degree");
    const double s = spec.degree;
    for (std::size_t i = 1; i < ks.size(); ++i)
        if (!(s * ks[i].y > s * ks[i - 1].y))
            throw std::invalid_argument(
                "diffeo spec: lift values not strictly monotone between x=" +
                std::to_string(ks[i - 1].x) + " and x=" + std::to_string(ks[i].x));
    for (auto& k : ks)
        if (!(s * k.dy > 0.0))
            throw std::invalid_argument("diffeo spec: lift derivative has wrong sign at x=" +
                                        std::to_string(k.x));
    if (spec.degree == 1) clamp_monotone(ks);

    auto node = std::make_shared<d1::CircleSplineNode>();
    for (const auto& t : spec.tails)
        node->collars.push_back({t.at, 0.0, t.slope, t.radius});  // image set below
    for (auto& c : node->collars) {
        // collar image from the spline itself
        CubicHermite tmp(ks);
        c.image = tmp.value(c.center);
    }
    node->lift = CubicHermite(std::move(ks));
    node->deg = spec.degree;
    return Diffeo1D(DomainKind::Circle, spec.degree, node);
}

inline Diffeo1D identity_interval() {
    DiffeoSpec s;
    s.domain = DomainKind::Interval;
    s.tails = {{0.0, 1.0, 0.3}, {1.0, 1.0, 0.3}};
    s.knots = {{0.5, 0.5, 1.0}};
    return build_from_spec(s);
}

inline Diffeo1D circle_rotation(double rho) {
    DiffeoSpec s;
    s.domain = DomainKind::Circle;
    s.degree = 1;
    for (int i = 0; i <= 16; ++i) {
        const double x = i / 16.0;
        s.knots.push_back({x, x + rho, 1.0});
    }
    return build_from_spec(s);
}

// ---------------------------------------------------------------------------
// inversion

inline Diffeo1D inverse(const Diffeo1D& f) {
    auto node = std::make_shared<d1::InverseNode>();
    node->base = f.node();
    node->kind = f.domain();
    node->deg = f.degree();
    return Diffeo1D(f.domain(), f.degree(), node);
}

inline double invert(const Diffeo1D& f, double y) {
    if (f.domain() == DomainKind::Interval && (y < 0.0 || y > 1.0))
        throw std::domain_error("invert: value outside the range of an interval map");
    double v, d;
    d1::InverseNode node;
    node.base = f.node();
    node.kind = f.domain();
    node.deg = f.degree();
    node.eval(y, v, d);
    return v;
}

// ---------------------------------------------------------------------------
// composition

namespace d1 {

constexpr std::size_t kComposeKnotCap = 4096;

inline std::vector<double> merged_knots(const Diffeo1D& f, const Diffeo1D& g,
                                        double lo, double hi) {
    std::vector<double> xs = g.feature_knots();
    for (double xf : f.feature_knots()) {
        try {
            xs.push_back(invert(g, xf));
        } catch (const std::domain_error&) {
        }
    }
    std::vector<double> out;
    for (double x : xs)
        if (x > lo && x < hi) out.push_back(x);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              out.end());
    if (out.size() > kComposeKnotCap) {
        std::vector<double> thin;
        const double stride = static_cast<double>(out.size()) / kComposeKnotCap;
        for (std::size_t i = 0; i < kComposeKnotCap; ++i)
            thin.push_back(out[static_cast<std::size_t>(i * stride)]);
        out = std::move(thin);
    }
    return out;
}

}  // namespace d1

inline Diffeo1D compose(const Diffeo1D& f, const Diffeo1D& g) {
    if (f.domain() != g.domain())
        throw std::invalid_argument("compose: mixed domains");
    auto eval_fg = [&](double x, double& v, double& d) {
        double gv, gd, fv, fd;
        g.eval(x, gv, gd);
        f.eval(gv, fv, fd);
        v = fv;
        d = fd * gd;
    };

    // chart path: both maps conjugated through the same chart
    if (const auto* cf = f.chart_core()) {
        if (const auto* cg = g.chart_core(); cg && cg->chart == cf->chart) {
            auto node = std::make_shared<d1::ChartMapNode>();
            node->chart = cf->chart;
            node->tau = cf->tau + cg->tau;
            const double lo = std::min(cg->lo, cf->lo - cg->tau);
            const double hi = std::max(cg->hi, cf->hi - cg->tau);
            if (hi > lo) {
                std::set<double> ys;
                if (cg->dev)
                    for (const auto& k : cg->dev->knots()) ys.insert(k.x);
                if (cf->dev)
                    for (const auto& k : cf->dev->knots()) {
                        // preimage of outer knot under Hg
                        double y = k.x - cg->tau;
                        for (int it = 0; it < 50; ++it) {
                            const double r = cg->H(y) - k.x;
                            if (std::abs(r) < 1e-13) break;
                            y -= r / cg->dH(y);
                        }
                        ys.insert(y);
                    }
                ys.insert(lo);
                ys.insert(hi);
                std::vector<Knot> dk;
                double prev = -std::numeric_limits<double>::infinity();
                for (double y : ys) {
                    if (y - prev < 1e-12) continue;
                    prev = y;
                    const double hy = cg->H(y);
                    dk.push_back({y, cf->H(hy) - y - node->tau, cf->dH(hy) * cg->dH(y) - 1.0});
                }
                if (dk.size() >= 2) node->dev = CubicHermite(std::move(dk));
                node->lo = lo;
                node->hi = hi;
            }
            return Diffeo1D(DomainKind::Interval, 1, node);
        }
    }

    if (f.domain() == DomainKind::Interval) {
        const d1::IntervalSplineNode* sf = f.spline_core();
        const d1::IntervalSplineNode* sg = g.spline_core();
        Tail fl = sf ? sf->left : Tail{0, f.deriv(0.0), 1e-3};
        Tail fr = sf ? sf->right : Tail{1, f.deriv(1.0), 1e-3};
        Tail gl = sg ? sg->left : Tail{0, g.deriv(0.0), 1e-3};
        Tail gr = sg ? sg->right : Tail{1, g.deriv(1.0), 1e-3};
        Tail left{0.0, fl.slope * gl.slope, std::min(gl.radius, fl.radius / gl.slope)};
        Tail right{1.0, fr.slope * gr.slope, std::min(gr.radius, fr.radius / gr.slope)};

        std::vector<double> xs = d1::merged_knots(f, g, left.radius, 1.0 - right.radius);
        std::vector<Knot> ks;
        ks.push_back({left.radius, left.slope * left.radius, left.slope});
        for (double x : xs) {
            if (x <= left.radius + 1e-12 || x >= 1.0 - right.radius - 1e-12) continue;
            double v, d;
            eval_fg(x, v, d);
            ks.push_back({x, v, d});
        }
        ks.push_back({1.0 - right.radius, 1.0 - right.slope * right.radius, right.slope});
        clamp_monotone(ks);
        auto node = std::make_shared<d1::IntervalSplineNode>();
        node->left = left;
        node->right = right;
        node->interior = CubicHermite(std::move(ks));
        return Diffeo1D(DomainKind::Interval, 1, node);
    }

    // circle: resample the composed lift on [0,1]
    const int deg = f.degree() * g.degree();
    std::vector<double> xs = d1::merged_knots(f, g, 0.0, 1.0);
    std::set<double> grid(xs.begin(), xs.end());
    for (int i = 0; i < 64; ++i) grid.insert(i / 64.0);
    grid.insert(0.0);
    std::vector<Knot> ks;
    for (double x : grid) {
        if (x >= 1.0) continue;
        double v, d;
        eval_fg(x, v, d);
        ks.push_back({x, v, d});
    }
    double v0, d0;
    eval_fg(0.0, v0, d0);
    ks.push_back({1.0, v0 + deg, d0});
    if (deg == 1) clamp_monotone(ks);
    auto node = std::make_shared<d1::CircleSplineNode>();
    node->lift = CubicHermite(std::move(ks));
    node->deg = deg;
    return Diffeo1D(DomainKind::Circle, deg, node);
}

// ---------------------------------------------------------------------------
// metrics

struct C1Distance {
    double c0 = 0.0;
    double c1 = 0.0;
};

inline C1Distance c1_distance(const Diffeo1D& f, const Diffeo1D& g, const GridSpec& grid) {
    if (f.domain() != g.domain())
        throw std::invalid_argument("c1_distance: mixed domains");
    const int n = grid.resolution;
    C1Distance out;
    if (f.domain() == DomainKind::Interval) {
        for (int i = 0; i <= n; ++i) {
            const double x = static_cast<double>(i) / n;
            double fv, fd, gv, gd;
            f.eval(x, fv, fd);
            g.eval(x, gv, gd);
            out.c0 = std::max(out.c0, std::abs(fv - gv));
            out.c1 = std::max(out.c1, std::abs(fd - gd));
        }
        return out;
    }
    std::vector<double> diff(n);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / n;
        double fv, fd, gv, gd;
        f.eval(x, fv, fd);
        g.eval(x, gv, gd);
        diff[i] = fv - gv;
        mean += diff[i];
        out.c1 = std::max(out.c1, std::abs(fd - gd));
    }
    mean /= n;
    const double shift = std::round(mean);
    for (double d : diff) out.c0 = std::max(out.c0, std::abs(d - shift));
    return out;
}

// ---------------------------------------------------------------------------
// vector fields and flows

struct FieldZero {
    double at = 0.0;      // fixed point position
    double slope = 0.0;   // field is slope * (x - at) within radius
    double radius = 0.0;
};

class VectorField1D {
public:
    VectorField1D() = default;
    VectorField1D(DomainKind kind, std::vector<FieldZero> zeros, CubicHermite interior)
        : kind_(kind), zeros_(std::move(zeros)), interior_(std::move(interior)) {}

    DomainKind domain() const { return kind_; }
    const std::vector<FieldZero>& zeros() const { return zeros_; }
    const CubicHermite& interior() const { return interior_; }

    double value(double x) const {
        const double xx = reduce(x);
        if (const FieldZero* z = tail_at(xx)) return z->slope * offset(xx, *z);
        return interior_.value(xx);
    }

    double deriv(double x) const {
        const double xx = reduce(x);
        if (const FieldZero* z = tail_at(xx)) return z->slope;
        return interior_.deriv(xx);
    }

    const FieldZero* tail_at(double x) const {
        for (const auto& z : zeros_)
            if (std::abs(offset(x, z)) <= z.radius) return &z;
        return nullptr;
    }

    double offset(double x, const FieldZero& z) const {
        double off = x - z.at;
        if (kind_ == DomainKind::Circle) off -= std::round(off);
        return off;
    }

private:
    double reduce(double x) const {
        if (kind_ == DomainKind::Circle) return x - std::floor(x);
        return x;
    }

    DomainKind kind_ = DomainKind::Interval;
    std::vector<FieldZero> zeros_;
    CubicHermite interior_;
};

// Time-t flow of a sampled field; linear closed form inside the analytic
// tails, step-doubled RK4 elsewhere.  Returned in lift coordinates for
// circle fields (the increment is added to x).
inline double flow_map(const VectorField1D& X, double t, double x) {
    if (!(std::isfinite(t))) throw std::invalid_argument("flow_map: non-finite time");
    double rem = t;
    double pos = x;
    const int dir_steps = 64;
    for (int guard = 0; guard < dir_steps && rem != 0.0; ++guard) {
        const double base = (X.domain() == DomainKind::Circle) ? pos - std::floor(pos) : pos;
        const double wrap = pos - base;
        if (const FieldZero* z = X.tail_at(base)) {
            const double off = X.offset(base, *z);
            if (off == 0.0 || z->slope == 0.0) return pos;  // exactly at a zero
            const double target = off * std::exp(z->slope * rem);
            if (std::abs(target) <= z->radius) {
                double res = z->at + target + wrap;
                return res;
            }
            // exits the tail: advance just past the boundary in closed form
            // (strictly outside, so the next pass cannot re-enter and stall)
            const double shell = z->radius + std::max(1e-15, 1e-9 * z->radius);
            // the exit time carries the sign of the remaining time: |off|
            // only grows in that direction, so clamp to [0, rem] (or its
            // mirror) purely against rounding
            const double t_exit = std::log(shell / std::abs(off)) / z->slope;
            pos = z->at + ((off > 0) ? shell : -shell) + wrap;
            rem -= (rem > 0.0) ? std::clamp(t_exit, 0.0, rem)
                               : std::clamp(t_exit, rem, 0.0);
            continue;
        }
        // integrate until time runs out; if the endpoint landed in a tail
        // region the smooth RK4 answer stands
        pos = rk4_flow([&X](double p) { return X.value(p); }, pos, rem, 1e-11);
        if (X.domain() == DomainKind::Interval) pos = std::clamp(pos, 0.0, 1.0);
        rem = 0.0;
    }
    if (X.domain() == DomainKind::Interval && (pos < -1e-9 || pos > 1.0 + 1e-9))
        throw std::runtime_error("flow_map: trajectory left the interval");
    return pos;
}

}  // namespace matherkit
