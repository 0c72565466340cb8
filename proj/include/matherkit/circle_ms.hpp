#pragma once

// Morse-Smale circle diffeomorphisms: periodic-point preparation with
// exact affine collars, per-segment flattening glued into a globally
// invariant vector field, the symmetry invariant of the two-orbit case,
// and centralizer classification.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "matherkit/mather1d.hpp"

namespace matherkit {

struct PeriodicPoint {
    double pos = 0.0;        // in [0, 1)
    int period = 1;
    double multiplier = 0.0; // D(f^period), signed
    bool sink = false;
};

struct MorseSmaleCircle {
    Diffeo1D map;
    std::vector<PeriodicPoint> points;  // sorted by pos
    int q = 1;                          // common segment-orbit period
    bool reversing = false;
    double collar = 0.0;                // exact-affine radius at every point
    std::vector<std::vector<int>> segment_orbits;
    double c1_from_input = 0.0;

    // segment i runs from points[i] to points[i+1] in lift coordinates
    std::size_t segment_count() const { return points.size(); }
    double seg_lo(std::size_t i) const { return points[i].pos; }
    double seg_hi(std::size_t i) const {
        return (i + 1 < points.size()) ? points[i + 1].pos : points[0].pos + 1.0;
    }
};

namespace cms {

inline double wrap_half(double x) { return x - std::round(x); }

inline void iterate_eval(const Diffeo1D& f, int k, double x, double& v, double& d) {
    v = x;
    d = 1.0;
    if (k >= 0) {
        for (int i = 0; i < k; ++i) {
            double fv, fd;
            f.eval(v, fv, fd);
            v = fv;
            d *= fd;
        }
    } else {
        Diffeo1D fi = inverse(f);
        for (int i = 0; i < -k; ++i) {
            double fv, fd;
            fi.eval(v, fv, fd);
            v = fv;
            d *= fd;
        }
    }
}

struct FnCircleNode final : d1::MapNode {
    std::function<void(double, double&, double&)> fn;  // lift on [0, 1)
    int deg = 1;
    void eval(double x, double& v, double& d) const override {
        const double n = std::floor(x);
        fn(x - n, v, d);
        v += n * deg;
    }
    void collect_knots(std::vector<double>& xs) const override {
        for (int i = 0; i < 64; ++i) xs.push_back(i / 64.0);
    }
};

// circle map equal to `base` except on a list of lift-coordinate patches
struct PatchedCircleNode final : d1::MapNode {
    d1::NodePtr base;
    int deg = 1;
    double origin = 0.0;  // patches live in [origin, origin + 1)
    struct Patch {
        double lo, hi;
        std::function<void(double, double&, double&)> fn;
    };
    std::vector<Patch> patches;

    void eval(double x, double& v, double& d) const override {
        const double n = std::floor(x - origin);
        const double pos = x - n;
        for (const auto& p : patches) {
            if (pos >= p.lo && pos <= p.hi) {
                p.fn(pos, v, d);
                v += n * deg;
                return;
            }
        }
        base->eval(x, v, d);
    }
    void collect_knots(std::vector<double>& xs) const override {
        base->collect_knots(xs);
    }
};

}  // namespace cms

// ---------------------------------------------------------------------------
// preparation

inline MorseSmaleCircle prepare(const Diffeo1D& f, double linearization_radius) {
    if (f.domain() != DomainKind::Circle)
        throw std::invalid_argument("prepare: circle map expected");
    const bool reversing = f.degree() < 0;

    // locate the minimal iterate with periodic points
    const int ngrid = 4096;
    int q_pt = 0;
    std::vector<double> roots;
    for (int qc = 1; qc <= 64 && roots.empty(); ++qc) {
        std::vector<double> disp(ngrid);
        for (int i = 0; i < ngrid; ++i) {
            const double x = static_cast<double>(i) / ngrid;
            double v, d;
            cms::iterate_eval(f, qc, x, v, d);
            disp[i] = cms::wrap_half(v - x);
        }
        for (int i = 0; i < ngrid; ++i) {
            const int j = (i + 1) % ngrid;
            if (disp[i] == 0.0) {
                roots.push_back(static_cast<double>(i) / ngrid);
                continue;
            }
            if (disp[i] * disp[j] < 0.0 && std::abs(disp[i]) < 0.25 &&
                std::abs(disp[j]) < 0.25) {
                double lo = static_cast<double>(i) / ngrid;
                double hi = lo + 1.0 / ngrid;
                double dlo = disp[i];
                for (int it = 0; it < 60; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    double v, d;
                    cms::iterate_eval(f, qc, mid, v, d);
                    const double dm = cms::wrap_half(v - mid);
                    if ((dm < 0.0) == (dlo < 0.0)) {
                        lo = mid;
                        dlo = dm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push_back(0.5 * (lo + hi));
            }
        }
        if (!roots.empty()) q_pt = qc;
    }
    if (roots.empty())
        throw std::invalid_argument("prepare: no periodic points found up to period 64");
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end(),
                            [](double a, double b) {
                                return std::abs(cms::wrap_half(a - b)) < 1e-8;
                            }),
                roots.end());
    if (roots.size() > 1 &&
        std::abs(cms::wrap_half(roots.front() - roots.back())) < 1e-8)
        roots.pop_back();

    if (reversing && (q_pt != 1 || roots.size() != 2))
        throw std::invalid_argument(
            "prepare: orientation-reversing input must have exactly two fixed points");

    std::vector<PeriodicPoint> pts;
    for (double r : roots) {
        double v, d;
        cms::iterate_eval(f, q_pt, r, v, d);
        if (std::abs(std::abs(d) - 1.0) < 1e-6)
            throw std::invalid_argument("prepare: non-hyperbolic periodic point at x=" +
                                        std::to_string(r));
        pts.push_back({r, q_pt, d, std::abs(d) < 1.0});
    }
    if (!reversing) {
        if (pts.size() % 2 != 0)
            throw std::invalid_argument("prepare: periodic points do not alternate");
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (pts[i].sink == pts[(i + 1) % pts.size()].sink)
                throw std::invalid_argument("prepare: sinks and sources do not alternate");
    }

    auto nearest = [&pts](double x) {
        std::size_t best = 0;
        double bd = 10.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double d = std::abs(cms::wrap_half(x - pts[i].pos));
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return best;
    };
    std::vector<int> orbit_id(pts.size(), -1);
    std::vector<std::vector<std::size_t>> point_orbits;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (orbit_id[i] >= 0) continue;
        std::vector<std::size_t> orb;
        std::size_t cur = i;
        do {
            orbit_id[cur] = static_cast<int>(point_orbits.size());
            orb.push_back(cur);
            cur = nearest(f(pts[cur].pos));
        } while (cur != i && orb.size() <= pts.size());
        point_orbits.push_back(std::move(orb));
    }

    double min_gap = 1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double gap =
            (i + 1 < pts.size() ? pts[i + 1].pos : pts[0].pos + 1.0) - pts[i].pos;
        min_gap = std::min(min_gap, gap);
    }
    double r = std::min(linearization_radius, 0.2 * min_gap);

    // collar slopes: Df at each point, nudged so the orbit products are
    // pairwise distinct
    std::vector<double> slope(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) slope[i] = f.deriv(pts[i].pos);
    for (int pass = 0; pass < 16; ++pass) {
        std::vector<double> mu(point_orbits.size(), 1.0);
        for (std::size_t o = 0; o < point_orbits.size(); ++o)
            for (std::size_t i : point_orbits[o]) mu[o] *= std::abs(slope[i]);
        bool clash = false;
        for (std::size_t a = 0; a < mu.size() && !clash; ++a)
            for (std::size_t b = a + 1; b < mu.size() && !clash; ++b)
                if (std::abs(mu[a] - mu[b]) < 1e-6 * std::max(mu[a], mu[b])) {
                    slope[point_orbits[b].front()] *= 1.0 + 4e-7 * (pass + 1);
                    clash = true;
                }
        if (!clash) break;
    }

    // snapped images: each point maps exactly onto the next point of its
    // orbit, lift-consistently
    std::vector<double> image(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double raw = f(pts[i].pos);
        const std::size_t j = nearest(raw);
        image[i] = raw + cms::wrap_half(pts[j].pos - raw);
    }

    const int nk = 4096;
    Diffeo1D out_map;
    while (r > 1e-6) {
        auto model = [&](double x, double& v, double& d) {
            for (std::size_t i = 0; i < pts.size(); ++i) {
                double off = x - pts[i].pos;
                off -= std::round(off);
                if (std::abs(off) >= 2.0 * r) continue;
                const double av =
                    image[i] + slope[i] * off + (x - off - pts[i].pos) * f.degree();
                const double fv = f(x);
                const double fvs = fv + std::round(av - fv);
                if (std::abs(off) <= r) {
                    v = av;
                    d = slope[i];
                    return;
                }
                const double t = (std::abs(off) - r) / r;
                const double s = t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
                const double sd = 30.0 * t * t * (t - 1.0) * (t - 1.0) / r *
                                  ((off > 0) ? 1.0 : -1.0);
                v = (1.0 - s) * av + s * fvs;
                d = (1.0 - s) * slope[i] + s * f.deriv(x) + sd * (fvs - av);
                return;
            }
            f.eval(x, v, d);
        };
        std::vector<Knot> ks;
        ks.reserve(nk + 1);
        bool mono = true;
        for (int i = 0; i < nk; ++i) {
            const double x = static_cast<double>(i) / nk;
            double v, d;
            model(x, v, d);
            if (!(d * f.degree() > 0.0)) mono = false;
            ks.push_back({x, v, d});
        }
        if (!mono) {
            r *= 0.5;
            continue;
        }
        double v0, d0;
        model(0.0, v0, d0);
        ks.push_back({1.0, v0 + f.degree(), d0});
        if (f.degree() == 1) clamp_monotone(ks);
        auto node = std::make_shared<d1::CircleSplineNode>();
        node->lift = CubicHermite(std::move(ks));
        node->deg = f.degree();
        for (std::size_t i = 0; i < pts.size(); ++i)
            node->collars.push_back({pts[i].pos, image[i], slope[i], r});
        out_map = Diffeo1D(DomainKind::Circle, f.degree(), node);
        break;
    }
    if (!out_map.node())
        throw std::invalid_argument("prepare: could not keep the blended map monotone");

    MorseSmaleCircle ms;
    ms.map = out_map;
    ms.reversing = reversing;
    ms.collar = r;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double v, d;
        cms::iterate_eval(out_map, q_pt, pts[i].pos, v, d);
        pts[i].multiplier = d;  // now the exact product of collar slopes
    }
    ms.points = pts;

    const std::size_t nseg = pts.size();
    auto seg_of = [&](double x) {
        double w = x - pts[0].pos;
        w -= std::floor(w);
        double acc = 0.0;
        for (std::size_t i = 0; i < nseg; ++i) {
            const double len =
                (i + 1 < nseg ? pts[i + 1].pos : pts[0].pos + 1.0) - pts[i].pos;
            if (w < acc + len) return i;
            acc += len;
        }
        return nseg - 1;
    };
    std::vector<int> seg_img(nseg);
    for (std::size_t i = 0; i < nseg; ++i) {
        const double mid = 0.5 * (ms.seg_lo(i) + ms.seg_hi(i));
        seg_img[i] = static_cast<int>(seg_of(out_map(mid)));
    }
    std::vector<int> seen(nseg, 0);
    for (std::size_t i = 0; i < nseg; ++i) {
        if (seen[i]) continue;
        std::vector<int> orb;
        int cur = static_cast<int>(i);
        do {
            seen[cur] = 1;
            orb.push_back(cur);
            cur = seg_img[cur];
        } while (cur != static_cast<int>(i) && orb.size() <= nseg);
        ms.segment_orbits.push_back(std::move(orb));
    }
    ms.q = static_cast<int>(ms.segment_orbits.front().size());
    for (const auto& o : ms.segment_orbits)
        if (static_cast<int>(o.size()) != ms.q)
            throw std::invalid_argument("prepare: segment orbits of unequal period");

    const C1Distance cd = c1_distance(f, out_map, GridSpec(2048));
    ms.c1_from_input = std::max(cd.c0, cd.c1);
    return ms;
}

// ---------------------------------------------------------------------------
// embedding: f^q as the time-one map of an invariant field

struct CircleEmbedding {
    MorseSmaleCircle ms;         // map replaced by the corrected diffeomorphism
    VectorField1D X;
    double flow_residual = 0.0;  // sup |flow(X,1,x) - g^q(x)|
    double invariance = 0.0;     // sup |Dg(x) X(x) - X(g(x))|
    double c1_change = 0.0;      // C1 distance from the input map
};

namespace cms {

// largest radius around orbit point `start` whose q forward images stay
// inside the collars
inline double safe_radius(const MorseSmaleCircle& ms, double start, int q) {
    double delta = ms.collar;
    double expand = 1.0;
    double x = start;
    for (int j = 1; j <= q; ++j) {
        expand *= std::abs(ms.map.deriv(x));
        x = ms.map(x);
        delta = std::min(delta, ms.collar / expand);
    }
    return 0.9 * delta;
}

}  // namespace cms

inline CircleEmbedding embed_circle(const MorseSmaleCircle& ms, double epsilon,
                                    const GridSpec& grid = GridSpec(256)) {
    const Diffeo1D& f = ms.map;
    const int q = ms.q;
    const std::size_t npt = ms.points.size();

    auto patched = std::make_shared<cms::PatchedCircleNode>();
    patched->base = f.node();
    patched->deg = f.degree();
    patched->origin = ms.points[0].pos;

    std::vector<Knot> field_knots;
    // exact-linear field radius on each side of each periodic point
    std::vector<double> rad_left(npt, 0.0), rad_right(npt, 0.0);
    auto upd = [](double& a, double v) { a = (a == 0.0) ? v : std::min(a, v); };

    for (const auto& orbit : ms.segment_orbits) {
        const int rep = orbit.front();
        const double e0 = ms.seg_lo(rep), e1 = ms.seg_hi(rep);
        const double L = e1 - e0;
        const std::size_t i0 = static_cast<std::size_t>(rep);
        const std::size_t i1 = (i0 + 1) % npt;

        double mv, mult0, mult1;
        cms::iterate_eval(f, q, ms.points[i0].pos, mv, mult0);
        cms::iterate_eval(f, q, ms.points[i1].pos, mv, mult1);
        const bool src_left = std::abs(mult0) > 1.0;
        if (src_left == (std::abs(mult1) > 1.0))
            throw std::runtime_error("embed_circle: segment without a source/sink pair");
        const double alpha = src_left ? std::abs(mult0) : std::abs(mult1);
        const double beta = src_left ? std::abs(mult1) : std::abs(mult0);

        // affine chart of the segment sending the source end to 0
        const double h_slope = src_left ? 1.0 / L : -1.0 / L;
        const double h_base = src_left ? e0 : e1;
        auto h_inv = [h_slope, h_base](double y) { return h_base + y / h_slope; };

        const double d_src = cms::safe_radius(ms, src_left ? e0 : e1, q);
        const double d_snk = cms::safe_radius(ms, src_left ? e1 : e0, q);
        const double r0 = 0.9 * d_src / L;
        const double r1 = 0.9 * d_snk / L;

        double tmpv, tmpd;
        cms::iterate_eval(f, q, e0, tmpv, tmpd);
        const double lift_shift = std::round(tmpv - e0);

        auto Rmap = [&](double y, double& v, double& d) {
            double fv, fd;
            cms::iterate_eval(f, q, h_inv(y), fv, fd);
            v = (fv - lift_shift - h_base) * h_slope;
            d = fd;
        };

        DiffeoSpec spec;
        spec.domain = DomainKind::Interval;
        spec.tails = {{0.0, alpha, r0}, {1.0, beta, r1}};
        std::vector<double> ys;
        for (int i = 1; i < 96; ++i) ys.push_back(0.02 + 0.96 * i / 96.0);
        for (int side = 0; side < 2; ++side) {
            const double base = (side == 0) ? r0 : r1;
            for (int j = 1; j < 48; ++j) {
                const double off = base * std::pow(1.3, j);
                if (off >= 0.02) break;
                ys.push_back(side == 0 ? off : 1.0 - off);
            }
        }
        std::sort(ys.begin(), ys.end());
        ys.erase(std::unique(ys.begin(), ys.end(),
                             [](double a, double b) { return b - a < 1e-12; }),
                 ys.end());
        for (double y : ys) {
            if (y <= r0 + 1e-12 || y >= 1.0 - r1 - 1e-12) continue;
            double v, d;
            Rmap(y, v, d);
            spec.knots.push_back({y, v, d});
        }
        Diffeo1D R = build_from_spec(spec);

        FlattenResult fr = flatten_banded(R, 0.5 * epsilon, grid);
        ThetaMap thg = theta_of(fr.g);
        VectorField1D Xh = reconstruct_field_theta(thg, GridSpec(2048));
        Diffeo1D G = fr.g;

        // corrected return map in segment coordinates
        auto g_seg = [G, h_slope, h_base](double z, double& v, double& d) {
            double gv, gd;
            G.eval((z - h_base) * h_slope, gv, gd);
            v = h_base + gv / h_slope;
            d = gd;
        };

        // patch: replace f on the last segment of the chain by g o f^{1-q}
        {
            const int last = orbit.back();
            const double lo = ms.seg_lo(static_cast<std::size_t>(last));
            const double hi = ms.seg_hi(static_cast<std::size_t>(last));
            Diffeo1D fi = inverse(f);
            auto raw = [g_seg, fi, q, e0, L](double x, double& v, double& d) {
                double z = x, dd = 1.0;
                for (int i = 0; i < q - 1; ++i) {
                    double iv, idv;
                    fi.eval(z, iv, idv);
                    z = iv;
                    dd *= idv;
                }
                // the reduced offset lies in [0, L]; centre the branch cut
                // in the complementary gap so roundoff at the segment ends
                // cannot flip it by a whole turn
                const double m = std::round(z - e0 - 0.5 * L);
                double gv, gd;
                g_seg(z - m, gv, gd);
                v = gv + m;
                d = gd * dd;
            };
            // align the lift branch with the base map at the segment edge
            double bv, bd, rv, rd;
            f.eval(lo, bv, bd);
            raw(lo, rv, rd);
            const double off = std::round(bv - rv);
            patched->patches.push_back(
                {lo, hi, [raw, off](double x, double& v, double& d) {
                     raw(x, v, d);
                     v += off;
                 }});
        }

        // invariant field along the chain, sampled uniformly in chart height
        const ChartPtr chart = thg.chart;
        const double K0 = chart->K0();
        const double y_lo = std::max(-32.0 / std::abs(chart->log_alpha()),
                                     std::min(thg.supp_lo, -K0) - 1.0);
        const double y_hi = std::min(32.0 / std::abs(chart->log_beta()),
                                     std::max(thg.supp_hi + 1.0, K0) + 1.0);
        const int nf = std::clamp(static_cast<int>(256.0 * (y_hi - y_lo)), 2048, 32768);
        const double hstep = (y_hi - y_lo) / nf;

        const double lin_src = chart->inverse(y_lo) * L;
        const double lin_snk = (1.0 - chart->inverse(y_hi)) * L;

        for (int j = 0; j < q; ++j) {
            std::vector<double> xs(nf + 1), vals(nf + 1), jac(nf + 1);
            for (int i = 0; i <= nf; ++i) {
                const double y = y_lo + hstep * i;
                const double u = chart->inverse(y);
                const double z = h_inv(u);
                const double Xz = Xh.value(u) / h_slope;
                double fv, fd;
                cms::iterate_eval(f, j, z, fv, fd);
                xs[i] = fv - std::floor(fv);
                vals[i] = fd * Xz;
                jac[i] = fd * chart->inverse_deriv(y) / h_slope;
            }
            for (int i = 0; i <= nf; ++i) {
                double dXdy;
                if (i >= 2 && i + 2 <= nf)
                    dXdy = (8.0 * (vals[i + 1] - vals[i - 1]) -
                            (vals[i + 2] - vals[i - 2])) / (12.0 * hstep);
                else if (i >= 1 && i + 1 <= nf)
                    dXdy = (vals[i + 1] - vals[i - 1]) / (2.0 * hstep);
                else if (i == 0)
                    dXdy = (vals[1] - vals[0]) / hstep;
                else
                    dXdy = (vals[nf] - vals[nf - 1]) / hstep;
                field_knots.push_back({xs[i], vals[i], dXdy / jac[i]});
            }
        }

        // per-side exact-linear radii along the chain
        {
            double rs = lin_src, rk = lin_snk;
            double ps = src_left ? e0 : e1;
            double pk = src_left ? e1 : e0;
            for (int j = 0; j < q; ++j) {
                const std::size_t i_l = static_cast<std::size_t>(orbit[static_cast<std::size_t>(j)]);
                const std::size_t i_r = (i_l + 1) % npt;
                const bool src_is_left =
                    std::abs(cms::wrap_half(ps - ms.points[i_l].pos)) < 1e-9;
                if (src_is_left) {
                    upd(rad_right[i_l], rs);
                    upd(rad_left[i_r], rk);
                } else {
                    upd(rad_right[i_l], rk);
                    upd(rad_left[i_r], rs);
                }
                rs = std::min(rs * std::abs(f.deriv(ps)), ms.collar);
                rk = std::min(rk * std::abs(f.deriv(pk)), ms.collar);
                ps = f(ps);
                pk = f(pk);
            }
        }
    }

    // zeros: one per periodic point, radius the smaller of the two sides;
    // fill the one-sided surplus with exact linear knots so the spline is
    // never interpolated across a point
    std::vector<FieldZero> zeros(npt);
    for (std::size_t i = 0; i < npt; ++i) {
        double mvv, mdd;
        cms::iterate_eval(f, q, ms.points[i].pos, mvv, mdd);
        const double s = std::log(std::abs(mdd));
        const double rl = rad_left[i], rr = rad_right[i];
        if (!(rl > 0.0) || !(rr > 0.0))
            throw std::runtime_error("embed_circle: a periodic point has no field collar");
        const double rmin = std::min(rl, rr);
        zeros[i] = {ms.points[i].pos, s, rmin};
        for (int side = 0; side < 2; ++side) {
            const double rmax = (side == 0) ? rl : rr;
            const double sgn = (side == 0) ? -1.0 : 1.0;
            for (double d = rmin; d < rmax; d *= 1.25) {
                double x = ms.points[i].pos + sgn * d;
                x -= std::floor(x);
                field_knots.push_back({x, s * sgn * d, s});
            }
        }
    }

    // Grow each declared linear radius as far as the sampled field still
    // sits on the linear model.  Only the outer dyadic window of a
    // candidate radius is meaningful: below it the exact tail replaces
    // the spline anyway (and the spline's own relative accuracy degrades
    // towards the zero).  Anchors and travel times then use the closed
    // form at collar scale instead of crawling to the band edge.
    for (auto& z : zeros) {
        std::vector<std::pair<double, double>> dev;  // (distance, relative deviation)
        for (const Knot& k : field_knots) {
            double off = k.x - z.at;
            off -= std::round(off);
            const double a = std::abs(off);
            if (a >= ms.collar || a <= z.radius) continue;
            dev.emplace_back(a, std::abs(k.y - z.slope * off) /
                                    (std::abs(z.slope) * a + 1e-300));
        }
        std::sort(dev.begin(), dev.end());
        // a dyadic window is on the linear model only when every knot in it
        // is; the deviations are genuine field structure (the flattening
        // writes self-similar correction bumps down the collar), so a
        // single off-model knot disqualifies the whole window
        auto clean = [&dev](double lo, double hi) {
            auto b = std::lower_bound(dev.begin(), dev.end(),
                                      std::make_pair(lo, 0.0));
            auto e = std::lower_bound(dev.begin(), dev.end(),
                                      std::make_pair(hi, 0.0));
            for (auto it = b; it != e; ++it)
                if (it->second > 3e-5) return false;
            return true;
        };
        double R = ms.collar;
        while (R > z.radius) {
            double w = R;
            bool ok = true;
            while (w > z.radius) {
                if (!clean(0.5 * w, w)) {
                    ok = false;
                    R = 0.5 * w;
                    break;
                }
                w *= 0.5;
            }
            if (ok) break;
        }
        if (R > z.radius) z.radius = 0.9 * R;
    }

    std::sort(field_knots.begin(), field_knots.end(),
              [](const Knot& a, const Knot& b) { return a.x < b.x; });
    field_knots.erase(std::unique(field_knots.begin(), field_knots.end(),
                                  [](const Knot& a, const Knot& b) {
                                      return b.x - a.x < 1e-13;
                                  }),
                      field_knots.end());
    VectorField1D X(DomainKind::Circle, zeros, CubicHermite(field_knots));

    CircleEmbedding out;
    out.ms = ms;
    out.ms.map = Diffeo1D(DomainKind::Circle, f.degree(), patched);
    out.X = X;

    const int n = grid.resolution;
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / n;
        double gq, gqd;
        cms::iterate_eval(out.ms.map, q, x, gq, gqd);
        out.flow_residual = std::max(
            out.flow_residual, std::abs(cms::wrap_half(flow_map(X, 1.0, x) - gq)));
        double gv, gd;
        out.ms.map.eval(x, gv, gd);
        out.invariance =
            std::max(out.invariance, std::abs(gd * X.value(x) - X.value(gv)));
    }
    const C1Distance cd = c1_distance(f, out.ms.map, GridSpec(2048));
    out.c1_change = std::max(cd.c0, cd.c1);
    return out;
}

// ---------------------------------------------------------------------------
// travel time along a one-dimensional field

// Signed time to flow from a to b (lift coordinates, no zero of X strictly
// between them); exact logarithmic pieces inside the linear tails.
inline double travel_time(const VectorField1D& X, double a, double b) {
    if (a == b) return 0.0;
    std::vector<double> cuts{a, b};
    const double lo = std::min(a, b), hi = std::max(a, b);
    for (const auto& z : X.zeros()) {
        for (double base : {z.at - 1.0, z.at, z.at + 1.0, z.at + 2.0}) {
            for (double c : {base - z.radius, base + z.radius})
                if (c > lo && c < hi) cuts.push_back(c);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    if (a > b) std::reverse(cuts.begin(), cuts.end());
    double t = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double u = cuts[i], v = cuts[i + 1];
        const double mid = 0.5 * (u + v);
        if (const FieldZero* z = X.tail_at(mid - std::floor(mid))) {
            const double ou = X.offset(u - std::floor(u), *z);
            const double ov = X.offset(v - std::floor(v), *z);
            t += std::log(ov / ou) / z->slope;
        } else {
            // the integrand varies on a logarithmic scale near the zeros:
            // refine each half geometrically from its own end, whose
            // distance to the nearest zero may be as small as the radius
            auto quad = [&X](double u_, double v_) {
                return simpson([&X](double x) { return 1.0 / X.value(x); }, u_, v_, 1e-12);
            };
            auto dist = [&X](double x) {
                double best = 1.0;
                const double w = x - std::floor(x);
                for (const auto& z : X.zeros())
                    for (double base : {z.at - 1.0, z.at, z.at + 1.0})
                        best = std::min(best, std::abs(w - base));
                return best;
            };
            auto geom = [&quad](double from, double to, double d0) {
                double acc = 0.0, cur = from, d = std::max(d0, 1e-280);
                const double dir = (to > from) ? 1.0 : -1.0;
                while (std::abs(to - cur) > 2.0 * d) {
                    acc += quad(cur, cur + dir * d);
                    cur += dir * d;
                    d *= 2.0;
                }
                return acc + quad(cur, to);
            };
            const double m = 0.5 * (u + v);
            t += geom(u, m, dist(u));   // refined at the u end
            t -= geom(v, m, dist(v));   // refined at the v end, reversed
        }
    }
    return t;
}

// derivative of the time-t flow map, via the 1-d transport identity
inline double flow_deriv(const VectorField1D& X, double t, double x, double xt) {
    const double vx = X.value(x);
    if (vx != 0.0) return X.value(xt) / vx;
    const FieldZero* z = X.tail_at(x - std::floor(x));
    return z ? std::exp(z->slope * t) : 1.0;
}

// ---------------------------------------------------------------------------
// the symmetry invariant of the two-orbit case

namespace cms {

struct CaseCFrame {
    std::size_t i_src = 0, i_snk = 0, i_src2 = 0;
    double x0 = 0, x1 = 0, x2 = 0;  // source, sink, next source (lift)
    double r = 0;                   // anchor radius, inside the linear collars
};

inline CaseCFrame case_c_frame(const MorseSmaleCircle& ms, const VectorField1D& X) {
    if (ms.reversing)
        throw std::invalid_argument(
            "symmetry invariant: orientation-preserving two-orbit case only");
    const std::size_t npt = ms.points.size();
    if (npt != 2 * static_cast<std::size_t>(ms.q))
        throw std::invalid_argument(
            "symmetry invariant: exactly two periodic orbits required");
    CaseCFrame fr;
    for (std::size_t i = 0; i < npt; ++i)
        if (!ms.points[i].sink) {
            fr.i_src = i;
            break;
        }
    fr.i_snk = (fr.i_src + 1) % npt;
    fr.i_src2 = (fr.i_src + 2) % npt;
    if (!ms.points[fr.i_snk].sink)
        throw std::invalid_argument("symmetry invariant: points do not alternate");
    fr.x0 = ms.points[fr.i_src].pos;
    fr.x1 = ms.points[fr.i_snk].pos;
    while (fr.x1 <= fr.x0) fr.x1 += 1.0;
    fr.x2 = ms.points[fr.i_src2].pos;
    while (fr.x2 <= fr.x1) fr.x2 += 1.0;
    double r = 1.0;
    for (std::size_t i : {fr.i_src, fr.i_snk, fr.i_src2})
        r = std::min(r, X.zeros()[i].radius);
    fr.r = 0.5 * r;
    if (!(fr.r > 0.0))
        throw std::invalid_argument("symmetry invariant: field has no linear collars");
    return fr;
}

// Cumulative time coordinate on one segment between consecutive zeros of
// the field (lift coordinates, no zero strictly inside).  Marching the
// travel time once over a geometric ladder of nodes makes later queries
// local: a time lookup integrates only from the nearest node, and the
// time-t point is found by a bracketed Newton iteration.
struct TimeChart {
    VectorField1D X;
    std::vector<double> xs;  // ascending nodes strictly inside the segment
    std::vector<double> ts;  // travel time from the anchor to each node
    bool increasing = true;  // ts as a function of the node index

    static TimeChart build(const VectorField1D& X, double lo, double hi,
                           double anchor) {
        TimeChart c;
        c.X = X;
        const double mid = 0.5 * (lo + hi);
        std::vector<double>& xs = c.xs;
        for (double d = 1e-12; lo + d < mid; d *= 2.0) xs.push_back(lo + d);
        for (double d = 1e-12; hi - d > mid; d *= 2.0) xs.push_back(hi - d);
        xs.push_back(std::clamp(anchor, lo + 1e-12, hi - 1e-12));
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        c.ts.assign(xs.size(), 0.0);
        for (std::size_t i = 1; i < xs.size(); ++i)
            c.ts[i] = c.ts[i - 1] + travel_time(X, xs[i - 1], xs[i]);
        const auto ia = static_cast<std::size_t>(
            std::lower_bound(xs.begin(), xs.end(), anchor) - xs.begin());
        const double t0 = c.ts[std::min(ia, xs.size() - 1)];
        for (double& t : c.ts) t -= t0;
        c.increasing = c.ts.back() > c.ts.front();
        return c;
    }

    // travel time from the anchor to z
    double time(double z) const {
        z = std::clamp(z, xs.front(), xs.back());
        std::size_t i = static_cast<std::size_t>(
            std::upper_bound(xs.begin(), xs.end(), z) - xs.begin());
        i = (i == 0) ? 0 : i - 1;
        return ts[i] + travel_time(X, xs[i], z);
    }

    // the point at travel time t from the anchor
    double pos(double t) const {
        auto key = [this](double v) { return increasing ? v : -v; };
        t = std::clamp(key(t), key(ts.front()), key(ts.back()));
        std::size_t i = 0;
        {
            std::size_t lo_i = 0, hi_i = ts.size() - 1;
            while (hi_i - lo_i > 1) {
                const std::size_t m = (lo_i + hi_i) / 2;
                (key(ts[m]) <= t ? lo_i : hi_i) = m;
            }
            i = lo_i;
        }
        double a = xs[i], b = xs[i + 1];
        double z = a;
        for (int it = 0; it < 80; ++it) {
            const double err = (increasing ? t : -t) -
                               (ts[i] + travel_time(X, xs[i], z));
            if (std::abs(err) < 1e-13) break;
            const double sgn_err = increasing ? err : -err;
            (sgn_err > 0 ? a : b) = z;
            double step = z + err * X.value(z);
            if (!(step > a && step < b)) step = 0.5 * (a + b);
            z = step;
        }
        return z;
    }
};

}  // namespace cms

inline double symmetry_theta(const MorseSmaleCircle& ms, const VectorField1D& X) {
    const cms::CaseCFrame fr = cms::case_c_frame(ms, X);
    const double r = fr.r;
    const double tp = travel_time(X, fr.x0 + r, fr.x1 - r);
    const double tm = travel_time(X, fr.x2 - r, fr.x1 + r);
    return tp - tm;
}

// ---------------------------------------------------------------------------
// adjusting the symmetry invariant

inline CircleEmbedding adjust_theta(const MorseSmaleCircle& ms, const VectorField1D& X,
                                    double target, double epsilon,
                                    const GridSpec& grid = GridSpec(512)) {
    const cms::CaseCFrame fr = cms::case_c_frame(ms, X);
    const double current = symmetry_theta(ms, X);
    const double delta = target - current;
    const int q = ms.q;
    const Diffeo1D g = ms.map;

    CircleEmbedding out;
    out.ms = ms;
    out.X = X;
    if (std::abs(delta) < 1e-12) return out;

    // window in the middle of the plus segment; the copies on the other
    // plus segments make the slowdown h0-invariant
    const double wl = fr.x0 + 0.25 * (fr.x1 - fr.x0);
    const double wr = fr.x0 + 0.75 * (fr.x1 - fr.x0);
    constexpr double kPi = 3.14159265358979323846;
    auto bump = [wl, wr, kPi](double x, double& v, double& d) {
        const double t = (x - wl) / (wr - wl);
        if (t <= 0.0 || t >= 1.0) {
            v = 0.0;
            d = 0.0;
            return;
        }
        const double s = std::sin(kPi * t);
        v = s * s;
        d = 2.0 * s * std::cos(kPi * t) * kPi / (wr - wl);
    };
    const double mass = simpson(
        [&](double x) {
            double v, d;
            bump(x, v, d);
            return v / X.value(x);
        },
        wl, wr, 1e-12);
    const double c = delta / mass;
    if (c <= -0.9)
        throw std::runtime_error(
            "adjust_theta: target out of reach; the largest theta decrease at this "
            "window is " + std::to_string(0.9 * std::abs(mass)));

    auto h0_inv_pow = [&](int j, double x) {
        for (int i = 0; i < j; ++i) x = flow_map(X, 1.0 / q, invert(g, x));
        return x;
    };

    auto rho = [&](double x, double& v, double& d) {
        v = 1.0;
        d = 0.0;
        for (int j = 0; j < q; ++j) {
            const double z = (j == 0) ? x : h0_inv_pow(j, x);
            double off = z - fr.x0;
            off -= std::floor(off);
            const double zz = fr.x0 + off;
            if (zz > wl && zz < wr) {
                double bv, bd;
                bump(zz, bv, bd);
                const double jacz =
                    (std::abs(X.value(x)) > 1e-12) ? X.value(zz) / X.value(x) : 1.0;
                v = 1.0 + c * bv;
                d = c * bd * jacz;
                return;
            }
        }
    };

    std::vector<Knot> ks;
    for (const Knot& k : X.interior().knots()) {
        double rv, rd;
        rho(k.x, rv, rd);
        ks.push_back({k.x, k.y / rv, (k.dy * rv - k.y * rd) / (rv * rv)});
    }
    VectorField1D X2(DomainKind::Circle, X.zeros(), CubicHermite(std::move(ks)));

    // corrected map: g' = g o Phi_{-1/q} o Phi'_{1/q}
    auto node = std::make_shared<cms::FnCircleNode>();
    const VectorField1D Xold = X;
    node->fn = [g, Xold, X2, q](double x, double& v, double& d) {
        const double z1 = flow_map(X2, 1.0 / q, x);
        const double z2 = flow_map(Xold, -1.0 / q, z1);
        double gv, gd;
        g.eval(z2, gv, gd);
        v = gv;
        d = gd * flow_deriv(Xold, -1.0 / q, z1, z2) * flow_deriv(X2, 1.0 / q, x, z1);
    };
    node->deg = 1;

    out.ms.map = Diffeo1D(DomainKind::Circle, 1, node);
    out.ms.collar = 0.5 * ms.collar;
    out.X = X2;
    const C1Distance cd = c1_distance(ms.map, out.ms.map, grid);
    out.c1_change = std::max(cd.c0, cd.c1);
    if (out.c1_change > epsilon)
        throw std::runtime_error(
            "adjust_theta: perturbation " + std::to_string(out.c1_change) +
            " exceeds epsilon; a theta change of about " +
            std::to_string(std::abs(delta) * epsilon / out.c1_change) +
            " is reachable at this budget");
    return out;
}

// ---------------------------------------------------------------------------
// centralizer classification

struct CentralizerReport {
    std::string group;            // "RxZq" or "RxZqxZ2"
    int q = 1;
    std::optional<double> theta;  // two-orbit orientation-preserving case only
    std::vector<std::pair<std::string, double>> witnesses;
};

inline CentralizerReport classify_centralizer(const MorseSmaleCircle& ms,
                                              const VectorField1D& X,
                                              const GridSpec& grid = GridSpec(512)) {
    const Diffeo1D& g = ms.map;
    const int q = ms.reversing ? 2 : ms.q;
    const std::size_t npt = ms.points.size();
    const std::size_t n_orbits = npt / static_cast<std::size_t>(std::max(1, ms.q));

    CentralizerReport rep;
    rep.q = q;

    auto h0 = [&](double x) { return g(flow_map(X, -1.0 / q, x)); };
    const int n = grid.resolution;

    double w_h0 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / n;
        double z = x;
        for (int j = 0; j < q; ++j) z = h0(z);
        w_h0 = std::max(w_h0, std::abs(cms::wrap_half(z - x)));
    }
    rep.witnesses.emplace_back("h0^q = id", w_h0);

    double w_comm = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / n;
        w_comm = std::max(w_comm, std::abs(cms::wrap_half(h0(g(x)) - g(h0(x)))));
    }
    rep.witnesses.emplace_back("[h0, g] = 0", w_comm);

    for (double t : {0.3, 0.7}) {
        double w = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) / n;
            w = std::max(w, std::abs(cms::wrap_half(flow_map(X, t, g(x)) -
                                                    g(flow_map(X, t, x)))));
        }
        rep.witnesses.emplace_back("[flow(" + std::to_string(t) + "), g] = 0", w);
    }

    if (ms.reversing) {
        rep.group = "RxZq";  // R x Z/2: h0 itself is the reversing involution
        double w_rev = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) / n;
            w_rev = std::max(w_rev, std::abs(cms::wrap_half(h0(h0(x)) - x)));
        }
        rep.witnesses.emplace_back("reversing involution h0^2 = id", w_rev);
        return rep;
    }

    if (n_orbits >= 3) {
        rep.group = "RxZq";
        return rep;
    }

    const double theta = symmetry_theta(ms, X);
    rep.theta = theta;
    if (std::abs(theta) >= 1e-6) {
        rep.group = "RxZq";
        return rep;
    }
    rep.group = "RxZqxZ2";

    // reversing symmetry: flow transport between the anchors of the
    // fundamental pair, extended to the other pairs by conjugation
    const cms::CaseCFrame fr = cms::case_c_frame(ms, X);
    const double mp = fr.x0 + fr.r;
    const double mm = fr.x2 - fr.r;

    std::vector<double> srcs{fr.x0};
    {
        double prev = fr.x0;
        for (std::size_t step = 1; step <= npt; ++step) {
            const std::size_t idx = (fr.i_src + step) % npt;
            if (ms.points[idx].sink) continue;
            double p = ms.points[idx].pos;
            while (p <= prev + 1e-12) p += 1.0;
            srcs.push_back(p);
            prev = p;
        }
    }

    // pair shift of g on the sources, and the power of h0 advancing one pair
    int s_shift = 0;
    {
        const double fx0 = g(fr.x0);
        for (std::size_t i = 0; i < npt; ++i)
            if (std::abs(cms::wrap_half(fx0 - ms.points[i].pos)) < 1e-6) {
                s_shift = static_cast<int>((i + npt - fr.i_src) % npt);
                break;
            }
    }
    const int p_pairs = s_shift / 2;
    int u = 1;
    for (int cand = 1; cand <= q; ++cand)
        if ((cand * p_pairs) % q == 1 % q) {
            u = cand;
            break;
        }

    auto h0b = [&](double x) { return flow_map(X, 1.0 / q, invert(g, x)); };
    auto hp = [&](double x) {
        for (int i = 0; i < u; ++i) x = h0(x);
        return x;
    };
    auto hpb = [&](double x) {
        for (int i = 0; i < u; ++i) x = h0b(x);
        return x;
    };

    // time charts of the fundamental pair of segments make each sigma
    // evaluation local instead of one long quadrature plus one long flow
    const cms::TimeChart Cp = cms::TimeChart::build(X, fr.x0, fr.x1, mp);
    const cms::TimeChart Cm = cms::TimeChart::build(X, fr.x1, fr.x2, mm);
    auto sigma0 = [&](double z) {
        // chart positions stay inside their segment; pin the result to it
        if (z <= fr.x1) {
            const double w = Cm.pos(Cp.time(z));
            return w - std::floor(w - fr.x1);
        }
        const double w = Cp.pos(Cm.time(z));
        return w - std::floor(w - fr.x0);
    };
    auto sigma = [&](double x) {
        double off = x - fr.x0;
        off -= std::floor(off);
        double z = fr.x0 + off;
        int j = 0;
        while (j + 2 < static_cast<int>(srcs.size()) && z > srcs[static_cast<std::size_t>(j) + 1])
            ++j;
        for (int i = 0; i < j; ++i) z = hpb(z);
        double zo = z - fr.x0;
        zo -= std::floor(zo);
        z = std::clamp(fr.x0 + zo, fr.x0 + 1e-12, fr.x2 - 1e-12);
        double r = sigma0(z);
        for (int i = 0; i < j; ++i) r = hp(r);
        return r;
    };

    const int ns = 128;
    double w_invol = 0.0, w_sig = 0.0, w_sig_c1 = 0.0;
    auto near_point = [&](double x) {
        for (const auto& p : ms.points)
            if (std::abs(cms::wrap_half(x - p.pos)) < 1e-4) return true;
        return false;
    };
    for (int i = 0; i < ns; ++i) {
        const double x = static_cast<double>(i) / ns;
        if (near_point(x) || near_point(g(x))) continue;
        const double sx = sigma(x);
        w_invol = std::max(w_invol, std::abs(cms::wrap_half(sigma(sx) - x)));
        const double gx = g(x);
        const double sg = sigma(gx);
        const double gs = g(sx);
        w_sig = std::max(w_sig, std::abs(cms::wrap_half(sg - gs)));
        if (std::abs(X.value(x)) > 1e-9 && std::abs(X.value(gx)) > 1e-9) {
            const double dl = X.value(sg) / X.value(gx) * g.deriv(x);
            const double dr = g.deriv(sx) * X.value(sx) / X.value(x);
            w_sig_c1 = std::max(w_sig_c1, std::abs(dl - dr));
        }
    }
    rep.witnesses.emplace_back("sigma involution", w_invol);
    rep.witnesses.emplace_back("[sigma, g] = 0", w_sig);
    rep.witnesses.emplace_back("[sigma, g] = 0 (C1)", w_sig_c1);
    if (w_invol > 1e-6 || w_sig > 1e-6)
        throw std::runtime_error(
            "classify_centralizer: the reversing symmetry demanded by theta = " +
            std::to_string(theta) + " fails its witness check (defect " +
            std::to_string(std::max(w_invol, w_sig)) + ")");
    return rep;
}

}  // namespace matherkit
