#pragma once

// Cubic Hermite interpolation on a non-uniform knot grid, with a
// Fritsch-Carlson style clamp for strictly monotone data.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace matherkit {

struct Knot {
    double x;
    double y;
    double dy;
};

// Piecewise cubic with prescribed values and first derivatives at the
// knots.  Evaluation outside [front, back] extrapolates linearly with the
// boundary derivative.
class CubicHermite {
public:
    CubicHermite() = default;

    explicit CubicHermite(std::vector<Knot> knots) : knots_(std::move(knots)) {
        if (knots_.size() < 2)
            throw std::invalid_argument("CubicHermite: need at least 2 knots");
        for (std::size_t i = 1; i < knots_.size(); ++i)
            if (!(knots_[i].x > knots_[i - 1].x))
                throw std::invalid_argument(
                    "CubicHermite: knot abscissae must be strictly increasing at index " +
                    std::to_string(i));
    }

    double front() const { return knots_.front().x; }
    double back() const { return knots_.back().x; }
    std::size_t size() const { return knots_.size(); }
    const std::vector<Knot>& knots() const { return knots_; }

    double value(double x) const {
        const Seg s = segment(x);
        return s.y0 + s.t * (s.d0 * s.h +
               s.t * ((3 * s.slope - 2 * s.d0 - s.d1) * s.h +
               s.t * (s.d0 + s.d1 - 2 * s.slope) * s.h));
    }

    double deriv(double x) const {
        const Seg s = segment(x);
        return s.d0 + s.t * (2 * (3 * s.slope - 2 * s.d0 - s.d1) +
               3 * s.t * (s.d0 + s.d1 - 2 * s.slope));
    }

    void value_and_deriv(double x, double& v, double& d) const {
        const Seg s = segment(x);
        const double a = 3 * s.slope - 2 * s.d0 - s.d1;
        const double b = s.d0 + s.d1 - 2 * s.slope;
        v = s.y0 + s.t * (s.d0 * s.h + s.t * (a * s.h + s.t * b * s.h));
        d = s.d0 + s.t * (2 * a + 3 * s.t * b);
    }

private:
    struct Seg {
        double y0, d0, d1, slope, h, t;
    };

    Seg segment(double x) const {
        const std::size_t n = knots_.size();
        if (x <= knots_.front().x) {
            // linear extrapolation
            return Seg{knots_.front().y, knots_.front().dy, knots_.front().dy,
                       knots_.front().dy, x - knots_.front().x, 1.0};
        }
        if (x >= knots_.back().x) {
            return Seg{knots_.back().y, knots_.back().dy, knots_.back().dy,
                       knots_.back().dy, x - knots_.back().x, 1.0};
        }
        auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                                   [](double v, const Knot& k) { return v < k.x; });
        const std::size_t i = static_cast<std::size_t>(it - knots_.begin()) - 1;
        const Knot& a = knots_[i];
        const Knot& b = knots_[std::min(i + 1, n - 1)];
        const double h = b.x - a.x;
        return Seg{a.y, a.dy, b.dy, (b.y - a.y) / h, h, (x - a.x) / h};
    }

    std::vector<Knot> knots_;
};

// Clamp knot derivatives so that the Hermite interpolant of strictly
// increasing data stays monotone (m in [0, 3*secant] on both sides of
// every knot).  Returns the largest relative adjustment applied.
inline double clamp_monotone(std::vector<Knot>& knots) {
    double worst = 0.0;
    const std::size_t n = knots.size();
    for (std::size_t i = 0; i < n; ++i) {
        double cap = std::numeric_limits<double>::infinity();
        if (i > 0)
            cap = std::min(cap, 3.0 * (knots[i].y - knots[i - 1].y) /
                                    (knots[i].x - knots[i - 1].x));
        if (i + 1 < n)
            cap = std::min(cap, 3.0 * (knots[i + 1].y - knots[i].y) /
                                    (knots[i + 1].x - knots[i].x));
        const double m = knots[i].dy;
        double clamped = std::clamp(m, 0.0, std::max(cap, 0.0));
        if (clamped != m) {
            worst = std::max(worst, std::abs(m - clamped) / std::max(1.0, std::abs(m)));
            knots[i].dy = clamped;
        }
    }
    return worst;
}

}  // namespace matherkit
