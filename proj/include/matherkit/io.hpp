#pragma once

// JSON map specifications and report/CSV writers for the batch tool.
//
// Map spec formats (all numbers IEEE doubles in decimal text):
//   one-dimensional:
//     {"domain": "interval"|"circle",
//      "tails": [{"at": x, "slope": m, "radius": r}, ...],
//      "knots": [[x, y, dy], ...],
//      "degree": 1|-1}
//   sphere (north-south map given by its conformal germs, winding class,
//   and lifted torus bumps; bump depths select pairwise distinct sheets):
//     {"domain": "sphere",
//      "north": {"angle": a, "ratio": alpha},
//      "south": {"angle": b, "ratio": beta},
//      "winding": n,
//      "bumps": [{"center": [r, s], "radius": R,
//                 "shift": [dr, ds], "depth": k}, ...]}

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "matherkit/diffeo1d.hpp"
#include "matherkit/mather1d.hpp"
#include "matherkit/sphere.hpp"

namespace matherkit {

using nlohmann::json;

// shortest round-trip decimal text for a double, locale-independent
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v)
        for (int prec = 1; prec < 17; ++prec) {
            char probe[40];
            std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
            std::sscanf(probe, "%lf", &back);
            if (back == v) return probe;
        }
    return buf;
}

// ---------------------------------------------------------------------------
// spec parsing

inline DiffeoSpec diffeo_spec_from_json(const json& j) {
    DiffeoSpec spec;
    const std::string dom = j.at("domain").get<std::string>();
    if (dom == "interval")
        spec.domain = DomainKind::Interval;
    else if (dom == "circle")
        spec.domain = DomainKind::Circle;
    else
        throw std::invalid_argument("diffeo spec: unknown domain \"" + dom + "\"");
    for (const json& t : j.at("tails")) {
        Tail tail;
        tail.at = t.at("at").get<double>();
        tail.slope = t.at("slope").get<double>();
        tail.radius = t.at("radius").get<double>();
        spec.tails.push_back(tail);
    }
    if (j.contains("knots"))
        for (const json& k : j.at("knots")) {
            if (!k.is_array() || k.size() != 3)
                throw std::invalid_argument("diffeo spec: knot must be [x, y, dy]");
            spec.knots.push_back(
                {k[0].get<double>(), k[1].get<double>(), k[2].get<double>()});
        }
    spec.degree = j.value("degree", 1);
    return spec;
}

inline json diffeo_spec_to_json(const DiffeoSpec& spec) {
    json j;
    j["domain"] = spec.domain == DomainKind::Interval ? "interval" : "circle";
    j["tails"] = json::array();
    for (const Tail& t : spec.tails)
        j["tails"].push_back({{"at", t.at}, {"slope", t.slope}, {"radius", t.radius}});
    j["knots"] = json::array();
    for (const Knot& k : spec.knots) j["knots"].push_back({k.x, k.y, k.dy});
    j["degree"] = spec.degree;
    return j;
}

struct SphereSpec {
    ConformalMap north;
    ConformalMap south;
    int winding = 0;
    std::vector<TorusBump> bumps;
    std::vector<int> depths;
};

inline SphereSpec sphere_spec_from_json(const json& j) {
    SphereSpec spec;
    const json& n = j.at("north");
    const json& s = j.at("south");
    spec.north = ConformalMap(n.at("angle").get<double>(), n.at("ratio").get<double>());
    spec.south = ConformalMap(s.at("angle").get<double>(), s.at("ratio").get<double>());
    spec.winding = j.at("winding").get<int>();
    if (j.contains("bumps"))
        for (const json& b : j.at("bumps")) {
            TorusBump bump;
            bump.center = {b.at("center")[0].get<double>(),
                           b.at("center")[1].get<double>()};
            bump.radius = b.at("radius").get<double>();
            bump.shift = {b.at("shift")[0].get<double>(),
                          b.at("shift")[1].get<double>()};
            spec.bumps.push_back(bump);
            spec.depths.push_back(b.value("depth", static_cast<int>(spec.depths.size())));
        }
    return spec;
}

inline json sphere_spec_to_json(const SphereSpec& spec) {
    json j;
    j["domain"] = "sphere";
    j["north"] = {{"angle", spec.north.angle}, {"ratio", spec.north.ratio}};
    j["south"] = {{"angle", spec.south.angle}, {"ratio", spec.south.ratio}};
    j["winding"] = spec.winding;
    j["bumps"] = json::array();
    for (std::size_t i = 0; i < spec.bumps.size(); ++i) {
        const TorusBump& b = spec.bumps[i];
        j["bumps"].push_back({{"center", {b.center.x, b.center.y}},
                              {"radius", b.radius},
                              {"shift", {b.shift.x, b.shift.y}},
                              {"depth", spec.depths[i]}});
    }
    return j;
}

// Realize the spec: the suspension of the two germs with the declared
// winding, composed with each bump lifted on its own sheet below the
// linear south collar.  The sheet cut avoids the bump support.
inline SphereDiffeo build_sphere(const SphereSpec& spec) {
    SphereDiffeo f(spec.north, spec.south, spec.winding);
    const double s0 = std::ceil(f.south_s(f.south_clear_u())) + 1.0;
    for (std::size_t i = 0; i < spec.bumps.size(); ++i) {
        const TorusBump& b = spec.bumps[i];
        const double cut = sph::wrap1(b.center.y + b.radius + norm(b.shift) + 0.02);
        f.push_lift({factor_from_bump(b), spec.winding,
                     s0 + 2.0 * spec.depths[i] + cut});
    }
    return f;
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open input file: " + path);
    return json::parse(in);  // throws json::parse_error with line/column
}

// ---------------------------------------------------------------------------
// writers

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << text;
}

inline void write_json_report(const std::string& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline void write_invariant_csv(const std::string& path, const MatherInvariant& inv) {
    std::ostringstream out;
    out << "x,Delta(x),DDelta(x)\n";
    for (std::size_t i = 0; i < inv.x.size(); ++i)
        out << fmt_double(inv.x[i]) << ',' << fmt_double(inv.value[i]) << ','
            << fmt_double(inv.deriv[i]) << '\n';
    write_text(path, out.str());
}

inline void write_field1d_csv(const std::string& path, const VectorField1D& X,
                              const GridSpec& grid) {
    std::ostringstream out;
    out << "x,V(x)\n";
    const int N = grid.resolution;
    const bool circle = X.domain() == DomainKind::Circle;
    for (int i = 0; i <= (circle ? N - 1 : N); ++i) {
        const double x = static_cast<double>(i) / N;
        out << fmt_double(x) << ',' << fmt_double(X.value(x)) << '\n';
    }
    write_text(path, out.str());
}

inline void write_torus_csv(const std::string& path, const TorusGridMap& d) {
    std::ostringstream out;
    out << "r,s,r_image,s_image\n";
    for (int j = 0; j < d.resolution; ++j)
        for (int i = 0; i < d.resolution; ++i) {
            const Vec2 p = d.node(i, j);
            const Vec2 q = d.at(i, j);
            out << fmt_double(p.x) << ',' << fmt_double(p.y) << ','
                << fmt_double(q.x) << ',' << fmt_double(q.y) << '\n';
        }
    write_text(path, out.str());
}

// sample a plane-chart vector field on [-extent, extent]^2
template <typename FieldFn>
inline void write_field2d_csv(const std::string& path, const FieldFn& field,
                              double extent, int resolution) {
    std::ostringstream out;
    out << "x,y,Vx,Vy\n";
    for (int j = 0; j <= resolution; ++j)
        for (int i = 0; i <= resolution; ++i) {
            const double x = -extent + 2.0 * extent * i / resolution;
            const double y = -extent + 2.0 * extent * j / resolution;
            const Vec2 v = field(Vec2{x, y});
            out << fmt_double(x) << ',' << fmt_double(y) << ','
                << fmt_double(v.x) << ',' << fmt_double(v.y) << '\n';
        }
    write_text(path, out.str());
}

}  // namespace matherkit
