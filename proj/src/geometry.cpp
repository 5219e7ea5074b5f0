#include "sadrive/geometry.hpp"

#include <algorithm>
#include <limits>

namespace sadrive {

namespace {

// Projection interval of corners onto axis.
std::pair<double, double> project(const std::array<Vec2, 4>& pts, const Vec2& axis) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : pts) {
        const double v = p.dot(axis);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

}  // namespace

bool boxes_intersect(const OrientedBox& a, const OrientedBox& b) {
    const auto ca = a.corners(), cb = b.corners();
    const std::array<Vec2, 4> axes = {
        Vec2{std::cos(a.theta), std::sin(a.theta)},
        Vec2{-std::sin(a.theta), std::cos(a.theta)},
        Vec2{std::cos(b.theta), std::sin(b.theta)},
        Vec2{-std::sin(b.theta), std::cos(b.theta)},
    };
    for (const auto& axis : axes) {
        const auto [alo, ahi] = project(ca, axis);
        const auto [blo, bhi] = project(cb, axis);
        if (ahi < blo || bhi < alo) return false;
    }
    return true;
}

double polygon_area(const std::vector<Vec2>& poly) {
    if (poly.size() < 3) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % poly.size()];
        s += p.cross(q);
    }
    return std::abs(s) / 2;
}

std::vector<Vec2> clip_convex(const std::vector<Vec2>& subject, const std::vector<Vec2>& clip) {
    // clip must be counter-clockwise; callers normalize below
    std::vector<Vec2> out = subject;
    for (std::size_t i = 0; i < clip.size() && !out.empty(); ++i) {
        const Vec2 a = clip[i];
        const Vec2 b = clip[(i + 1) % clip.size()];
        const Vec2 edge = b - a;
        std::vector<Vec2> in;
        in.swap(out);
        for (std::size_t j = 0; j < in.size(); ++j) {
            const Vec2 p = in[j];
            const Vec2 q = in[(j + 1) % in.size()];
            const double sp = edge.cross(p - a);
            const double sq = edge.cross(q - a);
            if (sp >= 0) out.push_back(p);
            if ((sp >= 0) != (sq >= 0)) {
                const double t = sp / (sp - sq);
                out.push_back(p + (q - p) * t);
            }
        }
    }
    return out;
}

namespace {

std::vector<Vec2> ccw_corners(const OrientedBox& b) {
    auto c = b.corners();
    std::vector<Vec2> poly(c.begin(), c.end());
    double s = 0;
    for (std::size_t i = 0; i < poly.size(); ++i)
        s += poly[i].cross(poly[(i + 1) % poly.size()]);
    if (s < 0) std::reverse(poly.begin(), poly.end());
    return poly;
}

}  // namespace

double box_iou(const OrientedBox& a, const OrientedBox& b) {
    const double area_a = a.w * a.h, area_b = b.w * b.h;
    if (area_a <= 0 || area_b <= 0) return 0.0;
    const auto inter_poly = clip_convex(ccw_corners(a), ccw_corners(b));
    const double inter = polygon_area(inter_poly);
    const double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double polyline_distance(const Vec2& p, const std::vector<Vec2>& pts) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const Vec2 a = pts[i], b = pts[i + 1];
        const Vec2 ab = b - a;
        const double len2 = ab.dot(ab);
        double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        best = std::min(best, (p - (a + ab * t)).norm());
    }
    if (pts.size() == 1) best = (p - pts[0]).norm();
    return best;
}

}  // namespace sadrive
