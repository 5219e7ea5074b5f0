#pragma once

#include <array>
#include <cmath>
#include <vector>

namespace sadrive {

struct Vec2 {
    double x = 0, y = 0;
    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
};

// Box with w extending along the heading and h lateral.
struct OrientedBox {
    double cx = 0, cy = 0, w = 0, h = 0, theta = 0;

    std::array<Vec2, 4> corners() const {
        const double c = std::cos(theta), s = std::sin(theta);
        const double hw = w / 2, hh = h / 2;
        auto rot = [&](double lx, double ly) {
            return Vec2{cx + lx * c - ly * s, cy + lx * s + ly * c};
        };
        return {rot(hw, hh), rot(-hw, hh), rot(-hw, -hh), rot(hw, -hh)};
    }

    bool contains(const Vec2& p) const {
        const double c = std::cos(theta), s = std::sin(theta);
        const double dx = p.x - cx, dy = p.y - cy;
        const double lx = dx * c + dy * s, ly = -dx * s + dy * c;
        return std::abs(lx) <= w / 2 && std::abs(ly) <= h / 2;
    }
};

// Separating-axis test for two oriented boxes (touching counts as overlap).
bool boxes_intersect(const OrientedBox& a, const OrientedBox& b);

double polygon_area(const std::vector<Vec2>& poly);

// Sutherland-Hodgman clip of a convex polygon against a convex polygon.
std::vector<Vec2> clip_convex(const std::vector<Vec2>& subject, const std::vector<Vec2>& clip);

// Exact rotated-box IoU via convex clipping.
double box_iou(const OrientedBox& a, const OrientedBox& b);

// Distance from p to the polyline through pts.
double polyline_distance(const Vec2& p, const std::vector<Vec2>& pts);

}  // namespace sadrive
