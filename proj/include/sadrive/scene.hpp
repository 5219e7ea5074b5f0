#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sadrive/geometry.hpp"
#include "sadrive/tensor.hpp"

namespace sadrive {

// Planning horizon and input-sweep constants shared across modules.
constexpr int kFutureSteps = 6;      // T, at 0.5 s each (3 s horizon)
constexpr double kStepSeconds = 0.5;
constexpr int kPastSweeps = 10;      // T'
constexpr double kSweepSeconds = 0.1;
constexpr int kHeightSlices = 3;     // Z
constexpr int kMapChannels = 3;      // M: lane surface, centerline, ego route
constexpr double kAnchorLength = 4.5;
constexpr double kAnchorWidth = 2.0;
constexpr int kBoxParams = 6;        // delta vector length

struct Waypoint {
    double x = 0, y = 0, theta = 0;
};

enum class ActorKind { kVehicle, kParkedVehicle };

struct Actor {
    double x = 0, y = 0;       // center, meters
    double length = 0;         // extent along heading (w in the delta encoding)
    double width = 0;          // lateral extent (h in the delta encoding)
    double theta = 0;          // radians, in (-pi, pi]
    double speed = 0;          // m/s along heading
    ActorKind kind = ActorKind::kVehicle;
    std::vector<Waypoint> future;  // exactly kFutureSteps entries

    OrientedBox box_at(int step) const {  // step 0 = now, 1..T = future
        if (step == 0) return {x, y, length, width, theta};
        const auto& w = future[static_cast<std::size_t>(step - 1)];
        return {w.x, w.y, length, width, w.theta};
    }
    // Constant-velocity extrapolation for past sweep times (t <= 0).
    OrientedBox box_at_time(double t) const {
        return {x + speed * t * std::cos(theta), y + speed * t * std::sin(theta),
                length, width, theta};
    }
};

struct Lane {
    std::vector<Vec2> centerline;
    double width = 3.5;
};

struct SceneBounds {
    double height_m = 48.0, width_m = 48.0;
    double resolution = 0.5;  // meters per cell
    int rows() const { return static_cast<int>(height_m / resolution + 0.5); }
    int cols() const { return static_cast<int>(width_m / resolution + 0.5); }
    bool divides_evenly() const;
    bool inside(double x, double y) const {
        return x >= -width_m / 2 && x < width_m / 2 && y >= -height_m / 2 && y < height_m / 2;
    }
    // world -> cell (row i from y, col j from x); caller checks inside()
    int row_of(double y) const { return static_cast<int>(std::floor((y + height_m / 2) / resolution)); }
    int col_of(double x) const { return static_cast<int>(std::floor((x + width_m / 2) / resolution)); }
    double y_of_row(double i) const { return (i + 0.5) * resolution - height_m / 2; }
    double x_of_col(double j) const { return (j + 0.5) * resolution - width_m / 2; }
};

enum class Difficulty { kSparse, kUrban, kDense };

struct Scene {
    std::vector<Waypoint> ego_track;  // kPastSweeps past (last at t=0) + kFutureSteps future
    std::vector<Actor> actors;
    std::vector<Lane> lanes;
    SceneBounds bounds;
    std::uint64_t seed = 0;
    Difficulty difficulty = Difficulty::kSparse;

    const Waypoint& ego_now() const { return ego_track[kPastSweeps - 1]; }
    Waypoint ego_past(int sweep) const { return ego_track[static_cast<std::size_t>(sweep)]; }
    Waypoint ego_future(int step) const {  // step 1..T
        return ego_track[static_cast<std::size_t>(kPastSweeps - 1 + step)];
    }
    std::vector<Waypoint> ego_future_track() const {
        return {ego_track.begin() + kPastSweeps, ego_track.end()};
    }
    bool on_lane_surface(const Vec2& p) const;
};

struct LidarPoint {
    double x = 0, y = 0;
    int z_slice = 0;
};

struct DetectionLabels {
    Tensor score;       // [1, H/4, W/4], values in {0,1}
    Tensor regression;  // [6*(T+1), H/4, W/4]
    std::vector<int> owner;  // per cell, actor index or -1
};

Scene generate_scene(std::uint64_t seed, Difficulty difficulty, SceneBounds bounds = {});

std::vector<LidarPoint> simulate_lidar(const Scene& scene, int sweep);

// (Z*T' + M) x H x W occupancy + map channels; throws TensorError if the
// resolution does not evenly divide the bounds.
Tensor rasterize(const Scene& scene);

DetectionLabels rasterize_labels(const Scene& scene);

// Delta encoding of a box against the single anchor at a quarter-res cell.
std::array<double, kBoxParams> encode_box(const OrientedBox& box, const Vec2& anchor_center);
OrientedBox decode_box(const std::array<double, kBoxParams>& delta, const Vec2& anchor_center);

// `sadrive-scene v1` text round trip.
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

const char* difficulty_name(Difficulty d);
Difficulty difficulty_from_name(const std::string& name);

}  // namespace sadrive
