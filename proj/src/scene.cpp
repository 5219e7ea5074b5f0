#include "sadrive/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace sadrive {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLaneWidth = 3.5;
constexpr int kRayCount = 720;
constexpr double kMaxRange = 40.0;
constexpr double kGroundStep = 1.0;
constexpr double kMinHitRange = 0.5;

double wrap_angle(double a) {
    while (a > kPi) a -= 2 * kPi;
    while (a <= -kPi) a += 2 * kPi;
    return a;
}

// First positive intersection parameter of ray (origin, dir) with segment ab.
double ray_segment(const Vec2& origin, const Vec2& dir, const Vec2& a, const Vec2& b) {
    const Vec2 ab = b - a;
    const double denom = dir.cross(ab);
    if (std::abs(denom) < 1e-12) return -1.0;
    const Vec2 ao = a - origin;
    const double t = ao.cross(ab) / denom;   // along ray
    const double u = ao.cross(dir) / denom;  // along segment
    if (t <= 0 || u < 0 || u > 1) return -1.0;
    return t;
}

double ray_box(const Vec2& origin, const Vec2& dir, const OrientedBox& box) {
    const auto c = box.corners();
    double best = -1.0;
    for (int i = 0; i < 4; ++i) {
        const double t = ray_segment(origin, dir, c[static_cast<std::size_t>(i)],
                                     c[static_cast<std::size_t>((i + 1) % 4)]);
        if (t > 0 && (best < 0 || t < best)) best = t;
    }
    return best;
}

OrientedBox inflate(const OrientedBox& b, double margin) {
    return {b.cx, b.cy, b.w + 2 * margin, b.h + 2 * margin, b.theta};
}

OrientedBox ego_box_at(const Waypoint& w) {
    return {w.x, w.y, kAnchorLength, kAnchorWidth, w.theta};
}

}  // namespace

bool SceneBounds::divides_evenly() const {
    if (resolution <= 0) return false;
    const double r = height_m / resolution, c = width_m / resolution;
    return std::abs(r - std::round(r)) < 1e-9 && std::abs(c - std::round(c)) < 1e-9 &&
           std::round(r) > 0 && std::round(c) > 0;
}

bool Scene::on_lane_surface(const Vec2& p) const {
    for (const auto& lane : lanes)
        if (polyline_distance(p, lane.centerline) <= lane.width / 2) return true;
    return false;
}

Scene generate_scene(std::uint64_t seed, Difficulty difficulty, SceneBounds bounds) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(difficulty));
    Scene scene;
    scene.bounds = bounds;
    scene.seed = seed;
    scene.difficulty = difficulty;

    const double half_w = bounds.width_m / 2;

    std::uniform_int_distribution<int> lane_count_dist(2, 4);
    const int n_lanes = lane_count_dist(rng);
    std::uniform_real_distribution<double> road_off_dist(-2.0, 2.0);
    const double road_y = road_off_dist(rng);
    for (int k = 0; k < n_lanes; ++k) {
        Lane lane;
        lane.width = kLaneWidth;
        const double y = road_y + (k - (n_lanes - 1) / 2.0) * kLaneWidth;
        for (double x = -half_w; x <= half_w + 1e-9; x += 4.0)
            lane.centerline.push_back({x, y});
        // lower-index lanes head +x, upper ones -x (two-way road); keep the
        // centerline ordered along the travel direction
        if (k >= (n_lanes + 1) / 2)
            std::reverse(lane.centerline.begin(), lane.centerline.end());
        scene.lanes.push_back(std::move(lane));
    }
    const int fwd_lanes = (n_lanes + 1) / 2;
    auto lane_heading = [&](int k) { return k < fwd_lanes ? 0.0 : kPi; };
    auto lane_y = [&](int k) { return road_y + (k - (n_lanes - 1) / 2.0) * kLaneWidth; };

    // ego on a forward lane, constant speed straight drive
    std::uniform_int_distribution<int> ego_lane_dist(0, fwd_lanes - 1);
    const int ego_lane = ego_lane_dist(rng);
    std::uniform_real_distribution<double> ego_x_dist(-16.0, -4.0);
    std::uniform_real_distribution<double> ego_v_dist(3.0, 8.0);
    const double ego_x0 = ego_x_dist(rng);
    const double ego_y = lane_y(ego_lane);
    const double ego_v = ego_v_dist(rng);
    for (int s = 0; s < kPastSweeps; ++s) {
        const double t = -(kPastSweeps - 1 - s) * kSweepSeconds;
        scene.ego_track.push_back({ego_x0 + ego_v * t, ego_y, 0.0});
    }
    for (int k = 1; k <= kFutureSteps; ++k)
        scene.ego_track.push_back({ego_x0 + ego_v * k * kStepSeconds, ego_y, 0.0});

    int target = 0;
    switch (difficulty) {
        case Difficulty::kSparse: target = std::uniform_int_distribution<int>(1, 5)(rng); break;
        case Difficulty::kUrban: target = std::uniform_int_distribution<int>(6, 15)(rng); break;
        case Difficulty::kDense: target = std::uniform_int_distribution<int>(16, 40)(rng); break;
    }

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> len_dist(4.0, 5.2);
    std::uniform_real_distribution<double> wid_dist(1.8, 2.2);
    std::uniform_real_distribution<double> x_dist(-half_w + 3.0, half_w - 3.0);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    std::uniform_real_distribution<double> v_dist(2.0, 10.0);

    auto ego_future_boxes = [&] {
        std::vector<OrientedBox> out;
        out.push_back(ego_box_at(scene.ego_now()));
        for (int k = 1; k <= kFutureSteps; ++k) out.push_back(ego_box_at(scene.ego_future(k)));
        return out;
    }();

    for (int placed = 0; placed < target;) {
        bool ok = false;
        Actor cand;
        for (int attempt = 0; attempt < 80 && !ok; ++attempt) {
            cand = Actor{};
            cand.length = len_dist(rng);
            cand.width = wid_dist(rng);
            cand.x = x_dist(rng);
            if (u01(rng) < 0.7) {
                const int k = std::uniform_int_distribution<int>(0, n_lanes - 1)(rng);
                cand.y = lane_y(k) + jitter(rng);
                cand.theta = lane_heading(k);
                cand.speed = v_dist(rng);
                cand.kind = ActorKind::kVehicle;
            } else {
                const bool north = u01(rng) < 0.5;
                const double edge = road_y + (north ? 1 : -1) * (n_lanes * kLaneWidth / 2 + 1.3);
                cand.y = edge + jitter(rng);
                cand.theta = u01(rng) < 0.5 ? 0.0 : kPi;
                cand.speed = 0.0;
                cand.kind = ActorKind::kParkedVehicle;
            }
            for (int k = 1; k <= kFutureSteps; ++k) {
                const double t = k * kStepSeconds;
                cand.future.push_back({cand.x + cand.speed * t * std::cos(cand.theta),
                                       cand.y + cand.speed * t * std::sin(cand.theta),
                                       cand.theta});
            }
            ok = true;
            const OrientedBox cb = inflate(cand.box_at(0), 0.5);
            for (const auto& other : scene.actors)
                if (boxes_intersect(cb, other.box_at(0))) ok = false;
            // keep the human-driven trajectory collision-free by construction
            for (int k = 0; k <= kFutureSteps && ok; ++k)
                if (boxes_intersect(inflate(cand.box_at(k), 0.4),
                                    ego_future_boxes[static_cast<std::size_t>(k)]))
                    ok = false;
        }
        if (!ok) break;  // crowded scene, keep what fits
        scene.actors.push_back(std::move(cand));
        ++placed;
    }
    return scene;
}

std::vector<LidarPoint> simulate_lidar(const Scene& scene, int sweep) {
    if (sweep < 0 || sweep >= kPastSweeps)
        throw TensorError("simulate_lidar: sweep out of range: " + std::to_string(sweep));
    const double t = -(kPastSweeps - 1 - sweep) * kSweepSeconds;
    const Waypoint ego = scene.ego_past(sweep);
    const Vec2 origin{ego.x, ego.y};

    std::vector<LidarPoint> points;
    for (int r = 0; r < kRayCount; ++r) {
        const double angle = 2 * kPi * r / kRayCount;
        const Vec2 dir{std::cos(angle), std::sin(angle)};
        double hit = -1.0;
        double hit_len = 0.0;
        for (const auto& actor : scene.actors) {
            const double d = ray_box(origin, dir, actor.box_at_time(t));
            if (d > kMinHitRange && (hit < 0 || d < hit)) {
                hit = d;
                hit_len = actor.length;
            }
        }
        const double free = hit > 0 ? hit : kMaxRange;
        for (double d = kGroundStep; d < free; d += kGroundStep) {
            const Vec2 p = origin + dir * d;
            if (scene.on_lane_surface(p)) points.push_back({p.x, p.y, 0});
        }
        if (hit > 0 && hit <= kMaxRange) {
            const Vec2 p = origin + dir * hit;
            points.push_back({p.x, p.y, 0});
            points.push_back({p.x, p.y, 1});
            if (hit_len > 5.0) points.push_back({p.x, p.y, 2});  // tall vehicle
        }
    }
    return points;
}

Tensor rasterize(const Scene& scene) {
    const auto& b = scene.bounds;
    if (!b.divides_evenly())
        throw TensorError("rasterize: resolution does not evenly divide bounds");
    const int rows = b.rows(), cols = b.cols();
    Tensor grid({kHeightSlices * kPastSweeps + kMapChannels, rows, cols});

    for (int s = 0; s < kPastSweeps; ++s) {
        for (const auto& p : simulate_lidar(scene, s)) {
            if (!b.inside(p.x, p.y)) continue;
            grid.at3(s * kHeightSlices + p.z_slice, b.row_of(p.y), b.col_of(p.x)) = 1.f;
        }
    }

    const int map0 = kHeightSlices * kPastSweeps;
    const auto route = scene.ego_future_track();
    std::vector<Vec2> route_pts;
    route_pts.push_back({scene.ego_now().x, scene.ego_now().y});
    for (const auto& w : route) route_pts.push_back({w.x, w.y});
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const Vec2 c{b.x_of_col(j), b.y_of_row(i)};
            if (scene.on_lane_surface(c)) grid.at3(map0, i, j) = 1.f;
            for (const auto& lane : scene.lanes)
                if (polyline_distance(c, lane.centerline) <= b.resolution / 2) {
                    grid.at3(map0 + 1, i, j) = 1.f;
                    break;
                }
            if (polyline_distance(c, route_pts) <= 1.0) grid.at3(map0 + 2, i, j) = 1.f;
        }
    }
    return grid;
}

std::array<double, kBoxParams> encode_box(const OrientedBox& box, const Vec2& anchor_center) {
    return {(anchor_center.x - box.cx) / kAnchorLength,
            (anchor_center.y - box.cy) / kAnchorWidth,
            std::log(box.w / kAnchorLength),
            std::log(box.h / kAnchorWidth),
            std::sin(-box.theta),
            std::cos(-box.theta)};
}

OrientedBox decode_box(const std::array<double, kBoxParams>& delta, const Vec2& anchor_center) {
    OrientedBox box;
    box.cx = anchor_center.x - delta[0] * kAnchorLength;
    box.cy = anchor_center.y - delta[1] * kAnchorWidth;
    box.w = kAnchorLength * std::exp(delta[2]);
    box.h = kAnchorWidth * std::exp(delta[3]);
    box.theta = wrap_angle(-std::atan2(delta[4], delta[5]));
    return box;
}

DetectionLabels rasterize_labels(const Scene& scene) {
    const auto& b = scene.bounds;
    const int rows = b.rows(), cols = b.cols();
    if (rows % 4 != 0 || cols % 4 != 0)
        throw TensorError("rasterize_labels: grid dims must be divisible by 4");
    const int qr = rows / 4, qc = cols / 4;
    const double qres = b.resolution * 4;

    DetectionLabels labels;
    labels.score = Tensor::zeros({1, qr, qc});
    labels.regression = Tensor::zeros({kBoxParams * (kFutureSteps + 1), qr, qc});
    labels.owner.assign(static_cast<std::size_t>(qr) * qc, -1);

    for (int i = 0; i < qr; ++i) {
        for (int j = 0; j < qc; ++j) {
            const Vec2 center{(j + 0.5) * qres - b.width_m / 2,
                              (i + 0.5) * qres - b.height_m / 2};
            for (std::size_t a = 0; a < scene.actors.size(); ++a) {
                if (!scene.actors[a].box_at(0).contains(center)) continue;
                labels.score.at3(0, i, j) = 1.f;
                labels.owner[static_cast<std::size_t>(i) * qc + j] = static_cast<int>(a);
                for (int step = 0; step <= kFutureSteps; ++step) {
                    const auto delta = encode_box(scene.actors[a].box_at(step), center);
                    for (int d = 0; d < kBoxParams; ++d)
                        labels.regression.at3(step * kBoxParams + d, i, j) =
                            static_cast<float>(delta[static_cast<std::size_t>(d)]);
                }
                break;  // boxes are disjoint at t=0; first hit owns the cell
            }
        }
    }
    return labels;
}

namespace {

const char* kind_name(ActorKind k) {
    return k == ActorKind::kVehicle ? "vehicle" : "parked-vehicle";
}

ActorKind kind_from_name(const std::string& s) {
    if (s == "vehicle") return ActorKind::kVehicle;
    if (s == "parked-vehicle") return ActorKind::kParkedVehicle;
    throw TensorError("unknown actor kind: " + s);
}

}  // namespace

const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::kSparse: return "sparse";
        case Difficulty::kUrban: return "urban";
        case Difficulty::kDense: return "dense";
    }
    return "sparse";
}

Difficulty difficulty_from_name(const std::string& name) {
    if (name == "sparse") return Difficulty::kSparse;
    if (name == "urban") return Difficulty::kUrban;
    if (name == "dense") return Difficulty::kDense;
    throw TensorError("unknown difficulty: " + name);
}

void save_scene(const std::string& path, const Scene& scene) {
    std::ofstream out(path);
    if (!out) throw TensorError("cannot open scene file for writing: " + path);
    out.precision(17);
    out << "sadrive-scene v1\n";
    out << "seed " << scene.seed << "\n";
    out << "difficulty " << difficulty_name(scene.difficulty) << "\n";
    out << "bounds " << scene.bounds.height_m << " " << scene.bounds.width_m << " "
        << scene.bounds.resolution << "\n";
    out << "ego " << scene.ego_track.size() << "\n";
    for (const auto& w : scene.ego_track) out << w.x << " " << w.y << " " << w.theta << "\n";
    out << "lanes " << scene.lanes.size() << "\n";
    for (const auto& lane : scene.lanes) {
        out << lane.width << " " << lane.centerline.size();
        for (const auto& p : lane.centerline) out << " " << p.x << " " << p.y;
        out << "\n";
    }
    out << "actors " << scene.actors.size() << "\n";
    for (const auto& a : scene.actors) {
        out << a.x << " " << a.y << " " << a.length << " " << a.width << " " << a.theta << " "
            << a.speed << " " << kind_name(a.kind);
        for (const auto& w : a.future) out << " " << w.x << " " << w.y << " " << w.theta;
        out << "\n";
    }
    if (!out) throw TensorError("scene write failed: " + path);
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cannot open scene file: " + path);
    std::string line, word;
    std::getline(in, line);
    if (line != "sadrive-scene v1") throw TensorError("bad scene header in " + path);
    Scene scene;
    std::size_t n = 0;
    in >> word >> scene.seed;
    in >> word >> line;
    scene.difficulty = difficulty_from_name(line);
    in >> word >> scene.bounds.height_m >> scene.bounds.width_m >> scene.bounds.resolution;
    in >> word >> n;
    scene.ego_track.resize(n);
    for (auto& w : scene.ego_track) in >> w.x >> w.y >> w.theta;
    in >> word >> n;
    scene.lanes.resize(n);
    for (auto& lane : scene.lanes) {
        std::size_t m = 0;
        in >> lane.width >> m;
        lane.centerline.resize(m);
        for (auto& p : lane.centerline) in >> p.x >> p.y;
    }
    in >> word >> n;
    scene.actors.resize(n);
    for (auto& a : scene.actors) {
        std::string kind;
        in >> a.x >> a.y >> a.length >> a.width >> a.theta >> a.speed >> kind;
        a.kind = kind_from_name(kind);
        a.future.resize(kFutureSteps);
        for (auto& w : a.future) in >> w.x >> w.y >> w.theta;
    }
    if (!in) throw TensorError("truncated scene file: " + path);
    return scene;
}

}  // namespace sadrive
