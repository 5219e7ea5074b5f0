#include "sadrive/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sadrive {

namespace {

// 16-point Gauss-Legendre on [-1, 1], positive half.
constexpr double kGlNodes[8] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
constexpr double kGlWeights[8] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

double clamp_speed(double v) { return std::clamp(v, 0.0, kSpeedMax); }

// Distance covered by time t with v(t) = clamp(v0 + a*t, 0, v_max).
double arc_length(double v0, double a, double t) {
    v0 = clamp_speed(v0);
    if (a == 0) return v0 * t;
    const double bound = a > 0 ? kSpeedMax : 0.0;
    const double t_hit = (bound - v0) / a;
    if (t <= t_hit) return v0 * t + 0.5 * a * t * t;
    return v0 * t_hit + 0.5 * a * t_hit * t_hit + bound * (t - t_hit);
}

double heading_at(const Waypoint& pose, double k0, double kr, double s) {
    return pose.theta + k0 * s + 0.5 * kr * s * s;
}

}  // namespace

Trajectory make_trajectory(Trajectory::Kind kind, const Waypoint& pose, double v0,
                           double accel, double kappa0, double kappa_rate) {
    Trajectory traj;
    traj.kind = kind;
    traj.v0 = clamp_speed(v0);
    traj.accel = accel;
    traj.kappa0 = kind == Trajectory::Kind::kStraight ? 0.0 : kappa0;
    traj.kappa_rate = kind == Trajectory::Kind::kClothoid ? kappa_rate : 0.0;

    traj.waypoints.reserve(kFutureSteps);
    double x = pose.x, y = pose.y, s_prev = 0;
    for (int t = 1; t <= kFutureSteps; ++t) {
        const double s = arc_length(traj.v0, traj.accel, t * kStepSeconds);
        const double mid = 0.5 * (s_prev + s), half = 0.5 * (s - s_prev);
        for (int q = 0; q < 8; ++q) {
            for (const double sq : {mid - half * kGlNodes[q], mid + half * kGlNodes[q]}) {
                const double th = heading_at(pose, traj.kappa0, traj.kappa_rate, sq);
                x += half * kGlWeights[q] * std::cos(th);
                y += half * kGlWeights[q] * std::sin(th);
            }
        }
        traj.waypoints.push_back({x, y, heading_at(pose, traj.kappa0, traj.kappa_rate, s)});
        s_prev = s;
    }
    return traj;
}

std::vector<Trajectory> sample_trajectories(const Waypoint& pose, double speed, int n,
                                            std::mt19937_64& rng) {
    if (n < 1) throw TensorError("sample_trajectories: need n >= 1");
    const double v0 = clamp_speed(speed);
    std::uniform_real_distribution<double> accel_dist(-kAccelMax, kAccelMax);
    std::uniform_real_distribution<double> kappa_dist(-kCurvatureMax, kCurvatureMax);
    const int n_clothoid = static_cast<int>(std::lround(0.4 * n));
    const int n_circle = static_cast<int>(std::lround(0.3 * n));

    std::vector<Trajectory> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const Trajectory::Kind kind = i < n_clothoid     ? Trajectory::Kind::kClothoid
                                      : i < n_clothoid + n_circle ? Trajectory::Kind::kCircle
                                                           : Trajectory::Kind::kStraight;
        const double a = accel_dist(rng);
        double k0 = 0, kr = 0;
        if (kind != Trajectory::Kind::kStraight) k0 = kappa_dist(rng);
        if (kind == Trajectory::Kind::kClothoid) {
            // keep |kappa(s)| <= kappa_max over the whole horizon
            const double s_end = arc_length(v0, a, kFutureSteps * kStepSeconds);
            if (s_end > 1e-9) {
                std::uniform_real_distribution<double> rate_dist(
                    (-kCurvatureMax - k0) / s_end, (kCurvatureMax - k0) / s_end);
                kr = rate_dist(rng);
            }
        }
        out.push_back(make_trajectory(kind, pose, v0, a, k0, kr));
    }
    return out;
}

std::vector<double> evaluate_cost_steps(const Trajectory& traj, const Tensor& cost_volume,
                                        const SceneBounds& bounds, OffGrid policy,
                                        double penalty) {
    const int rows = bounds.rows(), cols = bounds.cols();
    if (cost_volume.shape != std::vector<int>{kFutureSteps, rows, cols})
        throw TensorError("evaluate_cost: cost volume is " + cost_volume.shape_str() +
                          ", bounds expect [" + std::to_string(kFutureSteps) + "," +
                          std::to_string(rows) + "," + std::to_string(cols) + "]");
    if (static_cast<int>(traj.waypoints.size()) != kFutureSteps)
        throw TensorError("evaluate_cost: trajectory has " +
                          std::to_string(traj.waypoints.size()) + " waypoints");

    std::vector<double> costs(kFutureSteps);
    for (int t = 0; t < kFutureSteps; ++t) {
        const Waypoint& w = traj.waypoints[t];
        // fractional cell coordinates: inverse of y_of_row / x_of_col
        double r = (w.y + bounds.height_m / 2) / bounds.resolution - 0.5;
        double c = (w.x + bounds.width_m / 2) / bounds.resolution - 0.5;
        const bool off = r < 0 || r > rows - 1 || c < 0 || c > cols - 1;
        if (off && policy == OffGrid::kPenalty) {
            costs[t] = penalty;
            continue;
        }
        r = std::clamp(r, 0.0, static_cast<double>(rows - 1));
        c = std::clamp(c, 0.0, static_cast<double>(cols - 1));
        const int r0 = static_cast<int>(r), c0 = static_cast<int>(c);
        const int r1 = std::min(r0 + 1, rows - 1), c1 = std::min(c0 + 1, cols - 1);
        const double fr = r - r0, fc = c - c0;
        costs[t] =
            (1 - fr) * ((1 - fc) * cost_volume.at3(t, r0, c0) + fc * cost_volume.at3(t, r0, c1)) +
            fr * ((1 - fc) * cost_volume.at3(t, r1, c0) + fc * cost_volume.at3(t, r1, c1));
    }
    return costs;
}

double evaluate_cost(const Trajectory& traj, const Tensor& cost_volume,
                     const SceneBounds& bounds, OffGrid policy, double penalty) {
    double total = 0;
    for (double c : evaluate_cost_steps(traj, cost_volume, bounds, policy, penalty))
        total += c;
    return total;
}

PlanResult select(std::span<const Trajectory> trajectories, const Tensor& cost_volume,
                  const SceneBounds& bounds, OffGrid policy, double penalty) {
    if (trajectories.empty()) throw TensorError("select: no trajectories");
    PlanResult result;
    result.costs.reserve(trajectories.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const double c = evaluate_cost(trajectories[i], cost_volume, bounds, policy, penalty);
        result.costs.push_back(c);
        if (result.index < 0 || c < result.cost) {
            result.index = static_cast<int>(i);
            result.cost = c;
        }
    }
    result.chosen = trajectories[result.index];
    return result;
}

void save_trajectory_csv(const std::string& path, const Trajectory& traj,
                         const std::vector<double>& step_costs) {
    if (step_costs.size() != traj.waypoints.size())
        throw TensorError("save_trajectory_csv: costs/waypoints size mismatch");
    std::ofstream out(path);
    if (!out) throw TensorError("save_trajectory_csv: cannot open " + path);
    out.precision(17);
    out << "t,x,y,theta,cost_t\n";
    for (std::size_t t = 0; t < traj.waypoints.size(); ++t) {
        const Waypoint& w = traj.waypoints[t];
        out << (t + 1) << ',' << w.x << ',' << w.y << ',' << w.theta << ','
            << step_costs[t] << '\n';
    }
}

}  // namespace sadrive
