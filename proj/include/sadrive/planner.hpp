#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "sadrive/scene.hpp"
#include "sadrive/tensor.hpp"

namespace sadrive {

// Kinematic sampling bounds.
constexpr double kSpeedMax = 15.0;   // m/s
constexpr double kCurvatureMax = 0.2;  // 1/m
constexpr double kAccelMax = 3.0;    // m/s^2

struct Trajectory {
    enum class Kind { kStraight, kCircle, kClothoid };
    Kind kind = Kind::kStraight;
    double v0 = 0, accel = 0;
    double kappa0 = 0, kappa_rate = 0;     // curvature kappa(s) = kappa0 + kappa_rate*s
    std::vector<Waypoint> waypoints;       // world frame, t = 1..kFutureSteps
};

struct PlanResult {
    Trajectory chosen;
    int index = -1;
    double cost = 0;
    std::vector<double> costs;
};

// Integrates the curve from the given pose; waypoints land on the generating
// curve to well under 1e-6 m (Gauss-Legendre quadrature per step).
Trajectory make_trajectory(Trajectory::Kind kind, const Waypoint& pose, double v0,
                           double accel, double kappa0, double kappa_rate);

// 40% clothoid / 30% circle / 30% straight, parameters within the bounds above.
std::vector<Trajectory> sample_trajectories(const Waypoint& pose, double speed, int n,
                                            std::mt19937_64& rng);

enum class OffGrid { kClamp, kPenalty };

// Per-step bilinear samples of the cost volume C [T, H, W] at the waypoints.
std::vector<double> evaluate_cost_steps(const Trajectory& traj, const Tensor& cost_volume,
                                        const SceneBounds& bounds,
                                        OffGrid policy = OffGrid::kClamp,
                                        double penalty = 100.0);
double evaluate_cost(const Trajectory& traj, const Tensor& cost_volume,
                     const SceneBounds& bounds, OffGrid policy = OffGrid::kClamp,
                     double penalty = 100.0);

// Argmin by cost, ties to the lowest index. Throws on an empty set.
PlanResult select(std::span<const Trajectory> trajectories, const Tensor& cost_volume,
                  const SceneBounds& bounds, OffGrid policy = OffGrid::kClamp,
                  double penalty = 100.0);

void save_trajectory_csv(const std::string& path, const Trajectory& traj,
                         const std::vector<double>& step_costs);

}  // namespace sadrive
