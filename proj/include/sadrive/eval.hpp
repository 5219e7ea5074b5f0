#pragma once

#include <array>
#include <string>
#include <vector>

#include "sadrive/planner.hpp"
#include "sadrive/scene.hpp"
#include "sadrive/tensor.hpp"

namespace sadrive {

constexpr std::array<double, 3> kMapIouThresholds = {0.3, 0.5, 0.7};

struct MetricsReport {
    std::array<double, kFutureSteps> l2_per_step{};
    double planning_l2_at_3s = 0;      // meters
    double collision_rate_pct = 0;     // % of scenes
    double lane_violation_pct = 0;     // % of scenes
    std::array<double, 3> map_full{};      // AP at IoU 0.3 / 0.5 / 0.7
    std::array<double, 3> map_attended{};
    double sparsity = 0;               // fraction of inactive attention cells
    double dense_flops = 0, sparse_flops = 0;
    int scenes = 0;
};

// Per-step Euclidean waypoint distance; the headline metric is the last entry.
std::vector<double> planning_l2(const Trajectory& pred, const Trajectory& gt);

// Ego box along the planned trajectory against every actor's ground-truth
// future track, any timestep.
bool has_collision(const Trajectory& pred, const Scene& scene);

// Any ego-box corner off the drivable lane surface at any step.
bool has_lane_violation(const Trajectory& pred, const Scene& scene);

struct Detection {
    OrientedBox box;
    double score = 0;
};

// Cells above the score threshold decode to boxes at step `step` of the
// regression output; greedy IoU suppression keeps the highest-score boxes.
std::vector<Detection> extract_detections(const Tensor& score_map, const Tensor& regression,
                                          const SceneBounds& bounds, int step,
                                          double score_threshold = 0.5,
                                          double nms_iou = 0.5);

// Greedy score-ordered matching on exact rotated-box IoU; 11-point
// interpolated area under precision/recall.
double average_precision(std::vector<Detection> detections,
                         const std::vector<OrientedBox>& gts, double iou_threshold);

std::array<double, 3> detection_map(const std::vector<Detection>& detections,
                                    const std::vector<OrientedBox>& gts);

// Ground truths whose center cell is active in the mask [1, mh, mw] covering
// `bounds`; with any_overlap, boxes touching any active cell's rectangle count.
std::vector<OrientedBox> attended_subset(const std::vector<OrientedBox>& gts,
                                         const Tensor& mask, const SceneBounds& bounds,
                                         bool any_overlap = false);

void save_metrics_csv(const std::string& path, const MetricsReport& report);
std::string format_metrics_table(const MetricsReport& report);

}  // namespace sadrive
