#include "sadrive/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sadrive {

std::vector<double> planning_l2(const Trajectory& pred, const Trajectory& gt) {
    if (pred.waypoints.size() != gt.waypoints.size())
        throw TensorError("planning_l2: waypoint count mismatch");
    std::vector<double> out(pred.waypoints.size());
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] = std::hypot(pred.waypoints[t].x - gt.waypoints[t].x,
                            pred.waypoints[t].y - gt.waypoints[t].y);
    return out;
}

bool has_collision(const Trajectory& pred, const Scene& scene) {
    for (int t = 1; t <= kFutureSteps; ++t) {
        const Waypoint& w = pred.waypoints[static_cast<std::size_t>(t - 1)];
        const OrientedBox ego{w.x, w.y, kAnchorLength, kAnchorWidth, w.theta};
        for (const Actor& actor : scene.actors)
            if (boxes_intersect(ego, actor.box_at(t))) return true;
    }
    return false;
}

bool has_lane_violation(const Trajectory& pred, const Scene& scene) {
    for (const Waypoint& w : pred.waypoints) {
        const OrientedBox ego{w.x, w.y, kAnchorLength, kAnchorWidth, w.theta};
        for (const Vec2& corner : ego.corners())
            if (!scene.on_lane_surface(corner)) return true;
    }
    return false;
}

std::vector<Detection> extract_detections(const Tensor& score_map, const Tensor& regression,
                                          const SceneBounds& bounds, int step,
                                          double score_threshold, double nms_iou) {
    if (score_map.ndim() != 3 || score_map.dim(0) != 1)
        throw TensorError("extract_detections: score map must be [1,h,w]");
    const int h = score_map.dim(1), w = score_map.dim(2);
    if (regression.shape != std::vector<int>{kBoxParams * (kFutureSteps + 1), h, w})
        throw TensorError("extract_detections: regression is " + regression.shape_str());
    if (step < 0 || step > kFutureSteps)
        throw TensorError("extract_detections: step out of range");
    const double qres = bounds.height_m / h;
    if (std::abs(bounds.width_m / w - qres) > 1e-9)
        throw TensorError("extract_detections: grid does not cover the bounds");

    std::vector<Detection> raw;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double s = score_map.at3(0, i, j);
            if (s <= score_threshold) continue;
            const Vec2 center{(j + 0.5) * qres - bounds.width_m / 2,
                              (i + 0.5) * qres - bounds.height_m / 2};
            std::array<double, kBoxParams> delta;
            for (int d = 0; d < kBoxParams; ++d)
                delta[static_cast<std::size_t>(d)] =
                    regression.at3(step * kBoxParams + d, i, j);
            raw.push_back({decode_box(delta, center), s});
        }
    }
    std::stable_sort(raw.begin(), raw.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const Detection& d : raw) {
        bool suppressed = false;
        for (const Detection& k : kept)
            if (box_iou(d.box, k.box) > nms_iou) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

double average_precision(std::vector<Detection> detections,
                         const std::vector<OrientedBox>& gts, double iou_threshold) {
    if (gts.empty()) return 0.0;
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> matched(gts.size(), false);
    std::vector<int> tp(detections.size(), 0);
    for (std::size_t d = 0; d < detections.size(); ++d) {
        int best = -1;
        double best_iou = iou_threshold;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (matched[g]) continue;
            const double iou = box_iou(detections[d].box, gts[g]);
            if (iou >= best_iou) {
                best_iou = iou;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            matched[static_cast<std::size_t>(best)] = true;
            tp[d] = 1;
        }
    }
    // precision/recall along the ranked list, then 11-point interpolation
    std::vector<double> precision(detections.size()), recall(detections.size());
    int hits = 0;
    for (std::size_t d = 0; d < detections.size(); ++d) {
        hits += tp[d];
        precision[d] = static_cast<double>(hits) / static_cast<double>(d + 1);
        recall[d] = static_cast<double>(hits) / static_cast<double>(gts.size());
    }
    double ap = 0;
    for (int k = 0; k <= 10; ++k) {
        const double r = k / 10.0;
        double p = 0;
        for (std::size_t d = 0; d < detections.size(); ++d)
            if (recall[d] >= r) p = std::max(p, precision[d]);
        ap += p / 11.0;
    }
    return ap;
}

std::array<double, 3> detection_map(const std::vector<Detection>& detections,
                                    const std::vector<OrientedBox>& gts) {
    std::array<double, 3> out{};
    for (std::size_t i = 0; i < kMapIouThresholds.size(); ++i)
        out[i] = average_precision(detections, gts, kMapIouThresholds[i]);
    return out;
}

std::vector<OrientedBox> attended_subset(const std::vector<OrientedBox>& gts,
                                         const Tensor& mask, const SceneBounds& bounds,
                                         bool any_overlap) {
    if (mask.ndim() != 3 || mask.dim(0) != 1)
        throw TensorError("attended_subset: mask must be [1,mh,mw]");
    const int mh = mask.dim(1), mw = mask.dim(2);
    const double cell_h = bounds.height_m / mh, cell_w = bounds.width_m / mw;
    std::vector<OrientedBox> out;
    for (const OrientedBox& gt : gts) {
        bool keep = false;
        if (any_overlap) {
            for (int i = 0; i < mh && !keep; ++i)
                for (int j = 0; j < mw && !keep; ++j) {
                    if (mask.at3(0, i, j) == 0.f) continue;
                    const OrientedBox cell{(j + 0.5) * cell_w - bounds.width_m / 2,
                                           (i + 0.5) * cell_h - bounds.height_m / 2,
                                           cell_w, cell_h, 0};
                    keep = boxes_intersect(gt, cell);
                }
        } else {
            const int i = static_cast<int>(std::floor((gt.cy + bounds.height_m / 2) / cell_h));
            const int j = static_cast<int>(std::floor((gt.cx + bounds.width_m / 2) / cell_w));
            keep = i >= 0 && i < mh && j >= 0 && j < mw && mask.at3(0, i, j) != 0.f;
        }
        if (keep) out.push_back(gt);
    }
    return out;
}

void save_metrics_csv(const std::string& path, const MetricsReport& r) {
    std::ofstream out(path);
    if (!out) throw TensorError("save_metrics_csv: cannot open " + path);
    out.precision(10);
    out << "metric,value\n";
    for (int t = 0; t < kFutureSteps; ++t)
        out << "l2_at_" << (t + 1) * kStepSeconds << "s," << r.l2_per_step[t] << "\n";
    out << "planning_l2_at_3s," << r.planning_l2_at_3s << "\n"
        << "collision_rate_pct," << r.collision_rate_pct << "\n"
        << "lane_violation_pct," << r.lane_violation_pct << "\n";
    for (std::size_t i = 0; i < kMapIouThresholds.size(); ++i)
        out << "map_full_" << kMapIouThresholds[i] << "," << r.map_full[i] << "\n";
    for (std::size_t i = 0; i < kMapIouThresholds.size(); ++i)
        out << "map_attended_" << kMapIouThresholds[i] << "," << r.map_attended[i] << "\n";
    out << "sparsity," << r.sparsity << "\n"
        << "dense_flops," << r.dense_flops << "\n"
        << "sparse_flops," << r.sparse_flops << "\n"
        << "scenes," << r.scenes << "\n";
}

std::string format_metrics_table(const MetricsReport& r) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(3);
    out << "FLOPs(dense)  FLOPs(sparse)  Sparsity%  L2@3s(m)  Collision%  LaneViol%\n";
    out << std::scientific;
    out.precision(3);
    out << r.dense_flops << "     " << r.sparse_flops << "      ";
    out.setf(std::ios::fixed, std::ios::floatfield);
    out.precision(2);
    out << 100.0 * r.sparsity << "      ";
    out.precision(3);
    out << r.planning_l2_at_3s << "     " << r.collision_rate_pct << "       "
        << r.lane_violation_pct << "\n";
    out << "mAP full (0.3/0.5/0.7):     " << r.map_full[0] << " / " << r.map_full[1]
        << " / " << r.map_full[2] << "\n";
    out << "mAP attended (0.3/0.5/0.7): " << r.map_attended[0] << " / " << r.map_attended[1]
        << " / " << r.map_attended[2] << "\n";
    return out.str();
}

}  // namespace sadrive
