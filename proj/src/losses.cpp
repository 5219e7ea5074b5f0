#include "sadrive/losses.hpp"

#include <algorithm>
#include <cmath>

#include "sadrive/sparse_exec.hpp"

namespace sadrive {

namespace {

struct BilinearTap {
    int idx[4];
    float w[4];
};

// Clamped bilinear sample of channel t at a world waypoint; records the tap so
// the backward pass can scatter into the cost volume.
BilinearTap tap_at(const SceneBounds& bounds, int rows, int cols, int t, const Waypoint& wp) {
    double r = (wp.y + bounds.height_m / 2) / bounds.resolution - 0.5;
    double c = (wp.x + bounds.width_m / 2) / bounds.resolution - 0.5;
    r = std::clamp(r, 0.0, static_cast<double>(rows - 1));
    c = std::clamp(c, 0.0, static_cast<double>(cols - 1));
    const int r0 = static_cast<int>(r), c0 = static_cast<int>(c);
    const int r1 = std::min(r0 + 1, rows - 1), c1 = std::min(c0 + 1, cols - 1);
    const float fr = static_cast<float>(r - r0), fc = static_cast<float>(c - c0);
    BilinearTap tap;
    const int base = t * rows * cols;
    tap.idx[0] = base + r0 * cols + c0;
    tap.idx[1] = base + r0 * cols + c1;
    tap.idx[2] = base + r1 * cols + c0;
    tap.idx[3] = base + r1 * cols + c1;
    tap.w[0] = (1 - fr) * (1 - fc);
    tap.w[1] = (1 - fr) * fc;
    tap.w[2] = fr * (1 - fc);
    tap.w[3] = fr * fc;
    return tap;
}

double sample(const Tensor& cv, const BilinearTap& tap) {
    double s = 0;
    for (int k = 0; k < 4; ++k) s += static_cast<double>(tap.w[k]) * cv.data[tap.idx[k]];
    return s;
}

}  // namespace

bool violates_traffic(const Scene& scene, const Waypoint& w) {
    const Vec2 p{w.x, w.y};
    const Lane* nearest = nullptr;
    double best = 0;
    for (const auto& lane : scene.lanes) {
        const double d = polyline_distance(p, lane.centerline);
        if (!nearest || d < best) {
            nearest = &lane;
            best = d;
        }
    }
    if (!nearest || best > nearest->width / 2) return true;  // off-road
    const Vec2& a = nearest->centerline.front();
    const Vec2& b = nearest->centerline.back();
    const double dot = (b.x - a.x) * std::cos(w.theta) + (b.y - a.y) * std::sin(w.theta);
    return dot < 0;  // headed against the lane's travel direction
}

std::vector<double> plan_margins(const Trajectory& gt, const Trajectory& negative,
                                 const Scene& scene, double v_penalty) {
    if (gt.waypoints.size() != negative.waypoints.size())
        throw TensorError("plan_margins: waypoint count mismatch");
    std::vector<double> out(gt.waypoints.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        const Waypoint& g = gt.waypoints[t];
        const Waypoint& n = negative.waypoints[t];
        out[t] = std::hypot(g.x - n.x, g.y - n.y);
        if (violates_traffic(scene, n)) out[t] += v_penalty;
    }
    return out;
}

Tensor planning_loss(Tape& tape, const Tensor& cost_volume, const Trajectory& gt,
                     std::span<const Trajectory> negatives, const Scene& scene,
                     const LossWeights& weights) {
    if (negatives.empty()) throw TensorError("planning_loss: no negatives");
    const int rows = scene.bounds.rows(), cols = scene.bounds.cols();
    if (cost_volume.shape != std::vector<int>{kFutureSteps, rows, cols})
        throw TensorError("planning_loss: cost volume is " + cost_volume.shape_str());
    if (static_cast<int>(gt.waypoints.size()) != kFutureSteps)
        throw TensorError("planning_loss: ground truth needs " +
                          std::to_string(kFutureSteps) + " waypoints");

    std::vector<BilinearTap> gt_taps(kFutureSteps);
    std::vector<double> gt_cost(kFutureSteps);
    for (int t = 0; t < kFutureSteps; ++t) {
        gt_taps[t] = tap_at(scene.bounds, rows, cols, t, gt.waypoints[t]);
        gt_cost[t] = sample(cost_volume, gt_taps[t]);
    }

    double worst = 0;
    int worst_i = 0;
    std::vector<BilinearTap> worst_taps;
    std::vector<bool> worst_active;
    for (std::size_t i = 0; i < negatives.size(); ++i) {
        const auto margin = plan_margins(gt, negatives[i], scene, weights.v_penalty);
        std::vector<BilinearTap> taps(kFutureSteps);
        std::vector<bool> active(kFutureSteps);
        double total = 0;
        for (int t = 0; t < kFutureSteps; ++t) {
            taps[t] = tap_at(scene.bounds, rows, cols, t, negatives[i].waypoints[t]);
            const double violation = gt_cost[t] - sample(cost_volume, taps[t]) + margin[t];
            active[t] = violation > 0;
            if (active[t]) total += violation;
        }
        if (i == 0 || total > worst) {
            worst = total;
            worst_i = static_cast<int>(i);
            worst_taps = std::move(taps);
            worst_active = std::move(active);
        }
    }
    (void)worst_i;

    Tensor loss({1});
    loss.data[0] = static_cast<float>(worst);
    if (cost_volume.node >= 0) {
        const int cn = cost_volume.node;
        loss.node = tape.push(
            1, [cn, gt_taps, worst_taps, worst_active](Tape& t, const std::vector<float>& gy) {
                auto& g = t.grad(cn);
                for (int step = 0; step < kFutureSteps; ++step) {
                    if (!worst_active[step]) continue;
                    for (int k = 0; k < 4; ++k) {
                        g[gt_taps[step].idx[k]] += gy[0] * gt_taps[step].w[k];
                        g[worst_taps[step].idx[k]] -= gy[0] * worst_taps[step].w[k];
                    }
                }
            });
    }
    return loss;
}

Tensor cls_loss_map(Tape& tape, const Tensor& pred_score, const Tensor& target_score) {
    return binary_cross_entropy(tape, pred_score, target_score);
}

Tensor reg_loss_map(Tape& tape, const Tensor& pred_regression, const DetectionLabels& labels) {
    if (!pred_regression.same_shape(labels.regression))
        throw TensorError("reg_loss_map: prediction is " + pred_regression.shape_str() +
                          ", labels are " + labels.regression.shape_str());
    const int ch = pred_regression.dim(0);
    const int h = pred_regression.dim(1), w = pred_regression.dim(2);
    const int cells = h * w;
    if (static_cast<int>(labels.owner.size()) != cells)
        throw TensorError("reg_loss_map: owner map size mismatch");

    Tensor out({1, h, w});
    for (int cell = 0; cell < cells; ++cell) {
        if (labels.owner[cell] < 0) continue;
        double s = 0;
        for (int c = 0; c < ch; ++c) {
            const float d = pred_regression.data[c * cells + cell] -
                            labels.regression.data[c * cells + cell];
            s += std::abs(d) < 1.f ? 0.5 * d * d : std::abs(d) - 0.5;
        }
        out.data[cell] = static_cast<float>(s);
    }
    if (pred_regression.node >= 0) {
        const int pn = pred_regression.node;
        std::vector<float> diff(pred_regression.data.size(), 0.f);
        for (int cell = 0; cell < cells; ++cell) {
            if (labels.owner[cell] < 0) continue;
            for (int c = 0; c < ch; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * cells + cell;
                const float d = pred_regression.data[i] - labels.regression.data[i];
                diff[i] = std::abs(d) < 1.f ? d : (d > 0 ? 1.f : -1.f);
            }
        }
        out.node = tape.push(out.numel(), [pn, diff = std::move(diff), ch, cells](
                                              Tape& t, const std::vector<float>& gy) {
            auto& g = t.grad(pn);
            for (int c = 0; c < ch; ++c)
                for (int cell = 0; cell < cells; ++cell)
                    g[c * cells + cell] += diff[c * cells + cell] * gy[cell];
        });
    }
    return out;
}

Tensor reweight(Tape& tape, const Tensor& loss_map, const AttentionMask& mask,
                float gamma0, float gamma1) {
    const Tensor attended = sum_all(tape, mask_mul(tape, loss_map, mask.hard));
    const Tensor everywhere = sum_all(tape, loss_map);
    return add(tape, scale(tape, attended, gamma1), scale(tape, everywhere, gamma0));
}

Tensor total_loss(Tape& tape, const LossParts& parts, const LossWeights& weights,
                  const ParamSet* params) {
    Tensor total = add(tape, scale(tape, parts.plan, weights.lambda_plan),
                       add(tape, scale(tape, parts.cls, weights.lambda_cls),
                           add(tape, scale(tape, parts.reg, weights.lambda_reg),
                               scale(tape, parts.attn, weights.lambda_attn))));
    if (params && weights.weight_decay != 0.f) {
        std::vector<Tensor> bound;
        bound.reserve(params->items().size());
        for (const auto& [name, tensor] : params->items()) bound.push_back(*tensor);
        total = add(tape, total, scale(tape, sum_squares(tape, bound), weights.weight_decay));
    }
    return total;
}

}  // namespace sadrive
