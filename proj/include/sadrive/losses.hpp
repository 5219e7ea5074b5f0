#pragma once

#include <span>

#include "sadrive/attention.hpp"
#include "sadrive/checkpoint.hpp"
#include "sadrive/planner.hpp"
#include "sadrive/scene.hpp"

namespace sadrive {

struct LossWeights {
    float lambda_plan = 0.001f;
    float lambda_cls = 1.0f;
    float lambda_reg = 0.5f;
    float lambda_attn = 1e-6f;
    float weight_decay = 0.f;
    float gamma0 = 0.1f;
    float gamma1 = 0.9f;
    double v_penalty = 1.5;
};

// Off-road, or headed against the nearest lane's travel direction.
bool violates_traffic(const Scene& scene, const Waypoint& w);

// Per-step margin for one negative: L2 waypoint distance plus the traffic
// violation penalty.
std::vector<double> plan_margins(const Trajectory& gt, const Trajectory& negative,
                                 const Scene& scene, double v_penalty);

// Max-margin planning loss over the negatives; gradients flow into the cost
// volume through the bilinear waypoint samples of the worst negative.
Tensor planning_loss(Tape& tape, const Tensor& cost_volume, const Trajectory& gt,
                     std::span<const Trajectory> negatives, const Scene& scene,
                     const LossWeights& weights);

// Per-cell binary cross-entropy, predictions clamped to [1e-7, 1-1e-7].
Tensor cls_loss_map(Tape& tape, const Tensor& pred_score, const Tensor& target_score);

// Per-cell smooth-L1 over the 6*(T+1) regression components, zero where no
// actor owns the cell.
Tensor reg_loss_map(Tape& tape, const Tensor& pred_regression, const DetectionLabels& labels);

// gamma1 * sum(A .* L) + gamma0 * sum(L); straight-through gradient to the mask.
Tensor reweight(Tape& tape, const Tensor& loss_map, const AttentionMask& mask,
                float gamma0, float gamma1);

struct LossParts {
    Tensor plan, cls, reg, attn;  // scalars; attn = sparsity_loss(mask)
};

Tensor total_loss(Tape& tape, const LossParts& parts, const LossWeights& weights,
                  const ParamSet* params);

}  // namespace sadrive
