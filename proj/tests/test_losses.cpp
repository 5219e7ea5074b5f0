#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "sadrive/losses.hpp"

using namespace sadrive;

namespace {

// a straight two-lane road through the origin, ego lane heading +x
Scene road_scene() {
    Scene scene;
    scene.bounds.height_m = 16;
    scene.bounds.width_m = 16;
    scene.bounds.resolution = 1.0;
    Lane fwd, rev;
    for (double x = -8; x <= 8; x += 4) fwd.centerline.push_back({x, -1.75});
    for (double x = 8; x >= -8; x -= 4) rev.centerline.push_back({x, 1.75});
    scene.lanes = {fwd, rev};
    return scene;
}

Trajectory fixed_trajectory(std::initializer_list<Waypoint> pts) {
    Trajectory t;
    t.waypoints = pts;
    return t;
}

}  // namespace

TEST_CASE("traffic violation: off-road and wrong-way") {
    const Scene scene = road_scene();
    CHECK_FALSE(violates_traffic(scene, {0, -1.75, 0}));   // own lane, forward
    CHECK(violates_traffic(scene, {0, -1.75, std::numbers::pi}));       // own lane, backward
    CHECK(violates_traffic(scene, {0, 6.0, 0}));           // off-road
    CHECK(violates_traffic(scene, {0, 1.75, 0}));          // oncoming lane, forward
    CHECK_FALSE(violates_traffic(scene, {0, 1.75, std::numbers::pi}));  // oncoming lane, backward
}

TEST_CASE("margins are L2 plus the violation penalty") {
    const Scene scene = road_scene();
    const Trajectory gt =
        fixed_trajectory({{0, -1.75, 0}, {1, -1.75, 0}, {2, -1.75, 0},
                          {3, -1.75, 0}, {4, -1.75, 0}, {5, -1.75, 0}});
    Trajectory neg = gt;
    neg.waypoints[2].x += 3.0;   // on-road offset
    neg.waypoints[4].y = 6.0;    // off-road
    const auto m = plan_margins(gt, neg, scene, 1.5);
    CHECK(m[0] == doctest::Approx(0.0));
    CHECK(m[2] == doctest::Approx(3.0));
    CHECK(m[4] == doctest::Approx(std::hypot(0.0, 6.0 + 1.75) + 1.5));
    CHECK_THROWS_AS(plan_margins(gt, fixed_trajectory({{0, 0, 0}}), scene, 1.5),
                    TensorError);
}

TEST_CASE("planning loss is zero when margins are satisfied") {
    const Scene scene = road_scene();
    const Trajectory gt =
        fixed_trajectory({{-1.5, -1.75, 0}, {-0.5, -1.75, 0}, {0.5, -1.75, 0},
                          {1.5, -1.75, 0}, {2.5, -1.75, 0}, {3.5, -1.75, 0}});
    Trajectory neg = gt;
    for (auto& w : neg.waypoints) w.y = 5.5;  // clearly elsewhere
    // huge cost at the negative's cells, zero at gt
    Tensor cv = Tensor::zeros({kFutureSteps, 16, 16});
    for (int t = 0; t < kFutureSteps; ++t)
        for (int c = 0; c < 16; ++c)
            for (int r = 12; r < 16; ++r) cv.at3(t, r, c) = 1000.f;
    Tape tape;
    std::vector<Trajectory> negs = {neg};
    const Tensor loss = planning_loss(tape, cv, gt, negs, scene, {});
    CHECK(loss.data[0] == 0.f);
    CHECK_THROWS_AS(planning_loss(tape, cv, gt, std::span<const Trajectory>{}, scene, {}),
                    TensorError);
}

TEST_CASE("uniform 0.5 violation over 6 steps sums to 3") {
    Scene scene = road_scene();
    scene.lanes.clear();  // everything off-road: violation at gt and neg alike
    const SceneBounds& b = scene.bounds;
    Trajectory gt, neg;
    for (int t = 0; t < kFutureSteps; ++t) {
        gt.waypoints.push_back({b.x_of_col(3), b.y_of_row(5), 0});
        neg.waypoints.push_back({b.x_of_col(10), b.y_of_row(5), 0});
    }
    // c_t = 1 at gt cells, c_t(neg) = margin + 0.5 above the gap
    const double l2 = b.x_of_col(10) - b.x_of_col(3);
    const double margin = l2 + 1.5;
    Tensor cv = Tensor::zeros({kFutureSteps, 16, 16});
    for (int t = 0; t < kFutureSteps; ++t) {
        cv.at3(t, 5, 3) = 1.f;
        cv.at3(t, 5, 10) = static_cast<float>(1.0 + margin - 0.5);
    }
    Tape tape;
    std::vector<Trajectory> negs = {neg};
    const Tensor loss = planning_loss(tape, cv, gt, negs, scene, {});
    CHECK(loss.data[0] == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("planning loss max equals the exhaustive per-negative oracle") {
    const Scene scene = road_scene();
    std::mt19937_64 rng(41);
    const Waypoint pose{-6, -1.75, 0};
    const Trajectory gt = make_trajectory(Trajectory::Kind::kStraight, pose, 4, 0, 0, 0);
    const auto negs = sample_trajectories(pose, 4, 50, rng);
    const Tensor cv = Tensor::randn(rng, {kFutureSteps, 16, 16}, 1.f);
    Tape tape;
    const LossWeights weights;
    const Tensor loss = planning_loss(tape, cv, gt, negs, scene, weights);

    const auto gt_costs = evaluate_cost_steps(gt, cv, scene.bounds);
    double best = 0;
    for (const auto& neg : negs) {
        const auto neg_costs = evaluate_cost_steps(neg, cv, scene.bounds);
        const auto margin = plan_margins(gt, neg, scene, weights.v_penalty);
        double total = 0;
        for (int t = 0; t < kFutureSteps; ++t)
            total += std::max(0.0, gt_costs[t] - neg_costs[t] + margin[t]);
        best = std::max(best, total);
    }
    CHECK(loss.data[0] == doctest::Approx(best).epsilon(1e-5));
    CHECK(loss.data[0] >= 0.f);
}

TEST_CASE("constant cost shift leaves the active negatives unchanged") {
    const Scene scene = road_scene();
    std::mt19937_64 rng(43);
    const Waypoint pose{-6, -1.75, 0};
    const Trajectory gt = make_trajectory(Trajectory::Kind::kStraight, pose, 4, 0, 0, 0);
    const auto negs = sample_trajectories(pose, 4, 30, rng);
    const Tensor cv = Tensor::randn(rng, {kFutureSteps, 16, 16}, 1.f);
    Tensor shifted = cv;
    for (float& v : shifted.data) v += 2.5f;
    Tape ta, tb;
    const Tensor la = planning_loss(ta, cv, gt, negs, scene, {});
    const Tensor lb = planning_loss(tb, shifted, gt, negs, scene, {});
    // per-step hinge terms depend only on cost differences
    CHECK(la.data[0] == doctest::Approx(lb.data[0]).epsilon(1e-4));
}

TEST_CASE("planning loss gradient passes finite differences") {
    const Scene scene = road_scene();
    std::mt19937_64 rng(47);
    const Waypoint pose{-6, -1.75, 0};
    const Trajectory gt = make_trajectory(Trajectory::Kind::kStraight, pose, 4, 0, 0, 0);
    const auto negs = sample_trajectories(pose, 4, 20, rng);
    Tensor cv = Tensor::randn(rng, {kFutureSteps, 16, 16}, 1.f);
    const auto report = grad_check(
        [&](Tape& tape, Tensor& in) {
            return scale(tape, planning_loss(tape, in, gt, negs, scene, {}), 0.1f);
        },
        cv, 1e-2, 1e-3);
    INFO("max_rel_error=", report.max_rel_error, " skipped=", report.skipped);
    CHECK(report.passed);
}

TEST_CASE("classification loss map closed forms") {
    Tape tape;
    const Tensor half = Tensor::full({1, 4, 4}, 0.5f);
    const Tensor target = Tensor::zeros({1, 4, 4});
    const Tensor map = cls_loss_map(tape, half, target);
    for (float v : map.data) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Tensor match({1, 4, 4});
    Tensor t2({1, 4, 4});
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> bit(0, 1);
    for (int i = 0; i < 16; ++i) {
        const float y = static_cast<float>(bit(rng));
        match.data[i] = std::clamp(y, 1e-6f, 1.f - 1e-6f);
        t2.data[i] = y;
    }
    const Tensor near_zero = cls_loss_map(tape, match, t2);
    for (float v : near_zero.data) CHECK(v < 2e-6f);

    // high-precision oracle on random values
    std::uniform_real_distribution<float> unit(0.01f, 0.99f);
    Tensor y({1, 4, 4}), t3({1, 4, 4});
    for (int i = 0; i < 16; ++i) {
        y.data[i] = unit(rng);
        t3.data[i] = static_cast<float>(bit(rng));
    }
    const Tensor m3 = cls_loss_map(tape, y, t3);
    for (int i = 0; i < 16; ++i) {
        const double yy = y.data[i], tt = t3.data[i];
        const double expect = -tt * std::log(yy) - (1 - tt) * std::log(1 - yy);
        CHECK(m3.data[i] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("regression loss map closed forms") {
    const int ch = kBoxParams * (kFutureSteps + 1);
    DetectionLabels labels;
    labels.regression = Tensor::zeros({ch, 3, 3});
    labels.owner.assign(9, -1);
    labels.owner[4] = 0;
    std::mt19937_64 rng(7);
    for (float& v : labels.regression.data) v = std::uniform_real_distribution<float>(-1, 1)(rng);

    Tape tape;
    const Tensor exact = labels.regression;
    const Tensor zero_map = reg_loss_map(tape, exact, labels);
    for (float v : zero_map.data) CHECK(v == 0.f);

    Tensor off = labels.regression;
    off.data[2 * 9 + 4] += 0.5f;  // one component at the owned cell
    off.data[0 * 9 + 0] += 100.f;  // unowned cell, must not count
    const Tensor map = reg_loss_map(tape, off, labels);
    CHECK(map.data[4] == doctest::Approx(0.125).epsilon(1e-6));
    for (int i = 0; i < 9; ++i)
        if (i != 4) CHECK(map.data[i] == 0.f);

    CHECK_THROWS_AS(reg_loss_map(tape, Tensor::zeros({ch, 2, 2}), labels), TensorError);
}

TEST_CASE("regression loss gradient passes finite differences") {
    const int ch = kBoxParams * (kFutureSteps + 1);
    DetectionLabels labels;
    labels.regression = Tensor::zeros({ch, 3, 3});
    labels.owner.assign(9, -1);
    labels.owner[1] = 2;
    labels.owner[7] = 0;
    std::mt19937_64 rng(9);
    for (float& v : labels.regression.data)
        v = std::uniform_real_distribution<float>(-1, 1)(rng);
    Tensor pred = Tensor::randn(rng, {ch, 3, 3}, 1.f);
    const auto report = grad_check(
        [&](Tape& tape, Tensor& in) {
            return scale(tape, sum_all(tape, reg_loss_map(tape, in, labels)), 0.1f);
        },
        pred, 1e-2, 1e-3);
    INFO("max_rel_error=", report.max_rel_error, " skipped=", report.skipped);
    CHECK(report.passed);
}

TEST_CASE("reweight closed forms and linearity") {
    std::mt19937_64 rng(11);
    Tensor map = Tensor::randn(rng, {1, 4, 4}, 1.f);
    for (float& v : map.data) v = std::abs(v);
    double total = 0;
    for (float v : map.data) total += v;

    AttentionMask ones;
    ones.hard = Tensor::full({1, 4, 4}, 1.f);
    AttentionMask zeros;
    zeros.hard = Tensor::zeros({1, 4, 4});

    Tape tape;
    CHECK(reweight(tape, map, ones, 0.1f, 0.9f).data[0] ==
          doctest::Approx(total).epsilon(1e-5));
    CHECK(reweight(tape, map, zeros, 0.1f, 0.9f).data[0] ==
          doctest::Approx(0.1 * total).epsilon(1e-5));

    // gamma1 = 1 with a mask avoiding every loss cell kills the signal
    AttentionMask avoid = zeros;
    CHECK(reweight(tape, map, avoid, 0.f, 1.f).data[0] == 0.f);

    Tensor scaled = map;
    for (float& v : scaled.data) v *= 3.f;
    AttentionMask some;
    some.hard = Tensor::zeros({1, 4, 4});
    some.hard.data[3] = some.hard.data[9] = 1.f;
    const float base = reweight(tape, map, some, 0.1f, 0.9f).data[0];
    const float tripled = reweight(tape, scaled, some, 0.1f, 0.9f).data[0];
    CHECK(tripled == doctest::Approx(3.f * base).epsilon(1e-5));
}

TEST_CASE("total loss arithmetic and gradient") {
    Tape tape;
    LossParts parts;
    parts.plan = Tensor::full({1}, 1.f);
    parts.cls = Tensor::full({1}, 1.f);
    parts.reg = Tensor::full({1}, 1.f);
    parts.attn = Tensor::zeros({1});
    LossWeights weights;
    weights.lambda_attn = 1e-6f;
    const Tensor t = total_loss(tape, parts, weights, nullptr);
    CHECK(t.data[0] == doctest::Approx(1.501).epsilon(1e-6));

    LossParts zero;
    zero.plan = zero.cls = zero.reg = zero.attn = Tensor::zeros({1});
    CHECK(total_loss(tape, zero, weights, nullptr).data[0] == 0.f);

    // weight decay picks up the parameter norm
    Tensor w = Tensor::full({2, 2}, 2.f);
    ParamSet params;
    params.add("w", &w);
    weights.weight_decay = 0.5f;
    const Tensor with_decay = total_loss(tape, zero, weights, &params);
    CHECK(with_decay.data[0] == doctest::Approx(0.5 * 16.0).epsilon(1e-6));

    std::mt19937_64 rng(13);
    Tensor x = Tensor::randn(rng, {1}, 1.f);
    const auto report = grad_check(
        [&](Tape& tape2, Tensor& in) {
            LossParts p;
            p.plan = in;
            p.cls = mul(tape2, in, in);
            p.reg = in;
            p.attn = in;
            LossWeights lw;
            lw.lambda_attn = 0.2f;
            return total_loss(tape2, p, lw, nullptr);
        },
        x, 1e-2, 1e-2);
    INFO("max_rel_error=", report.max_rel_error, " skipped=", report.skipped);
    CHECK(report.passed);
}

TEST_CASE("reweight straight-through gradient reaches the mask") {
    std::mt19937_64 rng(17);
    Tensor map = Tensor::randn(rng, {1, 4, 4}, 1.f);
    Tape tape;
    Tensor z = Tensor::randn(rng, {1, 4, 4}, 1.f);
    tape.leaf(z);
    const Tensor g0 = Tensor::full({1, 4, 4}, 0.2f);
    const Tensor g1 = Tensor::full({1, 4, 4}, -0.1f);
    const AttentionLogits logits = make_logits(z, g0, g1);
    const AttentionMask mask = binarize(tape, logits, 1.f);
    tape.leaf(map);
    const Tensor out = reweight(tape, map, mask, 0.1f, 0.9f);
    tape.backward(out);
    const auto& gz = tape.grad(z);
    double sum_abs = 0;
    for (float g : gz) sum_abs += std::abs(g);
    CHECK(sum_abs > 0.0);
}
