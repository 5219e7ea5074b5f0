#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "sadrive/backbone.hpp"

using namespace sadrive;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.input_channels = 5;
    cfg.stem_channels = 6;
    cfg.base_channels = 8;
    cfg.branch_widths[0] = 4;
    cfg.branch_widths[1] = 4;
    cfg.branch_widths[2] = 8;
    cfg.gated_hidden = 8;
    cfg.blocks = 2;
    return cfg;
}

}  // namespace

TEST_CASE("model config round trip and validation") {
    BackboneConfig cfg = tiny_config();
    cfg.attention_tap = "stem";
    cfg.temperature = 0.5f;
    const std::string path = "model_test.cfg";
    save_model_config(path, cfg);
    const BackboneConfig back = load_model_config(path);
    CHECK(back.input_channels == cfg.input_channels);
    CHECK(back.base_channels == cfg.base_channels);
    CHECK(back.branch_widths[1] == cfg.branch_widths[1]);
    CHECK(back.gated_hidden == cfg.gated_hidden);
    CHECK(back.blocks == cfg.blocks);
    CHECK(back.attention_tap == "stem");
    CHECK(back.temperature == 0.5f);
    std::remove(path.c_str());

    {
        std::ofstream out(path);
        out << "sadrive-model v1\nnot_a_key 3\n";
    }
    CHECK_THROWS_AS(load_model_config(path), TensorError);
    std::remove(path.c_str());
}

TEST_CASE("backbone output shape at full scale") {
    std::mt19937_64 rng(1);
    const BackboneConfig cfg;  // 33 -> 128, 3 blocks
    Backbone net(cfg, rng);
    Tape tape;
    const Tensor x = Tensor::randn(rng, {33, 96, 96}, 0.5f);
    const Tensor y = net.forward(tape, x, nullptr);
    CHECK(y.shape == std::vector<int>{128, 24, 24});
    CHECK_THROWS_AS(net.forward(tape, Tensor::zeros({12, 96, 96}), nullptr), TensorError);
    CHECK_THROWS_AS(net.forward(tape, Tensor::zeros({33, 40, 40}), nullptr), TensorError);
}

TEST_CASE("dense mask equals no mask") {
    std::mt19937_64 rng(3);
    for (const char* tap : {"stem", "block1"}) {
        BackboneConfig cfg = tiny_config();
        cfg.attention_tap = tap;
        Backbone net(cfg, rng);
        Tape tape;
        const Tensor x = Tensor::randn(rng, {5, 32, 32}, 0.5f);
        const Tensor ones = Tensor::full({1, 8, 8}, 1.f);
        const Tensor gated = net.forward(tape, x, &ones);
        const Tensor plain = net.forward(tape, x, nullptr);
        REQUIRE(gated.same_shape(plain));
        for (std::size_t i = 0; i < gated.data.size(); ++i)
            REQUIRE(std::abs(gated.data[i] - plain.data[i]) < 1e-6);
    }
}

TEST_CASE("prefix/suffix split matches the one-shot forward") {
    std::mt19937_64 rng(5);
    BackboneConfig cfg = tiny_config();
    cfg.attention_tap = "block1";
    Backbone net(cfg, rng);
    Tape tape;
    const Tensor x = Tensor::randn(rng, {5, 32, 32}, 0.5f);
    const auto prefix = net.forward_prefix(tape, x);
    CHECK(prefix.next_block == 1);
    CHECK(prefix.tap.shape == std::vector<int>{8, 8, 8});
    const Tensor via_split = net.forward_suffix(tape, prefix, nullptr);
    const Tensor direct = net.forward(tape, x, nullptr);
    for (std::size_t i = 0; i < direct.data.size(); ++i)
        REQUIRE(via_split.data[i] == direct.data[i]);
}

TEST_CASE("halving widths quarters the block flops") {
    BackboneConfig big;
    BackboneConfig half = big;
    half.stem_channels /= 2;
    half.base_channels /= 2;
    half.gated_hidden /= 2;
    for (int& w : half.branch_widths) w /= 2;
    std::mt19937_64 rng(7);
    Backbone nb(big, rng), nh(half, rng);
    auto block_sum = [](const std::vector<ConvLayerSpec>& layers) {
        double s = 0;
        for (const auto& l : layers)
            if (l.name.rfind("block", 0) == 0)
                s += 2.0 * l.k * l.k * l.cin * l.cout * l.h * l.w;
        return s;
    };
    const double fb = block_sum(nb.flop_layers(96, 96));
    const double fh = block_sum(nh.flop_layers(96, 96));
    CHECK(fb / fh == doctest::Approx(4.0));
}

TEST_CASE("backbone gradients pass finite differences") {
    std::mt19937_64 rng(11);
    BackboneConfig cfg = tiny_config();
    cfg.blocks = 1;
    cfg.attention_tap = "stem";
    Backbone net(cfg, rng);
    Tensor m = Tensor::zeros({1, 4, 4});
    m.at3(0, 1, 1) = 1.f;
    m.at3(0, 2, 3) = 1.f;
    Tensor x = Tensor::randn(rng, {5, 16, 16}, 0.5f);
    const auto report = grad_check(
        [&](Tape& tape, Tensor& in) {
            net.bind(tape);
            return scale(tape, sum_all(tape, net.forward(tape, in, &m)), 0.05f);
        },
        x, 1e-2, 1e-3);
    INFO("max_rel_error=", report.max_rel_error, " skipped=", report.skipped);
    CHECK(report.passed);
}

TEST_CASE("detection header outputs and gradients") {
    std::mt19937_64 rng(13);
    DetectionHeader head(8, rng);
    Tape tape;

    const auto zero_out = head.forward(tape, Tensor::zeros({8, 6, 6}));
    for (float v : zero_out.score.data) CHECK(v == 0.5f);
    for (float v : zero_out.regression.data) CHECK(v == 0.f);
    CHECK(zero_out.score.shape == std::vector<int>{1, 6, 6});
    CHECK(zero_out.regression.shape ==
          std::vector<int>{kBoxParams * (kFutureSteps + 1), 6, 6});

    // the zero-init output convs block gradient flow, so perturb them
    ParamSet params;
    head.register_params(params, "det.");
    std::mt19937_64 prng(14);
    std::normal_distribution<float> dist(0.f, 0.1f);
    for (auto& v : params.find("det.cls_out.w")->data) v = dist(prng);
    for (auto& v : params.find("det.reg_out.w")->data) v = dist(prng);

    const auto out = head.forward(tape, Tensor::randn(rng, {8, 6, 6}, 1.f));
    for (float v : out.score.data) {
        CHECK(v > 0.f);
        CHECK(v < 1.f);
    }

    Tensor x = Tensor::randn(rng, {8, 6, 6}, 0.5f);
    const auto report = grad_check(
        [&](Tape& tape2, Tensor& in) {
            head.bind(tape2);
            const auto o = head.forward(tape2, in);
            return scale(tape2,
                         add(tape2, sum_all(tape2, o.score), sum_all(tape2, o.regression)),
                         0.02f);
        },
        x, 1e-2, 1e-3);
    INFO("max_rel_error=", report.max_rel_error, " skipped=", report.skipped);
    CHECK(report.passed);
}

TEST_CASE("planning header shape and gradients") {
    std::mt19937_64 rng(17);
    PlanningHeader head(8, rng);
    Tape tape;
    const Tensor y = head.forward(tape, Tensor::randn(rng, {8, 8, 8}, 0.5f));
    CHECK(y.shape == std::vector<int>{kFutureSteps, 32, 32});

    std::mt19937_64 xrng(21);
    Tensor x = Tensor::randn(xrng, {8, 6, 6}, 0.5f);
    const auto report = grad_check(
        [&](Tape& tape2, Tensor& in) {
            head.bind(tape2);
            return scale(tape2, sum_all(tape2, head.forward(tape2, in)), 0.01f);
        },
        x, 2e-3, 1e-3);
    INFO("max_rel_error=", report.max_rel_error, " skipped=", report.skipped);
    CHECK(report.passed);
}

TEST_CASE("circular planning header is shift equivariant") {
    std::mt19937_64 rng(19);
    PlanningHeader head(4, rng, PadMode::kCircular);
    const Tensor x = Tensor::randn(rng, {4, 8, 8}, 1.f);
    Tensor shifted({4, 8, 8});
    const int dr = 3, dc = 5;
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 8; ++r)
            for (int cc = 0; cc < 8; ++cc)
                shifted.at3(c, (r + dr) % 8, (cc + dc) % 8) = x.at3(c, r, cc);
    Tape tape;
    const Tensor y = head.forward(tape, x);
    const Tensor ys = head.forward(tape, shifted);
    REQUIRE(y.shape == std::vector<int>{kFutureSteps, 32, 32});
    for (int c = 0; c < kFutureSteps; ++c)
        for (int r = 0; r < 32; ++r)
            for (int cc = 0; cc < 32; ++cc)
                REQUIRE(ys.at3(c, (r + 4 * dr) % 32, (cc + 4 * dc) % 32) ==
                        doctest::Approx(y.at3(c, r, cc)).epsilon(1e-6));
}

TEST_CASE("checkpoint round trip reproduces the forward pass") {
    std::mt19937_64 rng1(23), rng2(77);
    const BackboneConfig cfg = tiny_config();
    Backbone a(cfg, rng1), b(cfg, rng2);
    ParamSet pa, pb;
    a.register_params(pa, "net.");
    b.register_params(pb, "net.");
    const std::string path = "backbone_test.ckpt";
    save_checkpoint(path, pa);
    load_checkpoint(path, pb);
    std::remove(path.c_str());
    Tape tape;
    const Tensor x = Tensor::randn(rng1, {5, 16, 16}, 0.5f);
    const Tensor ya = a.forward(tape, x, nullptr);
    const Tensor yb = b.forward(tape, x, nullptr);
    for (std::size_t i = 0; i < ya.data.size(); ++i) REQUIRE(ya.data[i] == yb.data[i]);
}
