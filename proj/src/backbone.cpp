#include "sadrive/backbone.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sadrive {

namespace {

Tensor he_conv(std::mt19937_64& rng, int cout, int cin, int k) {
    return Tensor::randn(rng, {cout, cin, k, k},
                         std::sqrt(2.f / (static_cast<float>(k) * k * cin)));
}

}  // namespace

BackboneConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cannot open model config: " + path);
    std::string line;
    std::getline(in, line);
    if (line != "sadrive-model v1") throw TensorError("bad model config header in " + path);
    BackboneConfig cfg;
    std::string key;
    while (in >> key) {
        if (key == "input_channels") in >> cfg.input_channels;
        else if (key == "stem_channels") in >> cfg.stem_channels;
        else if (key == "base_channels") in >> cfg.base_channels;
        else if (key == "branch_widths")
            in >> cfg.branch_widths[0] >> cfg.branch_widths[1] >> cfg.branch_widths[2];
        else if (key == "gated_hidden") in >> cfg.gated_hidden;
        else if (key == "blocks") in >> cfg.blocks;
        else if (key == "block_size") in >> cfg.block_size;
        else if (key == "attention_tap") in >> cfg.attention_tap;
        else if (key == "temperature") in >> cfg.temperature;
        else throw TensorError("unknown model config key: " + key);
    }
    if (cfg.attention_tap != "stem" && cfg.attention_tap != "block1")
        throw TensorError("attention_tap must be 'stem' or 'block1'");
    if (cfg.blocks < 1) throw TensorError("model needs at least one block");
    return cfg;
}

void save_model_config(const std::string& path, const BackboneConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw TensorError("cannot open for writing: " + path);
    out << "sadrive-model v1\n";
    out << "input_channels " << cfg.input_channels << "\n";
    out << "stem_channels " << cfg.stem_channels << "\n";
    out << "base_channels " << cfg.base_channels << "\n";
    out << "branch_widths " << cfg.branch_widths[0] << " " << cfg.branch_widths[1] << " "
        << cfg.branch_widths[2] << "\n";
    out << "gated_hidden " << cfg.gated_hidden << "\n";
    out << "blocks " << cfg.blocks << "\n";
    out << "block_size " << cfg.block_size << "\n";
    out << "attention_tap " << cfg.attention_tap << "\n";
    out << "temperature " << cfg.temperature << "\n";
    if (!out) throw TensorError("config write failed: " + path);
}

Backbone::Backbone(const BackboneConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    w_stem1_ = he_conv(rng, cfg.stem_channels, cfg.input_channels, 3);
    b_stem1_ = Tensor::zeros({cfg.stem_channels});
    w_stem2_ = he_conv(rng, cfg.base_channels, cfg.stem_channels, 3);
    b_stem2_ = Tensor::zeros({cfg.base_channels});
    for (int i = 0; i < cfg.blocks; ++i) {
        Block b;
        b.f = GatedConvPair(cfg.base_channels, cfg.gated_hidden, rng);
        b.wb1 = he_conv(rng, cfg.branch_widths[0], cfg.base_channels, 3);
        b.bb1 = Tensor::zeros({cfg.branch_widths[0]});
        b.wb2 = he_conv(rng, cfg.branch_widths[1], cfg.base_channels, 3);
        b.bb2 = Tensor::zeros({cfg.branch_widths[1]});
        b.wb3 = he_conv(rng, cfg.branch_widths[2], cfg.base_channels, 3);
        b.bb3 = Tensor::zeros({cfg.branch_widths[2]});
        const int cat = cfg.branch_widths[0] + cfg.branch_widths[1] + cfg.branch_widths[2];
        b.wfuse = he_conv(rng, cfg.base_channels, cat, 1);
        b.bfuse = Tensor::zeros({cfg.base_channels});
        blocks_.push_back(std::move(b));
    }
}

Tensor Backbone::run_block(Tape& tape, const Tensor& x, int i, const Tensor* mask) const {
    const Block& blk = blocks_[static_cast<std::size_t>(i)];
    const Tensor u = mask ? sparse_residual_block(tape, x, blk.f, *mask, cfg_.block_size)
                          : add(tape, x, blk.f.dense(tape, x));
    const Tensor b1 = relu(tape, conv2d(tape, u, blk.wb1, blk.bb1, 1, 1));
    const Tensor b2 = nearest_upsample(
        tape, relu(tape, conv2d(tape, avg_pool(tape, u, 2), blk.wb2, blk.bb2, 1, 1)), 2);
    const Tensor b3 = nearest_upsample(
        tape, relu(tape, conv2d(tape, avg_pool(tape, u, 4), blk.wb3, blk.bb3, 1, 1)), 4);
    const std::array<Tensor, 3> branches{b1, b2, b3};
    const Tensor fused =
        relu(tape, conv2d(tape, concat_channels(tape, branches), blk.wfuse, blk.bfuse, 1, 0));
    return add(tape, x, fused);
}

Backbone::Prefix Backbone::forward_prefix(Tape& tape, const Tensor& input) const {
    if (input.ndim() != 3 || input.dim(0) != cfg_.input_channels)
        throw TensorError("backbone expects " + std::to_string(cfg_.input_channels) +
                          " input channels, got " + input.shape_str());
    if (input.dim(1) % 16 != 0 || input.dim(2) % 16 != 0)
        throw TensorError("backbone grid dims must be divisible by 16");
    Prefix p;
    const Tensor s1 = relu(tape, conv2d(tape, input, w_stem1_, b_stem1_, 2, 1));
    p.x = relu(tape, conv2d(tape, s1, w_stem2_, b_stem2_, 2, 1));
    if (cfg_.attention_tap == "stem") {
        p.tap = p.x;
        p.next_block = 0;
    } else {
        p.x = run_block(tape, p.x, 0, nullptr);
        p.tap = p.x;
        p.next_block = 1;
    }
    return p;
}

Tensor Backbone::forward_suffix(Tape& tape, const Prefix& prefix, const Tensor* mask) const {
    Tensor x = prefix.x;
    for (int i = prefix.next_block; i < cfg_.blocks; ++i) x = run_block(tape, x, i, mask);
    return x;
}

Tensor Backbone::forward(Tape& tape, const Tensor& input, const Tensor* mask) const {
    const Prefix p = forward_prefix(tape, input);
    return forward_suffix(tape, p, mask);
}

void Backbone::register_params(ParamSet& params, const std::string& prefix) {
    params.add(prefix + "stem1.w", &w_stem1_);
    params.add(prefix + "stem1.b", &b_stem1_);
    params.add(prefix + "stem2.w", &w_stem2_);
    params.add(prefix + "stem2.b", &b_stem2_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string bp = prefix + "block" + std::to_string(i) + ".";
        blocks_[i].f.register_params(params, bp + "f.");
        params.add(bp + "b1.w", &blocks_[i].wb1);
        params.add(bp + "b1.b", &blocks_[i].bb1);
        params.add(bp + "b2.w", &blocks_[i].wb2);
        params.add(bp + "b2.b", &blocks_[i].bb2);
        params.add(bp + "b3.w", &blocks_[i].wb3);
        params.add(bp + "b3.b", &blocks_[i].bb3);
        params.add(bp + "fuse.w", &blocks_[i].wfuse);
        params.add(bp + "fuse.b", &blocks_[i].bfuse);
    }
}

void Backbone::bind(Tape& tape) {
    for (Tensor* t : {&w_stem1_, &b_stem1_, &w_stem2_, &b_stem2_}) tape.leaf(*t);
    for (auto& b : blocks_) {
        b.f.bind(tape);
        for (Tensor* t : {&b.wb1, &b.bb1, &b.wb2, &b.bb2, &b.wb3, &b.bb3, &b.wfuse, &b.bfuse})
            tape.leaf(*t);
    }
}

std::vector<ConvLayerSpec> Backbone::flop_layers(int rows, int cols) const {
    std::vector<ConvLayerSpec> layers;
    const int q = rows / 4, qc = cols / 4;
    layers.push_back({"stem1", 3, cfg_.input_channels, cfg_.stem_channels, rows / 2, cols / 2,
                      false, 1});
    layers.push_back({"stem2", 3, cfg_.stem_channels, cfg_.base_channels, q, qc, false, 1});
    const int first_gated = cfg_.attention_tap == "stem" ? 0 : 1;
    const int cat = cfg_.branch_widths[0] + cfg_.branch_widths[1] + cfg_.branch_widths[2];
    for (int i = 0; i < cfg_.blocks; ++i) {
        const std::string bp = "block" + std::to_string(i) + ".";
        const bool gated = i >= first_gated;
        layers.push_back({bp + "f1", 3, cfg_.base_channels, cfg_.gated_hidden, q, qc, gated, 1});
        layers.push_back({bp + "f2", 3, cfg_.gated_hidden, cfg_.base_channels, q, qc, gated, 1});
        layers.push_back({bp + "b1", 3, cfg_.base_channels, cfg_.branch_widths[0], q, qc,
                          false, 1});
        layers.push_back({bp + "b2", 3, cfg_.base_channels, cfg_.branch_widths[1], q / 2,
                          qc / 2, false, 1});
        layers.push_back({bp + "b3", 3, cfg_.base_channels, cfg_.branch_widths[2], q / 4,
                          qc / 4, false, 1});
        layers.push_back({bp + "fuse", 1, cat, cfg_.base_channels, q, qc, false, 1});
    }
    return layers;
}

DetectionHeader::DetectionHeader(int in_channels, std::mt19937_64& rng) {
    w_trunk_ = he_conv(rng, 64, in_channels, 3);
    b_trunk_ = Tensor::zeros({64});
    w_cls_ = he_conv(rng, 32, 64, 3);
    b_cls_ = Tensor::zeros({32});
    w_cls_out_ = Tensor::zeros({1, 32, 1, 1});
    b_cls_out_ = Tensor::zeros({1});
    w_reg_ = he_conv(rng, 64, 64, 3);
    b_reg_ = Tensor::zeros({64});
    w_reg_out_ = Tensor::zeros({kBoxParams * (kFutureSteps + 1), 64, 1, 1});
    b_reg_out_ = Tensor::zeros({kBoxParams * (kFutureSteps + 1)});
}

DetectionOutput DetectionHeader::forward(Tape& tape, const Tensor& features) const {
    const Tensor trunk = relu(tape, conv2d(tape, features, w_trunk_, b_trunk_, 1, 1));
    const Tensor cls = relu(tape, conv2d(tape, trunk, w_cls_, b_cls_, 1, 1));
    const Tensor reg = relu(tape, conv2d(tape, trunk, w_reg_, b_reg_, 1, 1));
    DetectionOutput out;
    out.score = sigmoid(tape, conv2d(tape, cls, w_cls_out_, b_cls_out_, 1, 0));
    out.regression = conv2d(tape, reg, w_reg_out_, b_reg_out_, 1, 0);
    return out;
}

void DetectionHeader::register_params(ParamSet& params, const std::string& prefix) {
    params.add(prefix + "trunk.w", &w_trunk_);
    params.add(prefix + "trunk.b", &b_trunk_);
    params.add(prefix + "cls.w", &w_cls_);
    params.add(prefix + "cls.b", &b_cls_);
    params.add(prefix + "cls_out.w", &w_cls_out_);
    params.add(prefix + "cls_out.b", &b_cls_out_);
    params.add(prefix + "reg.w", &w_reg_);
    params.add(prefix + "reg.b", &b_reg_);
    params.add(prefix + "reg_out.w", &w_reg_out_);
    params.add(prefix + "reg_out.b", &b_reg_out_);
}

void DetectionHeader::bind(Tape& tape) {
    for (Tensor* t : {&w_trunk_, &b_trunk_, &w_cls_, &b_cls_, &w_cls_out_, &b_cls_out_,
                      &w_reg_, &b_reg_, &w_reg_out_, &b_reg_out_})
        tape.leaf(*t);
}

std::vector<ConvLayerSpec> DetectionHeader::flop_layers(int rows, int cols) const {
    const int cin = w_trunk_.dim(1);
    return {
        {"det.trunk", 3, cin, 64, rows, cols, false, 1},
        {"det.cls", 3, 64, 32, rows, cols, false, 1},
        {"det.cls_out", 1, 32, 1, rows, cols, false, 1},
        {"det.reg", 3, 64, 64, rows, cols, false, 1},
        {"det.reg_out", 1, 64, kBoxParams * (kFutureSteps + 1), rows, cols, false, 1},
    };
}

PlanningHeader::PlanningHeader(int in_channels, std::mt19937_64& rng, PadMode mode)
    : mode_(mode) {
    if (mode == PadMode::kZero) {
        // deconv weights are [C_in, C_out, k, k]
        w_up1_ = Tensor::randn(rng, {in_channels, 64, 4, 4},
                               std::sqrt(2.f / (16.f * in_channels)));
        w_up2_ = Tensor::randn(rng, {64, 32, 4, 4}, std::sqrt(2.f / (16.f * 64)));
    } else {
        w_up1_ = he_conv(rng, 64, in_channels, 3);
        w_up2_ = he_conv(rng, 32, 64, 3);
    }
    b_up1_ = Tensor::zeros({64});
    b_up2_ = Tensor::zeros({32});
    w_out_ = he_conv(rng, kFutureSteps, 32, 3);
    b_out_ = Tensor::zeros({kFutureSteps});
}

Tensor PlanningHeader::forward(Tape& tape, const Tensor& features) const {
    if (mode_ == PadMode::kZero) {
        const Tensor u1 = relu(tape, deconv2d(tape, features, w_up1_, b_up1_, 2, 1));
        const Tensor u2 = relu(tape, deconv2d(tape, u1, w_up2_, b_up2_, 2, 1));
        return conv2d(tape, u2, w_out_, b_out_, 1, 1);
    }
    auto circ_conv = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
        return conv2d(tape, circular_pad(tape, x, 1), w, b, 1, 0);
    };
    const Tensor u1 =
        relu(tape, circ_conv(nearest_upsample(tape, features, 2), w_up1_, b_up1_));
    const Tensor u2 = relu(tape, circ_conv(nearest_upsample(tape, u1, 2), w_up2_, b_up2_));
    return circ_conv(u2, w_out_, b_out_);
}

void PlanningHeader::register_params(ParamSet& params, const std::string& prefix) {
    params.add(prefix + "up1.w", &w_up1_);
    params.add(prefix + "up1.b", &b_up1_);
    params.add(prefix + "up2.w", &w_up2_);
    params.add(prefix + "up2.b", &b_up2_);
    params.add(prefix + "out.w", &w_out_);
    params.add(prefix + "out.b", &b_out_);
}

void PlanningHeader::bind(Tape& tape) {
    for (Tensor* t : {&w_up1_, &b_up1_, &w_up2_, &b_up2_, &w_out_, &b_out_}) tape.leaf(*t);
}

std::vector<ConvLayerSpec> PlanningHeader::flop_layers(int rows, int cols) const {
    const int cin = mode_ == PadMode::kZero ? w_up1_.dim(0) : w_up1_.dim(1);
    const int k = mode_ == PadMode::kZero ? 4 : 3;
    return {
        {"plan.up1", k, cin, 64, rows * 2, cols * 2, false, 1},
        {"plan.up2", k, 64, 32, rows * 4, cols * 4, false, 1},
        {"plan.out", 3, 32, kFutureSteps, rows * 4, cols * 4, false, 1},
    };
}

}  // namespace sadrive
