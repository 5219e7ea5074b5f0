#pragma once

#include <random>
#include <string>
#include <vector>

#include "sadrive/checkpoint.hpp"
#include "sadrive/ops.hpp"
#include "sadrive/scene.hpp"
#include "sadrive/sparse_exec.hpp"

namespace sadrive {

// `sadrive-model v1` config. Branch scales are fixed at {1, 1/2, 1/4} of the
// backbone grid; widths and depth scale for sweeps.
struct BackboneConfig {
    int input_channels = kHeightSlices * kPastSweeps + kMapChannels;
    int stem_channels = 32;
    int base_channels = 128;           // cross-scale block width and output
    int branch_widths[3] = {64, 96, 128};
    int gated_hidden = 128;            // hidden width of the gated residual body
    int blocks = 3;
    int block_size = 4;                // sparse execution tile
    std::string attention_tap = "block1";  // "stem" or "block1"
    float temperature = 1.f;
};

BackboneConfig load_model_config(const std::string& path);
void save_model_config(const std::string& path, const BackboneConfig& cfg);

// Cross-scale BEV backbone: a 4x downsampling stem, then `blocks` residual
// cross-scale blocks with three parallel branches (full, half, quarter
// resolution) fused by concat + 1x1 conv. Blocks after the attention tap are
// gated when a mask is supplied.
class Backbone {
public:
    Backbone(const BackboneConfig& cfg, std::mt19937_64& rng);

    struct Prefix {
        Tensor x;    // activation entering the first gated block
        Tensor tap;  // activation the attention scorer reads
        int next_block = 0;
    };

    // Runs the stem and any pre-tap blocks so the caller can score attention.
    Prefix forward_prefix(Tape& tape, const Tensor& input) const;
    // Runs the remaining blocks; gated when mask != nullptr.
    Tensor forward_suffix(Tape& tape, const Prefix& prefix, const Tensor* mask) const;
    Tensor forward(Tape& tape, const Tensor& input, const Tensor* mask) const;

    void register_params(ParamSet& params, const std::string& prefix) ;
    void bind(Tape& tape);
    const BackboneConfig& config() const { return cfg_; }

    // Conv layer inventory for FLOP accounting at the given input size.
    std::vector<ConvLayerSpec> flop_layers(int rows, int cols) const;

private:
    Tensor run_block(Tape& tape, const Tensor& x, int i, const Tensor* mask) const;

    BackboneConfig cfg_;
    Tensor w_stem1_, b_stem1_, w_stem2_, b_stem2_;
    struct Block {
        GatedConvPair f;
        Tensor wb1, bb1, wb2, bb2, wb3, bb3;  // per-branch 3x3 convs
        Tensor wfuse, bfuse;                  // 1x1 fusion
    };
    std::vector<Block> blocks_;
};

struct DetectionOutput {
    Tensor score;       // [1,h,w] in (0,1)
    Tensor regression;  // [6*(T+1),h,w]
};

class DetectionHeader {
public:
    DetectionHeader(int in_channels, std::mt19937_64& rng);
    DetectionOutput forward(Tape& tape, const Tensor& features) const;
    void register_params(ParamSet& params, const std::string& prefix);
    void bind(Tape& tape);
    std::vector<ConvLayerSpec> flop_layers(int rows, int cols) const;

private:
    Tensor w_trunk_, b_trunk_;
    Tensor w_cls_, b_cls_, w_cls_out_, b_cls_out_;
    Tensor w_reg_, b_reg_, w_reg_out_, b_reg_out_;
};

enum class PadMode { kZero, kCircular };

// Upsamples features 4x back to the input grid and emits T cost channels.
// kZero uses stride-2 deconvolutions; kCircular swaps them for nearest
// upsampling plus wrap-around convolutions, which makes the header exactly
// shift-equivariant (used by the equivariance tests).
class PlanningHeader {
public:
    PlanningHeader(int in_channels, std::mt19937_64& rng, PadMode mode = PadMode::kZero);
    Tensor forward(Tape& tape, const Tensor& features) const;  // [T, 4h, 4w]
    void register_params(ParamSet& params, const std::string& prefix);
    void bind(Tape& tape);
    std::vector<ConvLayerSpec> flop_layers(int rows, int cols) const;

private:
    PadMode mode_;
    Tensor w_up1_, b_up1_, w_up2_, b_up2_, w_out_, b_out_;
};

}  // namespace sadrive
