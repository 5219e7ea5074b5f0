#pragma once

#include <random>
#include <string>

#include "sadrive/checkpoint.hpp"
#include "sadrive/ops.hpp"
#include "sadrive/scene.hpp"
#include "sadrive/tensor.hpp"

namespace sadrive {

struct AttentionLogits {
    Tensor z;       // [1,h,w], tape-bound during training
    Tensor pi;      // sigmoid(z), values only
    Tensor alpha0;  // log(pi) + g0
    Tensor alpha1;  // log(1-pi) + g1
};

struct AttentionMask {
    Tensor hard;  // {0,1}, straight-through node when built from binarize
    Tensor soft;  // tempered softmax values
    float temperature = 1.f;
    double sparsity() const;
};

// Two-stage encoder/decoder scorer with skip connections mapping backbone
// features to one logit per cell. Final layer starts at zero so pi = 0.5.
class UNetScorer {
public:
    UNetScorer(int in_channels, std::mt19937_64& rng);

    Tensor forward(Tape& tape, const Tensor& features) const;
    void register_params(ParamSet& params, const std::string& prefix);
    void bind(Tape& tape);
    int in_channels() const { return in_channels_; }

private:
    int in_channels_;
    Tensor w_enc0_, b_enc0_;  // in -> 32
    Tensor w_enc1_, b_enc1_;  // 32 -> 64, stride 2
    Tensor w_enc2_, b_enc2_;  // 64 -> 128, stride 2
    Tensor w_dec1_, b_dec1_;  // 128+64 -> 64
    Tensor w_dec0_, b_dec0_;  // 64+32 -> 32
    Tensor w_out_, b_out_;    // 32 -> 1, zero-init
};

double gumbel_noise(double u);
Tensor sample_gumbel(std::mt19937_64& rng, const std::vector<int>& shape);

// Perturbed logits from z and per-branch Gumbel noise (pass zero tensors at
// inference for a deterministic mask).
AttentionLogits make_logits(const Tensor& z, const Tensor& g0, const Tensor& g1);

// Hard comparison forward, tempered-softmax gradient (straight-through).
AttentionMask binarize(Tape& tape, const AttentionLogits& logits, float temperature);

Tensor sparsity_loss(Tape& tape, const AttentionMask& mask);

enum class BaselineKind { kRoad, kVehicle, kProximity, kDense };

BaselineKind baseline_kind_from_name(const std::string& name);
const char* baseline_kind_name(BaselineKind kind);

// Static masks at quarter resolution. The proximity radius is bisected until
// the mask sparsity is as close to target_sparsity as the grid allows.
AttentionMask baseline_mask(BaselineKind kind, const Scene& scene,
                            double target_sparsity = 0.94);

void save_mask_pgm(const std::string& path, const AttentionMask& mask);

}  // namespace sadrive
