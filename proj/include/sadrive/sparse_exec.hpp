#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sadrive/checkpoint.hpp"
#include "sadrive/ops.hpp"
#include "sadrive/tensor.hpp"

namespace sadrive {

struct BlockIndex {
    int block = 4;
    int halo = 0;
    int grid_rows = 0, grid_cols = 0;  // in blocks
    std::vector<std::pair<int, int>> active;  // (bi, bj), sorted, unique
};

// A block is active iff any mask cell inside it is nonzero.
BlockIndex mask_to_blocks(const Tensor& mask, int block, int halo);

// Channel-broadcast multiply by a [1,H,W] mask; gradients flow to both the
// activations and the mask (straight-through when the mask came from binarize).
Tensor mask_mul(Tape& tape, const Tensor& x, const Tensor& mask);

// The gated residual body: 3x3 convolutions channels -> hidden -> channels
// with a ReLU between and no biases, so F(0) = 0 and inactive regions pass
// through exactly.
struct GatedConvPair {
    Tensor w1, w2;

    GatedConvPair() = default;
    GatedConvPair(int channels, int hidden, std::mt19937_64& rng);

    Tensor dense(Tape& tape, const Tensor& x) const;  // padded, same size
    int halo() const { return 2; }
    int channels() const { return w1.ndim() == 4 ? w1.dim(1) : 0; }

    void register_params(ParamSet& params, const std::string& prefix);
    void bind(Tape& tape);
};

// x + F(x .* A) evaluated only on gathered active blocks and scattered back.
// Equals the dense formula everywhere (spill regions are recomputed, not
// approximated). mask must be at x's spatial resolution.
Tensor sparse_residual_block(Tape& tape, const Tensor& x, const GatedConvPair& f,
                             const Tensor& mask, int block = 4);

// Full-grid reference for the same formula.
Tensor dense_residual_block(Tape& tape, const Tensor& x, const GatedConvPair& f,
                            const Tensor& mask);

struct ConvLayerSpec {
    std::string name;
    int k = 3, cin = 0, cout = 0;
    int h = 0, w = 0;   // output spatial dims
    bool gated = false;
    int halo = 1;       // per-layer gather halo when gated
};

struct LayerFlops {
    std::string name;
    double dense = 0, sparse = 0;
    std::int64_t active_blocks = 0;
};

struct FlopReport {
    double dense_flops = 0, sparse_flops = 0;
    double sparsity = 0;
    std::vector<LayerFlops> layers;
};

// Theoretical multiply-add counts times two. Gated layers replace the spatial
// area by active blocks of (block + 2*halo)^2 cells; mask dims must match the
// gated layer's grid.
FlopReport count_flops(std::span<const ConvLayerSpec> layers, const Tensor& mask,
                       int block = 4);

void save_flops_csv(const std::string& path, const FlopReport& report);

}  // namespace sadrive
