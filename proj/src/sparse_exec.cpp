#include "sadrive/sparse_exec.hpp"

#include <cmath>
#include <fstream>

namespace sadrive {

namespace {

void check_mask_shape(const Tensor& mask) {
    if (mask.ndim() != 3 || mask.dim(0) != 1)
        throw TensorError("mask must be [1,H,W], got " + mask.shape_str());
}

}  // namespace

BlockIndex mask_to_blocks(const Tensor& mask, int block, int halo) {
    check_mask_shape(mask);
    const int h = mask.dim(1), w = mask.dim(2);
    if (block <= 0 || h % block != 0 || w % block != 0)
        throw TensorError("block size " + std::to_string(block) + " does not divide " +
                          mask.shape_str());
    BlockIndex idx;
    idx.block = block;
    idx.halo = halo;
    idx.grid_rows = h / block;
    idx.grid_cols = w / block;
    for (int bi = 0; bi < idx.grid_rows; ++bi)
        for (int bj = 0; bj < idx.grid_cols; ++bj) {
            bool any = false;
            for (int r = bi * block; r < (bi + 1) * block && !any; ++r)
                for (int c = bj * block; c < (bj + 1) * block && !any; ++c)
                    if (mask.at3(0, r, c) != 0.f) any = true;
            if (any) idx.active.emplace_back(bi, bj);
        }
    return idx;
}

Tensor mask_mul(Tape& tape, const Tensor& x, const Tensor& mask) {
    check_mask_shape(mask);
    if (x.ndim() != 3 || x.dim(1) != mask.dim(1) || x.dim(2) != mask.dim(2))
        throw TensorError("mask_mul: resolution mismatch, x " + x.shape_str() + " vs mask " +
                          mask.shape_str());
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor y(x.shape);
    for (int ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < plane; ++i)
            y.data[ci * plane + i] = x.data[ci * plane + i] * mask.data[i];
    if (x.node >= 0 || mask.node >= 0) {
        const int xn = x.node, mn = mask.node;
        y.node = tape.push(
            y.numel(),
            [xn, mn, c, plane, xv = x.data, mv = mask.data](Tape& t,
                                                           const std::vector<float>& gy) {
                if (xn >= 0) {
                    auto& gx = t.grad(xn);
                    for (int ci = 0; ci < c; ++ci)
                        for (std::size_t i = 0; i < plane; ++i)
                            gx[ci * plane + i] += gy[ci * plane + i] * mv[i];
                }
                if (mn >= 0) {
                    auto& gm = t.grad(mn);
                    for (int ci = 0; ci < c; ++ci)
                        for (std::size_t i = 0; i < plane; ++i)
                            gm[i] += gy[ci * plane + i] * xv[ci * plane + i];
                }
            });
    }
    return y;
}

GatedConvPair::GatedConvPair(int channels, int hidden, std::mt19937_64& rng) {
    w1 = Tensor::randn(rng, {hidden, channels, 3, 3}, std::sqrt(2.f / (9.f * channels)));
    w2 = Tensor::randn(rng, {channels, hidden, 3, 3}, std::sqrt(2.f / (9.f * hidden)));
}

Tensor GatedConvPair::dense(Tape& tape, const Tensor& x) const {
    const Tensor no_bias;  // bias-free by construction
    return conv2d(tape, relu(tape, conv2d(tape, x, w1, no_bias, 1, 1)), w2, no_bias, 1, 1);
}

void GatedConvPair::register_params(ParamSet& params, const std::string& prefix) {
    params.add(prefix + "w1", &w1);
    params.add(prefix + "w2", &w2);
}

void GatedConvPair::bind(Tape& tape) {
    tape.leaf(w1);
    tape.leaf(w2);
}

Tensor sparse_residual_block(Tape& tape, const Tensor& x, const GatedConvPair& f,
                             const Tensor& mask, int block) {
    if (x.ndim() != 3 || x.dim(0) != f.channels())
        throw TensorError("sparse_residual_block: channel mismatch");
    const BlockIndex idx = mask_to_blocks(mask, block, f.halo());
    if (idx.active.empty()) return x;
    const Tensor masked = mask_mul(tape, x, mask);
    const int h = f.halo();
    const int rows = x.dim(1), cols = x.dim(2);
    // scatter window is block + halo on each side; its residual depends on
    // masked inputs up to 2*halo away, so the gather window adds another halo
    const int gather = block + 4 * h;
    const Tensor no_bias;
    Tensor y = x;
    for (const auto& [bi, bj] : idx.active) {
        const int r0 = bi * block, c0 = bj * block;
        const Tensor patch = gather_patch(tape, masked, r0 - 2 * h, c0 - 2 * h, gather, gather);
        Tensor mid = relu(tape, conv2d(tape, patch, f.w1, no_bias, 1, 0));
        // the dense reference zero-pads between the convolutions, so clamp the
        // intermediate cells that fall outside the grid
        Tensor edge = Tensor::full({1, mid.dim(1), mid.dim(2)}, 1.f);
        bool clipped = false;
        for (int r = 0; r < mid.dim(1); ++r)
            for (int c = 0; c < mid.dim(2); ++c) {
                const int gr = r0 - 2 * h + 1 + r, gc = c0 - 2 * h + 1 + c;
                if (gr < 0 || gr >= rows || gc < 0 || gc >= cols) {
                    edge.at3(0, r, c) = 0.f;
                    clipped = true;
                }
            }
        if (clipped) mid = mask_mul(tape, mid, edge);
        const Tensor res = conv2d(tape, mid, f.w2, no_bias, 1, 0);  // (block + 2*halo)^2
        y = scatter_residual(tape, y, x, res, r0 - h, c0 - h);
    }
    return y;
}

Tensor dense_residual_block(Tape& tape, const Tensor& x, const GatedConvPair& f,
                            const Tensor& mask) {
    return add(tape, x, f.dense(tape, mask_mul(tape, x, mask)));
}

FlopReport count_flops(std::span<const ConvLayerSpec> layers, const Tensor& mask, int block) {
    check_mask_shape(mask);
    FlopReport report;
    double ones = 0;
    for (float v : mask.data) ones += v != 0.f ? 1 : 0;
    report.sparsity = 1.0 - ones / static_cast<double>(mask.data.size());
    for (const auto& l : layers) {
        LayerFlops lf;
        lf.name = l.name;
        const double per_cell = 2.0 * l.k * l.k * l.cin * l.cout;
        lf.dense = per_cell * l.h * l.w;
        if (l.gated) {
            if (l.h != mask.dim(1) || l.w != mask.dim(2))
                throw TensorError("count_flops: gated layer " + l.name +
                                  " grid does not match mask");
            const BlockIndex idx = mask_to_blocks(mask, block, l.halo);
            lf.active_blocks = static_cast<std::int64_t>(idx.active.size());
            const double area = static_cast<double>(block + 2 * l.halo) * (block + 2 * l.halo);
            lf.sparse = per_cell * area * static_cast<double>(lf.active_blocks);
            lf.sparse = std::min(lf.sparse, lf.dense);
        } else {
            lf.sparse = lf.dense;
        }
        report.dense_flops += lf.dense;
        report.sparse_flops += lf.sparse;
        report.layers.push_back(std::move(lf));
    }
    return report;
}

void save_flops_csv(const std::string& path, const FlopReport& report) {
    std::ofstream out(path);
    if (!out) throw TensorError("cannot open for writing: " + path);
    out.precision(17);
    out << "layer,dense,sparse,active_blocks\n";
    for (const auto& l : report.layers)
        out << l.name << "," << l.dense << "," << l.sparse << "," << l.active_blocks << "\n";
    out << "total," << report.dense_flops << "," << report.sparse_flops << ",\n";
    if (!out) throw TensorError("csv write failed: " + path);
}

}  // namespace sadrive
