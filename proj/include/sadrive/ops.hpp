#pragma once

#include <span>

#include "sadrive/tensor.hpp"

namespace sadrive {

// All ops take [C,H,W] activations unless noted. Each records its backward
// rule on the tape when any differentiable input is tape-bound.

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int padding);
// Transposed convolution. weight is [C_in, C_out, k, k]; output spatial size
// is (H-1)*stride - 2*padding + k.
Tensor deconv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
                int stride, int padding);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, float s);
Tensor add_scalar(Tape& tape, const Tensor& x, float s);

Tensor max_pool2(Tape& tape, const Tensor& x);           // 2x2, stride 2
Tensor avg_pool(Tape& tape, const Tensor& x, int factor);
Tensor bilinear_upsample(Tape& tape, const Tensor& x, int factor);
Tensor nearest_upsample(Tape& tape, const Tensor& x, int factor);
Tensor concat_channels(Tape& tape, std::span<const Tensor> parts);
Tensor softmax_channels(Tape& tape, const Tensor& x);

Tensor sum_all(Tape& tape, const Tensor& x);             // -> scalar
Tensor smooth_l1(Tape& tape, const Tensor& pred, const Tensor& target);  // elementwise
Tensor binary_cross_entropy(Tape& tape, const Tensor& y, const Tensor& target);

// Periodic border of p cells on each side (for wrap-around convolutions).
Tensor circular_pad(Tape& tape, const Tensor& x, int p);

// Zero-padded window copy: rows [r0, r0+h) x cols [c0, c0+w), all channels.
// Coordinates may extend outside x; out-of-range cells read as zero.
Tensor gather_patch(Tape& tape, const Tensor& x, int r0, int c0, int h, int w);

// base with the window at (r0,c0) replaced by x_window + patch. Later calls
// in a chain overwrite earlier ones, so overlapping scatter regions take the
// value (and gradient) of the last writer.
Tensor scatter_residual(Tape& tape, const Tensor& base, const Tensor& x,
                        const Tensor& patch, int r0, int c0);

// Sum of squares over a set of parameters (weight decay term).
Tensor sum_squares(Tape& tape, std::span<const Tensor> params);

struct AdamState {
    std::vector<float> m, v;
    std::int64_t step = 0;
};

// Bias-corrected Adam update, in place.
void adam_step(Tensor& param, const std::vector<float>& grad, AdamState& state,
               float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::int64_t worst_index = -1;
    std::int64_t skipped = 0;  // coordinates excluded by the kink filter
    bool passed = false;
};

// Central finite differences against the analytic gradient of f at x.
// f must build a fresh scalar from its argument on the provided tape.
// Coordinates where the difference quotient at epsilon and epsilon/2 disagree
// (a kink inside the stencil) are excluded from the comparison.
GradCheckReport grad_check(const std::function<Tensor(Tape&, Tensor&)>& f, Tensor x,
                           double epsilon, double tol);

}  // namespace sadrive
