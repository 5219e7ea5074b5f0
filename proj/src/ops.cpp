#include "sadrive/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace sadrive {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

Tensor Tensor::randn(std::mt19937_64& rng, std::vector<int> s, float stddev) {
    Tensor t(std::move(s));
    std::normal_distribution<float> dist(0.f, stddev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

std::string Tensor::shape_str() const {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw TensorError(msg);
}

int conv_out(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// cols is (Cin*k*k) x (Ho*Wo), row-major.
void im2col(const float* x, int cin, int h, int w, int k, int stride, int pad,
            int ho, int wo, float* cols) {
    const int cols_w = ho * wo;
    for (int c = 0; c < cin; ++c) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                float* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * cols_w;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= h) {
                        std::memset(row + oh * wo, 0, sizeof(float) * wo);
                        continue;
                    }
                    const float* src = x + (static_cast<std::size_t>(c) * h + ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        row[oh * wo + ow] = (iw >= 0 && iw < w) ? src[iw] : 0.f;
                    }
                }
            }
        }
    }
}

void col2im_accum(const float* cols, int cin, int h, int w, int k, int stride, int pad,
                  int ho, int wo, float* dx) {
    const int cols_w = ho * wo;
    for (int c = 0; c < cin; ++c) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const float* row =
                    cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * cols_w;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= h) continue;
                    float* dst = dx + (static_cast<std::size_t>(c) * h + ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < w) dst[iw] += row[oh * wo + ow];
                    }
                }
            }
        }
    }
}

bool on_tape(const Tensor& t) { return t.node >= 0; }

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    require(x.ndim() == 3, "conv2d: input must be [C,H,W], got " + x.shape_str());
    require(weight.ndim() == 4, "conv2d: weight must be [Co,Ci,k,k], got " + weight.shape_str());
    require(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square");
    require(weight.dim(1) == x.dim(0),
            "conv2d: weight C_in " + std::to_string(weight.dim(1)) + " != input C " +
                std::to_string(x.dim(0)));
    const bool has_bias = !bias.data.empty();
    if (has_bias)
        require(bias.numel() == weight.dim(0), "conv2d: bias size != C_out");
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = weight.dim(0), k = weight.dim(2);
    const int ho = conv_out(h, k, stride, padding);
    const int wo = conv_out(w, k, stride, padding);
    require(ho > 0 && wo > 0, "conv2d: output dims non-positive for input " + x.shape_str());

    const int ck2 = cin * k * k;
    std::vector<float> cols(static_cast<std::size_t>(ck2) * ho * wo);
    im2col(x.data.data(), cin, h, w, k, stride, padding, ho, wo, cols.data());

    Tensor y({cout, ho, wo});
    {
        CMapRow wm(weight.data.data(), cout, ck2);
        CMapRow cm(cols.data(), ck2, ho * wo);
        MapRow ym(y.data.data(), cout, ho * wo);
        ym.noalias() = wm * cm;
    }
    if (has_bias) {
        for (int c = 0; c < cout; ++c) {
            float b = bias.data[static_cast<std::size_t>(c)];
            float* row = y.data.data() + static_cast<std::size_t>(c) * ho * wo;
            for (int i = 0; i < ho * wo; ++i) row[i] += b;
        }
    }

    if (on_tape(x) || on_tape(weight) || on_tape(bias)) {
        const int xn = x.node, wn = weight.node, bn = bias.node;
        std::vector<float> saved_w = weight.data;
        // keep cols for dW; re-deriving it from x would also work but costs time
        y.node = tape.push(
            y.numel(), [=, cols = std::move(cols)](Tape& t, const std::vector<float>& gy) {
                CMapRow gym(gy.data(), cout, ho * wo);
                if (wn >= 0) {
                    CMapRow cm(cols.data(), ck2, ho * wo);
                    MapRow gwm(t.grad(wn).data(), cout, ck2);
                    gwm.noalias() += gym * cm.transpose();
                }
                if (bn >= 0) {
                    auto& gb = t.grad(bn);
                    for (int c = 0; c < cout; ++c) {
                        double s = 0;
                        const float* row = gy.data() + static_cast<std::size_t>(c) * ho * wo;
                        for (int i = 0; i < ho * wo; ++i) s += row[i];
                        gb[static_cast<std::size_t>(c)] += static_cast<float>(s);
                    }
                }
                if (xn >= 0) {
                    std::vector<float> dcols(static_cast<std::size_t>(ck2) * ho * wo);
                    CMapRow wm(saved_w.data(), cout, ck2);
                    MapRow dcm(dcols.data(), ck2, ho * wo);
                    dcm.noalias() = wm.transpose() * gym;
                    col2im_accum(dcols.data(), cin, h, w, k, stride, padding, ho, wo,
                                 t.grad(xn).data());
                }
            });
    }
    return y;
}

Tensor deconv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
                int stride, int padding) {
    require(x.ndim() == 3, "deconv2d: input must be [C,H,W], got " + x.shape_str());
    require(weight.ndim() == 4, "deconv2d: weight must be [Ci,Co,k,k]");
    require(weight.dim(0) == x.dim(0), "deconv2d: weight C_in != input C");
    const bool has_bias = !bias.data.empty();
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = weight.dim(1), k = weight.dim(2);
    const int ho = (h - 1) * stride - 2 * padding + k;
    const int wo = (w - 1) * stride - 2 * padding + k;
    require(ho > 0 && wo > 0, "deconv2d: output dims non-positive");

    Tensor y({cout, ho, wo});
    for (int ci = 0; ci < cin; ++ci) {
        for (int ih = 0; ih < h; ++ih) {
            for (int iw = 0; iw < w; ++iw) {
                const float xv = x.at3(ci, ih, iw);
                if (xv == 0.f) continue;
                for (int co = 0; co < cout; ++co) {
                    const float* wrow =
                        weight.data.data() +
                        ((static_cast<std::size_t>(ci) * cout + co) * k) * k;
                    for (int kh = 0; kh < k; ++kh) {
                        const int oh = ih * stride - padding + kh;
                        if (oh < 0 || oh >= ho) continue;
                        float* dst = y.data.data() + (static_cast<std::size_t>(co) * ho + oh) * wo;
                        for (int kw = 0; kw < k; ++kw) {
                            const int ow = iw * stride - padding + kw;
                            if (ow >= 0 && ow < wo) dst[ow] += xv * wrow[kh * k + kw];
                        }
                    }
                }
            }
        }
    }
    if (has_bias) {
        require(bias.numel() == cout, "deconv2d: bias size != C_out");
        for (int c = 0; c < cout; ++c) {
            float b = bias.data[static_cast<std::size_t>(c)];
            float* row = y.data.data() + static_cast<std::size_t>(c) * ho * wo;
            for (int i = 0; i < ho * wo; ++i) row[i] += b;
        }
    }

    if (on_tape(x) || on_tape(weight) || on_tape(bias)) {
        const int xn = x.node, wn = weight.node, bn = bias.node;
        std::vector<float> saved_w = weight.data;
        std::vector<float> saved_x = x.data;
        y.node = tape.push(y.numel(), [=](Tape& t, const std::vector<float>& gy) {
            if (bn >= 0) {
                auto& gb = t.grad(bn);
                for (int c = 0; c < cout; ++c) {
                    double s = 0;
                    const float* row = gy.data() + static_cast<std::size_t>(c) * ho * wo;
                    for (int i = 0; i < ho * wo; ++i) s += row[i];
                    gb[static_cast<std::size_t>(c)] += static_cast<float>(s);
                }
            }
            for (int ci = 0; ci < cin; ++ci) {
                for (int ih = 0; ih < h; ++ih) {
                    for (int iw = 0; iw < w; ++iw) {
                        const std::size_t xi = (static_cast<std::size_t>(ci) * h + ih) * w + iw;
                        double gx = 0;
                        for (int co = 0; co < cout; ++co) {
                            const std::size_t wbase =
                                (static_cast<std::size_t>(ci) * cout + co) * k * k;
                            for (int kh = 0; kh < k; ++kh) {
                                const int oh = ih * stride - padding + kh;
                                if (oh < 0 || oh >= ho) continue;
                                const float* grow =
                                    gy.data() + (static_cast<std::size_t>(co) * ho + oh) * wo;
                                for (int kw = 0; kw < k; ++kw) {
                                    const int ow = iw * stride - padding + kw;
                                    if (ow < 0 || ow >= wo) continue;
                                    const float g = grow[ow];
                                    if (xn >= 0) gx += g * saved_w[wbase + kh * k + kw];
                                    if (wn >= 0)
                                        t.grad(wn)[wbase + kh * k + kw] += g * saved_x[xi];
                                }
                            }
                        }
                        if (xn >= 0) t.grad(xn)[xi] += static_cast<float>(gx);
                    }
                }
            }
        });
    }
    return y;
}

namespace {

// Helper for simple elementwise ops: y_i = fwd(x_i), dx_i += dfn(x_i, y_i) * gy_i.
template <class Fwd, class Dfn>
Tensor elementwise(Tape& tape, const Tensor& x, Fwd fwd, Dfn dfn) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = fwd(x.data[i]);
    if (on_tape(x)) {
        const int xn = x.node;
        std::vector<float> xd = x.data, yd = y.data;
        y.node = tape.push(y.numel(), [xn, xd = std::move(xd), yd = std::move(yd),
                                       dfn](Tape& t, const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += dfn(xd[i], yd[i]) * gy[i];
        });
    }
    return y;
}

}  // namespace

Tensor relu(Tape& tape, const Tensor& x) {
    return elementwise(
        tape, x, [](float v) { return v > 0.f ? v : 0.f; },
        [](float xv, float) { return xv > 0.f ? 1.f : 0.f; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    return elementwise(
        tape, x, [](float v) { return 1.f / (1.f + std::exp(-v)); },
        [](float, float yv) { return yv * (1.f - yv); });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor y(a.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    if (on_tape(a) || on_tape(b)) {
        const int an = a.node, bn = b.node;
        y.node = tape.push(y.numel(), [an, bn](Tape& t, const std::vector<float>& gy) {
            if (an >= 0) {
                auto& g = t.grad(an);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
            if (bn >= 0) {
                auto& g = t.grad(bn);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
        });
    }
    return y;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "sub: shape mismatch");
    Tensor y(a.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] - b.data[i];
    if (on_tape(a) || on_tape(b)) {
        const int an = a.node, bn = b.node;
        y.node = tape.push(y.numel(), [an, bn](Tape& t, const std::vector<float>& gy) {
            if (an >= 0) {
                auto& g = t.grad(an);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
            if (bn >= 0) {
                auto& g = t.grad(bn);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
            }
        });
    }
    return y;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor y(a.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] * b.data[i];
    if (on_tape(a) || on_tape(b)) {
        const int an = a.node, bn = b.node;
        std::vector<float> ad = a.data, bd = b.data;
        y.node = tape.push(y.numel(), [an, bn, ad = std::move(ad), bd = std::move(bd)](
                                          Tape& t, const std::vector<float>& gy) {
            if (an >= 0) {
                auto& g = t.grad(an);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += bd[i] * gy[i];
            }
            if (bn >= 0) {
                auto& g = t.grad(bn);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += ad[i] * gy[i];
            }
        });
    }
    return y;
}

Tensor scale(Tape& tape, const Tensor& x, float s) {
    return elementwise(
        tape, x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, float s) {
    return elementwise(
        tape, x, [s](float v) { return v + s; }, [](float, float) { return 1.f; });
}

Tensor max_pool2(Tape& tape, const Tensor& x) {
    require(x.ndim() == 3, "max_pool2: input must be [C,H,W]");
    require(x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, "max_pool2: dims must be even");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h / 2, wo = w / 2;
    Tensor y({c, ho, wo});
    std::vector<std::int32_t> arg(static_cast<std::size_t>(c) * ho * wo);
    for (int ci = 0; ci < c; ++ci) {
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                float best = -std::numeric_limits<float>::infinity();
                int bi = 0;
                for (int dh = 0; dh < 2; ++dh) {
                    for (int dw = 0; dw < 2; ++dw) {
                        const int ih = oh * 2 + dh, iw = ow * 2 + dw;
                        const int idx = (ci * h + ih) * w + iw;
                        if (x.data[static_cast<std::size_t>(idx)] > best) {
                            best = x.data[static_cast<std::size_t>(idx)];
                            bi = idx;
                        }
                    }
                }
                const std::size_t oi = (static_cast<std::size_t>(ci) * ho + oh) * wo + ow;
                y.data[oi] = best;
                arg[oi] = bi;
            }
        }
    }
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(y.numel(),
                           [xn, arg = std::move(arg)](Tape& t, const std::vector<float>& gy) {
                               auto& gx = t.grad(xn);
                               for (std::size_t i = 0; i < gy.size(); ++i)
                                   gx[static_cast<std::size_t>(arg[i])] += gy[i];
                           });
    }
    return y;
}

Tensor avg_pool(Tape& tape, const Tensor& x, int factor) {
    require(x.ndim() == 3, "avg_pool: input must be [C,H,W]");
    require(factor >= 1 && x.dim(1) % factor == 0 && x.dim(2) % factor == 0,
            "avg_pool: factor must divide dims");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h / factor, wo = w / factor;
    const float inv = 1.f / static_cast<float>(factor * factor);
    Tensor y({c, ho, wo});
    for (int ci = 0; ci < c; ++ci)
        for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow) {
                double s = 0;
                for (int dh = 0; dh < factor; ++dh)
                    for (int dw = 0; dw < factor; ++dw)
                        s += x.at3(ci, oh * factor + dh, ow * factor + dw);
                y.at3(ci, oh, ow) = static_cast<float>(s) * inv;
            }
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(y.numel(), [xn, c, h, w, ho, wo, factor,
                                       inv](Tape& t, const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (int ci = 0; ci < c; ++ci)
                for (int oh = 0; oh < ho; ++oh)
                    for (int ow = 0; ow < wo; ++ow) {
                        const float g =
                            gy[(static_cast<std::size_t>(ci) * ho + oh) * wo + ow] * inv;
                        for (int dh = 0; dh < factor; ++dh)
                            for (int dw = 0; dw < factor; ++dw)
                                gx[(static_cast<std::size_t>(ci) * h + oh * factor + dh) * w +
                                   ow * factor + dw] += g;
                    }
        });
    }
    return y;
}

namespace {

// Sample mapping for bilinear scaling: src = (dst + 0.5)/f - 0.5, clamped.
struct LerpCoef {
    int i0, i1;
    float w0, w1;
};

std::vector<LerpCoef> lerp_table(int out, int in, int factor) {
    std::vector<LerpCoef> tab(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        float src = (o + 0.5f) / static_cast<float>(factor) - 0.5f;
        src = std::clamp(src, 0.f, static_cast<float>(in - 1));
        int i0 = static_cast<int>(std::floor(src));
        int i1 = std::min(i0 + 1, in - 1);
        float w1 = src - static_cast<float>(i0);
        tab[static_cast<std::size_t>(o)] = {i0, i1, 1.f - w1, w1};
    }
    return tab;
}

}  // namespace

Tensor bilinear_upsample(Tape& tape, const Tensor& x, int factor) {
    require(x.ndim() == 3, "bilinear_upsample: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h * factor, wo = w * factor;
    auto rows = lerp_table(ho, h, factor);
    auto colt = lerp_table(wo, w, factor);
    Tensor y({c, ho, wo});
    for (int ci = 0; ci < c; ++ci)
        for (int oh = 0; oh < ho; ++oh) {
            const auto& r = rows[static_cast<std::size_t>(oh)];
            for (int ow = 0; ow < wo; ++ow) {
                const auto& cc = colt[static_cast<std::size_t>(ow)];
                y.at3(ci, oh, ow) = r.w0 * (cc.w0 * x.at3(ci, r.i0, cc.i0) +
                                            cc.w1 * x.at3(ci, r.i0, cc.i1)) +
                                    r.w1 * (cc.w0 * x.at3(ci, r.i1, cc.i0) +
                                            cc.w1 * x.at3(ci, r.i1, cc.i1));
            }
        }
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(y.numel(), [xn, c, h, w, ho, wo, rows = std::move(rows),
                                       colt = std::move(colt)](Tape& t,
                                                              const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (int ci = 0; ci < c; ++ci)
                for (int oh = 0; oh < ho; ++oh) {
                    const auto& r = rows[static_cast<std::size_t>(oh)];
                    for (int ow = 0; ow < wo; ++ow) {
                        const auto& cc = colt[static_cast<std::size_t>(ow)];
                        const float g = gy[(static_cast<std::size_t>(ci) * ho + oh) * wo + ow];
                        gx[(static_cast<std::size_t>(ci) * h + r.i0) * w + cc.i0] +=
                            g * r.w0 * cc.w0;
                        gx[(static_cast<std::size_t>(ci) * h + r.i0) * w + cc.i1] +=
                            g * r.w0 * cc.w1;
                        gx[(static_cast<std::size_t>(ci) * h + r.i1) * w + cc.i0] +=
                            g * r.w1 * cc.w0;
                        gx[(static_cast<std::size_t>(ci) * h + r.i1) * w + cc.i1] +=
                            g * r.w1 * cc.w1;
                    }
                }
        });
    }
    return y;
}

Tensor nearest_upsample(Tape& tape, const Tensor& x, int factor) {
    require(x.ndim() == 3, "nearest_upsample: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h * factor, wo = w * factor;
    Tensor y({c, ho, wo});
    for (int ci = 0; ci < c; ++ci)
        for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow)
                y.at3(ci, oh, ow) = x.at3(ci, oh / factor, ow / factor);
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(
            y.numel(), [xn, c, h, w, ho, wo, factor](Tape& t, const std::vector<float>& gy) {
                auto& gx = t.grad(xn);
                for (int ci = 0; ci < c; ++ci)
                    for (int oh = 0; oh < ho; ++oh)
                        for (int ow = 0; ow < wo; ++ow)
                            gx[(static_cast<std::size_t>(ci) * h + oh / factor) * w +
                               ow / factor] +=
                                gy[(static_cast<std::size_t>(ci) * ho + oh) * wo + ow];
            });
    }
    return y;
}

Tensor concat_channels(Tape& tape, std::span<const Tensor> parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const int h = parts[0].dim(1), w = parts[0].dim(2);
    int ctot = 0;
    bool any_tape = false;
    for (const auto& p : parts) {
        require(p.ndim() == 3 && p.dim(1) == h && p.dim(2) == w,
                "concat_channels: spatial mismatch");
        ctot += p.dim(0);
        any_tape |= on_tape(p);
    }
    Tensor y({ctot, h, w});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data.begin(), p.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.data.size();
    }
    if (any_tape) {
        std::vector<int> nodes;
        std::vector<std::size_t> sizes;
        for (const auto& p : parts) {
            nodes.push_back(p.node);
            sizes.push_back(p.data.size());
        }
        y.node = tape.push(y.numel(), [nodes = std::move(nodes), sizes = std::move(sizes)](
                                          Tape& t, const std::vector<float>& gy) {
            std::size_t off2 = 0;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (nodes[i] >= 0) {
                    auto& g = t.grad(nodes[i]);
                    for (std::size_t j = 0; j < sizes[i]; ++j) g[j] += gy[off2 + j];
                }
                off2 += sizes[i];
            }
        });
    }
    return y;
}

Tensor softmax_channels(Tape& tape, const Tensor& x) {
    require(x.ndim() == 3, "softmax_channels: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y(x.shape);
    for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw) {
            float mx = -std::numeric_limits<float>::infinity();
            for (int ci = 0; ci < c; ++ci) mx = std::max(mx, x.at3(ci, ih, iw));
            double z = 0;
            for (int ci = 0; ci < c; ++ci) z += std::exp(x.at3(ci, ih, iw) - mx);
            for (int ci = 0; ci < c; ++ci)
                y.at3(ci, ih, iw) =
                    static_cast<float>(std::exp(x.at3(ci, ih, iw) - mx) / z);
        }
    if (on_tape(x)) {
        const int xn = x.node;
        std::vector<float> yd = y.data;
        y.node = tape.push(y.numel(), [xn, c, h, w, yd = std::move(yd)](
                                          Tape& t, const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (int ih = 0; ih < h; ++ih)
                for (int iw = 0; iw < w; ++iw) {
                    double dot = 0;
                    for (int ci = 0; ci < c; ++ci) {
                        const std::size_t idx = (static_cast<std::size_t>(ci) * h + ih) * w + iw;
                        dot += static_cast<double>(gy[idx]) * yd[idx];
                    }
                    for (int ci = 0; ci < c; ++ci) {
                        const std::size_t idx = (static_cast<std::size_t>(ci) * h + ih) * w + iw;
                        gx[idx] += yd[idx] * (gy[idx] - static_cast<float>(dot));
                    }
                }
        });
    }
    return y;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
    Tensor y({1});
    double s = 0;
    for (float v : x.data) s += v;
    y.data[0] = static_cast<float>(s);
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(1, [xn](Tape& t, const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (auto& g : gx) g += gy[0];
        });
    }
    return y;
}

Tensor smooth_l1(Tape& tape, const Tensor& pred, const Tensor& target) {
    require(pred.same_shape(target), "smooth_l1: shape mismatch");
    Tensor y(pred.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        const float d = pred.data[i] - target.data[i];
        y.data[i] = std::abs(d) < 1.f ? 0.5f * d * d : std::abs(d) - 0.5f;
    }
    if (on_tape(pred) || on_tape(target)) {
        const int pn = pred.node, tn = target.node;
        std::vector<float> diff(pred.data.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = pred.data[i] - target.data[i];
        y.node = tape.push(y.numel(), [pn, tn, diff = std::move(diff)](
                                          Tape& t, const std::vector<float>& gy) {
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const float d = diff[i];
                const float g = (std::abs(d) < 1.f ? d : (d > 0.f ? 1.f : -1.f)) * gy[i];
                if (pn >= 0) t.grad(pn)[i] += g;
                if (tn >= 0) t.grad(tn)[i] -= g;
            }
        });
    }
    return y;
}

Tensor binary_cross_entropy(Tape& tape, const Tensor& y, const Tensor& target) {
    require(y.same_shape(target), "binary_cross_entropy: shape mismatch");
    constexpr float kEps = 1e-7f;
    Tensor out(y.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const float p = std::clamp(y.data[i], kEps, 1.f - kEps);
        const float t = target.data[i];
        out.data[i] = -t * std::log(p) - (1.f - t) * std::log(1.f - p);
    }
    if (on_tape(y)) {
        const int yn = y.node;
        std::vector<float> yd = y.data, td = target.data;
        out.node = tape.push(out.numel(), [yn, yd = std::move(yd), td = std::move(td)](
                                              Tape& t, const std::vector<float>& gy) {
            auto& g = t.grad(yn);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                if (yd[i] <= kEps || yd[i] >= 1.f - kEps) continue;  // clamped: flat
                g[i] += (yd[i] - td[i]) / (yd[i] * (1.f - yd[i])) * gy[i];
            }
        });
    }
    return out;
}

Tensor circular_pad(Tape& tape, const Tensor& x, int p) {
    require(x.ndim() == 3, "circular_pad: input must be [C,H,W]");
    require(p >= 0, "circular_pad: negative padding");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = h + 2 * p, wo = w + 2 * p;
    auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
    Tensor y({c, ho, wo});
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < ho; ++r)
            for (int cc = 0; cc < wo; ++cc)
                y.at3(ci, r, cc) = x.at3(ci, wrap(r - p, h), wrap(cc - p, w));
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(y.numel(), [xn, c, h, w, p, ho, wo,
                                       wrap](Tape& t, const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (int ci = 0; ci < c; ++ci)
                for (int r = 0; r < ho; ++r)
                    for (int cc = 0; cc < wo; ++cc)
                        gx[(static_cast<std::size_t>(ci) * h + wrap(r - p, h)) * w +
                           wrap(cc - p, w)] +=
                            gy[(static_cast<std::size_t>(ci) * ho + r) * wo + cc];
        });
    }
    return y;
}

Tensor gather_patch(Tape& tape, const Tensor& x, int r0, int c0, int h, int w) {
    require(x.ndim() == 3, "gather_patch: input must be [C,H,W]");
    const int c = x.dim(0), xh = x.dim(1), xw = x.dim(2);
    Tensor y({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < h; ++r) {
            const int ir = r0 + r;
            if (ir < 0 || ir >= xh) continue;
            for (int cc = 0; cc < w; ++cc) {
                const int ic = c0 + cc;
                if (ic >= 0 && ic < xw) y.at3(ci, r, cc) = x.at3(ci, ir, ic);
            }
        }
    if (on_tape(x)) {
        const int xn = x.node;
        y.node = tape.push(y.numel(), [xn, c, xh, xw, r0, c0, h,
                                       w](Tape& t, const std::vector<float>& gy) {
            auto& gx = t.grad(xn);
            for (int ci = 0; ci < c; ++ci)
                for (int r = 0; r < h; ++r) {
                    const int ir = r0 + r;
                    if (ir < 0 || ir >= xh) continue;
                    for (int cc = 0; cc < w; ++cc) {
                        const int ic = c0 + cc;
                        if (ic >= 0 && ic < xw)
                            gx[(static_cast<std::size_t>(ci) * xh + ir) * xw + ic] +=
                                gy[(static_cast<std::size_t>(ci) * h + r) * w + cc];
                    }
                }
        });
    }
    return y;
}

Tensor scatter_residual(Tape& tape, const Tensor& base, const Tensor& x,
                        const Tensor& patch, int r0, int c0) {
    require(base.same_shape(x), "scatter_residual: base/x shape mismatch");
    require(patch.ndim() == 3 && patch.dim(0) == base.dim(0),
            "scatter_residual: patch channel mismatch");
    const int c = base.dim(0), bh = base.dim(1), bw = base.dim(2);
    const int ph = patch.dim(1), pw = patch.dim(2);
    Tensor y = base;
    y.node = -1;
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < ph; ++r) {
            const int ir = r0 + r;
            if (ir < 0 || ir >= bh) continue;
            for (int cc = 0; cc < pw; ++cc) {
                const int ic = c0 + cc;
                if (ic >= 0 && ic < bw)
                    y.at3(ci, ir, ic) = x.at3(ci, ir, ic) + patch.at3(ci, r, cc);
            }
        }
    if (on_tape(base) || on_tape(x) || on_tape(patch)) {
        const int bn = base.node, xn = x.node, pn = patch.node;
        y.node = tape.push(y.numel(), [bn, xn, pn, c, bh, bw, ph, pw, r0,
                                       c0](Tape& t, const std::vector<float>& gy) {
            for (int ci = 0; ci < c; ++ci)
                for (int r = 0; r < bh; ++r)
                    for (int cc = 0; cc < bw; ++cc) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(ci) * bh + r) * bw + cc;
                        const bool inside = r >= r0 && r < r0 + ph && cc >= c0 && cc < c0 + pw;
                        if (inside) {
                            if (xn >= 0) t.grad(xn)[idx] += gy[idx];
                            if (pn >= 0)
                                t.grad(pn)[(static_cast<std::size_t>(ci) * ph + (r - r0)) * pw +
                                           (cc - c0)] += gy[idx];
                        } else if (bn >= 0) {
                            t.grad(bn)[idx] += gy[idx];
                        }
                    }
        });
    }
    return y;
}

Tensor sum_squares(Tape& tape, std::span<const Tensor> params) {
    Tensor y({1});
    double s = 0;
    for (const auto& p : params)
        for (float v : p.data) s += static_cast<double>(v) * v;
    y.data[0] = static_cast<float>(s);
    bool any = false;
    for (const auto& p : params) any |= on_tape(p);
    if (any) {
        std::vector<int> nodes;
        std::vector<std::vector<float>> vals;
        for (const auto& p : params) {
            nodes.push_back(p.node);
            vals.push_back(p.data);
        }
        y.node = tape.push(1, [nodes = std::move(nodes), vals = std::move(vals)](
                                  Tape& t, const std::vector<float>& gy) {
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (nodes[i] < 0) continue;
                auto& g = t.grad(nodes[i]);
                for (std::size_t j = 0; j < vals[i].size(); ++j)
                    g[j] += 2.f * vals[i][j] * gy[0];
            }
        });
    }
    return y;
}

void adam_step(Tensor& param, const std::vector<float>& grad, AdamState& state,
               float lr, float beta1, float beta2, float eps) {
    if (state.m.empty()) {
        state.m.assign(param.data.size(), 0.f);
        state.v.assign(param.data.size(), 0.f);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.f - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.f - beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
    }
}

GradCheckReport grad_check(const std::function<Tensor(Tape&, Tensor&)>& f, Tensor x,
                           double epsilon, double tol) {
    GradCheckReport report;
    std::vector<float> analytic;
    {
        Tape tape;
        Tensor xt = x;
        tape.leaf(xt);
        Tensor loss = f(tape, xt);
        if (loss.numel() != 1) throw TensorError("grad_check: f must be scalar-valued");
        tape.backward(loss);
        analytic = tape.grad(xt);
    }
    auto eval_at = [&](std::int64_t i, double delta) {
        Tape tape;
        Tensor xt = x;
        xt.data[static_cast<std::size_t>(i)] =
            x.data[static_cast<std::size_t>(i)] + static_cast<float>(delta);
        return static_cast<double>(f(tape, xt).data[0]);
    };
    const double f0 = eval_at(0, 0.0);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double fp = eval_at(i, epsilon), fm = eval_at(i, -epsilon);
        const double fp2 = eval_at(i, epsilon / 2), fm2 = eval_at(i, -epsilon / 2);
        const double fp4 = eval_at(i, epsilon / 4), fm4 = eval_at(i, -epsilon / 4);
        const double n1 = (fp - fm) / (2.0 * epsilon);
        const double n2 = (fp2 - fm2) / epsilon;
        const double n4 = (fp4 - fm4) / (epsilon / 2);
        const double a = analytic[static_cast<std::size_t>(i)];
        const double scale = std::max({std::abs(a), std::abs(n4), 1.0});
        // kink detectors: refinement inconsistency of the difference quotient,
        // and failure of the even part to scale quadratically with epsilon
        const double fd_dev =
            std::max(std::abs(n1 - n2), std::abs(n2 - n4)) / scale;
        const double even_dev =
            std::abs((fp + fm - 2 * f0) - 4 * (fp2 + fm2 - 2 * f0)) / (2.0 * epsilon * scale);
        // one-sided slopes disagree when a kink sits inside the smallest
        // stencil; central differences stay consistent there, so check both
        const double side_dev =
            std::abs((fp4 - f0) - (f0 - fm4)) / (epsilon / 4.0 * scale);
        if (fd_dev > tol || even_dev > 2.0 * tol || side_dev > tol) {
            ++report.skipped;
            continue;
        }
        const double rel = std::abs(a - n4) / scale;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace sadrive
