#include "sadrive/attention.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

namespace sadrive {

namespace {

Tensor he_conv(std::mt19937_64& rng, int cout, int cin, int k) {
    const float stddev = std::sqrt(2.f / (static_cast<float>(k) * k * cin));
    return Tensor::randn(rng, {cout, cin, k, k}, stddev);
}

}  // namespace

double AttentionMask::sparsity() const {
    double ones = 0;
    for (float v : hard.data) ones += v;
    return 1.0 - ones / static_cast<double>(hard.data.size());
}

UNetScorer::UNetScorer(int in_channels, std::mt19937_64& rng) : in_channels_(in_channels) {
    w_enc0_ = he_conv(rng, 32, in_channels, 3);
    b_enc0_ = Tensor::zeros({32});
    w_enc1_ = he_conv(rng, 64, 32, 3);
    b_enc1_ = Tensor::zeros({64});
    w_enc2_ = he_conv(rng, 128, 64, 3);
    b_enc2_ = Tensor::zeros({128});
    w_dec1_ = he_conv(rng, 64, 128 + 64, 3);
    b_dec1_ = Tensor::zeros({64});
    w_dec0_ = he_conv(rng, 32, 64 + 32, 3);
    b_dec0_ = Tensor::zeros({32});
    w_out_ = Tensor::zeros({1, 32, 1, 1});
    b_out_ = Tensor::zeros({1});
}

void UNetScorer::register_params(ParamSet& params, const std::string& prefix) {
    params.add(prefix + "enc0.w", &w_enc0_);
    params.add(prefix + "enc0.b", &b_enc0_);
    params.add(prefix + "enc1.w", &w_enc1_);
    params.add(prefix + "enc1.b", &b_enc1_);
    params.add(prefix + "enc2.w", &w_enc2_);
    params.add(prefix + "enc2.b", &b_enc2_);
    params.add(prefix + "dec1.w", &w_dec1_);
    params.add(prefix + "dec1.b", &b_dec1_);
    params.add(prefix + "dec0.w", &w_dec0_);
    params.add(prefix + "dec0.b", &b_dec0_);
    params.add(prefix + "out.w", &w_out_);
    params.add(prefix + "out.b", &b_out_);
}

void UNetScorer::bind(Tape& tape) {
    for (Tensor* t : {&w_enc0_, &b_enc0_, &w_enc1_, &b_enc1_, &w_enc2_, &b_enc2_,
                      &w_dec1_, &b_dec1_, &w_dec0_, &b_dec0_, &w_out_, &b_out_})
        tape.leaf(*t);
}

Tensor UNetScorer::forward(Tape& tape, const Tensor& features) const {
    if (features.ndim() != 3 || features.dim(0) != in_channels_)
        throw TensorError("scorer expects " + std::to_string(in_channels_) +
                          " channels, got " + features.shape_str());
    if (features.dim(1) % 4 != 0 || features.dim(2) % 4 != 0)
        throw TensorError("scorer grid dims must be divisible by 4");
    const Tensor e0 = relu(tape, conv2d(tape, features, w_enc0_, b_enc0_, 1, 1));
    const Tensor e1 = relu(tape, conv2d(tape, e0, w_enc1_, b_enc1_, 2, 1));
    const Tensor e2 = relu(tape, conv2d(tape, e1, w_enc2_, b_enc2_, 2, 1));
    const std::array<Tensor, 2> c1{bilinear_upsample(tape, e2, 2), e1};
    const Tensor d1 = relu(tape, conv2d(tape, concat_channels(tape, c1), w_dec1_, b_dec1_, 1, 1));
    const std::array<Tensor, 2> c0{bilinear_upsample(tape, d1, 2), e0};
    const Tensor d0 = relu(tape, conv2d(tape, concat_channels(tape, c0), w_dec0_, b_dec0_, 1, 1));
    return conv2d(tape, d0, w_out_, b_out_, 1, 0);
}

double gumbel_noise(double u) {
    if (!(u > 0.0) || !(u < 1.0))
        throw TensorError("gumbel_noise requires u in (0,1)");
    return -std::log(-std::log(u));
}

Tensor sample_gumbel(std::mt19937_64& rng, const std::vector<int>& shape) {
    Tensor g(shape);
    std::uniform_real_distribution<double> u01(std::numeric_limits<double>::min(), 1.0);
    for (auto& v : g.data) {
        double u;
        do {
            u = u01(rng);
        } while (u >= 1.0);
        v = static_cast<float>(gumbel_noise(u));
    }
    return g;
}

AttentionLogits make_logits(const Tensor& z, const Tensor& g0, const Tensor& g1) {
    if (!z.same_shape(g0) || !z.same_shape(g1))
        throw TensorError("logits and noise shapes differ");
    AttentionLogits out;
    out.z = z;
    out.pi = Tensor(z.shape);
    out.alpha0 = Tensor(z.shape);
    out.alpha1 = Tensor(z.shape);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const double zi = z.data[i];
        const double pi = 1.0 / (1.0 + std::exp(-zi));
        out.pi.data[i] = static_cast<float>(pi);
        // log pi and log(1-pi) via softplus for stability
        const double log_pi = -std::log1p(std::exp(-zi));
        const double log_1mpi = -zi - std::log1p(std::exp(-zi));
        out.alpha0.data[i] = static_cast<float>(log_pi + g0.data[i]);
        out.alpha1.data[i] = static_cast<float>(log_1mpi + g1.data[i]);
    }
    return out;
}

AttentionMask binarize(Tape& tape, const AttentionLogits& logits, float temperature) {
    if (temperature <= 0) throw TensorError("binarize temperature must be positive");
    AttentionMask mask;
    mask.temperature = temperature;
    mask.hard = Tensor(logits.z.shape);
    mask.soft = Tensor(logits.z.shape);
    const std::size_t n = logits.z.data.size();
    // alpha0 - alpha1 = z + g0 - g1; keep it for the softmax derivative
    std::vector<float> diff(n);
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = logits.alpha0.data[i] - logits.alpha1.data[i];
        mask.hard.data[i] = diff[i] >= 0.f ? 1.f : 0.f;
        mask.soft.data[i] =
            static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(diff[i]) / temperature)));
    }
    if (logits.z.node >= 0) {
        const int z_node = logits.z.node;
        const float K = temperature;
        mask.hard.node = tape.push(
            static_cast<std::int64_t>(n),
            [z_node, K, diff = std::move(diff)](Tape& t, const std::vector<float>& g) {
                auto& gz = t.grad(z_node);
                for (std::size_t i = 0; i < diff.size(); ++i) {
                    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(diff[i]) / K));
                    gz[i] += g[i] * static_cast<float>(s * (1.0 - s) / K);
                }
            });
    }
    return mask;
}

Tensor sparsity_loss(Tape& tape, const AttentionMask& mask) {
    return sum_all(tape, mask.hard);
}

BaselineKind baseline_kind_from_name(const std::string& name) {
    if (name == "road") return BaselineKind::kRoad;
    if (name == "vehicle") return BaselineKind::kVehicle;
    if (name == "proximity") return BaselineKind::kProximity;
    if (name == "dense") return BaselineKind::kDense;
    throw TensorError("unknown baseline mask kind: " + name);
}

const char* baseline_kind_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::kRoad: return "road";
        case BaselineKind::kVehicle: return "vehicle";
        case BaselineKind::kProximity: return "proximity";
        case BaselineKind::kDense: return "dense";
    }
    return "dense";
}

AttentionMask baseline_mask(BaselineKind kind, const Scene& scene, double target_sparsity) {
    const auto& b = scene.bounds;
    if (b.rows() % 4 != 0 || b.cols() % 4 != 0)
        throw TensorError("baseline_mask: grid dims must be divisible by 4");
    const int qr = b.rows() / 4, qc = b.cols() / 4;
    const double qres = b.resolution * 4;
    AttentionMask mask;
    mask.hard = Tensor::zeros({1, qr, qc});

    auto cell_center = [&](int i, int j) {
        return Vec2{(j + 0.5) * qres - b.width_m / 2, (i + 0.5) * qres - b.height_m / 2};
    };
    auto fill_disk = [&](double r) {
        const Vec2 ego{scene.ego_now().x, scene.ego_now().y};
        int ones = 0;
        for (int i = 0; i < qr; ++i)
            for (int j = 0; j < qc; ++j) {
                const bool in = (cell_center(i, j) - ego).norm() <= r;
                mask.hard.at3(0, i, j) = in ? 1.f : 0.f;
                ones += in;
            }
        return ones;
    };

    switch (kind) {
        case BaselineKind::kDense:
            std::fill(mask.hard.data.begin(), mask.hard.data.end(), 1.f);
            break;
        case BaselineKind::kRoad:
            for (int i = 0; i < qr; ++i)
                for (int j = 0; j < qc; ++j)
                    if (scene.on_lane_surface(cell_center(i, j))) mask.hard.at3(0, i, j) = 1.f;
            break;
        case BaselineKind::kVehicle: {
            Tensor raw = Tensor::zeros({1, qr, qc});
            for (int i = 0; i < qr; ++i)
                for (int j = 0; j < qc; ++j)
                    for (const auto& a : scene.actors)
                        if (a.box_at(0).contains(cell_center(i, j))) {
                            raw.at3(0, i, j) = 1.f;
                            break;
                        }
            for (int i = 0; i < qr; ++i)
                for (int j = 0; j < qc; ++j) {
                    bool on = false;
                    for (int di = -1; di <= 1 && !on; ++di)
                        for (int dj = -1; dj <= 1 && !on; ++dj) {
                            const int ii = i + di, jj = j + dj;
                            if (ii >= 0 && ii < qr && jj >= 0 && jj < qc &&
                                raw.at3(0, ii, jj) > 0)
                                on = true;
                        }
                    if (on) mask.hard.at3(0, i, j) = 1.f;
                }
            break;
        }
        case BaselineKind::kProximity: {
            const int total = qr * qc;
            const int want = static_cast<int>(std::llround((1.0 - target_sparsity) * total));
            double lo = 0.0, hi = std::hypot(b.width_m, b.height_m);
            for (int it = 0; it < 60; ++it) {
                const double mid = (lo + hi) / 2;
                if (fill_disk(mid) < want)
                    lo = mid;
                else
                    hi = mid;
            }
            fill_disk(hi);
            break;
        }
    }
    mask.soft = mask.hard;
    mask.temperature = 1.f;
    return mask;
}

void save_mask_pgm(const std::string& path, const AttentionMask& mask) {
    const int h = mask.hard.dim(mask.hard.ndim() - 2);
    const int w = mask.hard.dim(mask.hard.ndim() - 1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TensorError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < mask.hard.data.size(); ++i)
        out.put(mask.hard.data[i] > 0.5f ? char(255) : char(0));
    if (!out) throw TensorError("pgm write failed: " + path);
}

}  // namespace sadrive
