#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sadrive {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense float32 array, up to 4 dims. `node` links the value to a Tape for
// reverse-mode differentiation; node == -1 means constant (no gradient).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    int node = -1;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.f)
        : shape(std::move(s)), data(count(shape), fill) {}

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw TensorError("non-positive dim in shape");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.f); }
    static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }
    static Tensor randn(std::mt19937_64& rng, std::vector<int> s, float stddev);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // [C,H,W] accessors for the common 3-d case.
    float& at3(int c, int h, int w) {
        return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }
    float at3(int c, int h, int w) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }

    std::string shape_str() const;
};

// Records operations in execution order; backward() replays the list in
// reverse, each node pulling its gradient and pushing into its parents'.
class Tape {
public:
    // self_grad is this node's accumulated gradient at the time of the call.
    using BackFn = std::function<void(Tape&, const std::vector<float>& self_grad)>;

    // Registers a parameter (or input) as a differentiable leaf.
    int leaf(Tensor& t) {
        t.node = push(t.numel(), nullptr);
        return t.node;
    }

    int push(std::int64_t size, BackFn back) {
        nodes_.push_back(Node{std::vector<float>(static_cast<std::size_t>(size), 0.f),
                              std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<float>& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    const std::vector<float>& grad(const Tensor& t) {
        if (t.node < 0) throw TensorError("tensor is not on the tape");
        return nodes_[static_cast<std::size_t>(t.node)].grad;
    }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1) throw TensorError("backward requires a scalar loss");
        if (loss.node < 0) throw TensorError("loss is not on the tape");
        grad(loss.node)[0] += 1.f;
        for (int i = loss.node; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(*this, n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        std::vector<float> grad;
        BackFn back;
    };
    std::vector<Node> nodes_;
};

}  // namespace sadrive
