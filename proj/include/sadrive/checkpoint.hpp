#pragma once

#include <map>
#include <string>

#include "sadrive/tensor.hpp"

namespace sadrive {

// Named parameter set. Models register their tensors here by address so a
// checkpoint round-trip writes back into the live parameters.
class ParamSet {
public:
    void add(const std::string& name, Tensor* t) {
        if (params_.count(name)) throw TensorError("duplicate parameter name: " + name);
        params_[name] = t;
    }
    const std::map<std::string, Tensor*>& items() const { return params_; }
    Tensor* find(const std::string& name) const {
        auto it = params_.find(name);
        return it == params_.end() ? nullptr : it->second;
    }
    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t->data.size();
        return n;
    }

private:
    std::map<std::string, Tensor*> params_;
};

// `sadrive-ckpt v1`: text manifest (name, shape, byte offset) followed by a
// flat little-endian float32 payload.
void save_checkpoint(const std::string& path, const ParamSet& params);
void load_checkpoint(const std::string& path, const ParamSet& params);

// Flat-binary tensor export (dims header + float32 payload), used for
// BevInput and mask dumps.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace sadrive
