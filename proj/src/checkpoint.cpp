#include "sadrive/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace sadrive {

namespace {
constexpr const char* kCkptMagic = "sadrive-ckpt v1";
constexpr const char* kTensorMagic = "sadrive-tensor v1";
}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TensorError("cannot open checkpoint for writing: " + path);
    out << kCkptMagic << "\n" << params.items().size() << "\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : params.items()) {
        out << name;
        out << " " << t->ndim();
        for (int d : t->shape) out << " " << d;
        out << " " << offset << "\n";
        offset += t->data.size() * sizeof(float);
    }
    out << "data\n";
    for (const auto& [name, t] : params.items())
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    if (!out) throw TensorError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, const ParamSet& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TensorError("cannot open checkpoint: " + path);
    std::string line;
    std::getline(in, line);
    if (line != kCkptMagic) throw TensorError("bad checkpoint header in " + path + ": " + line);
    std::size_t count = 0;
    in >> count;
    struct Entry {
        std::string name;
        std::vector<int> shape;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        Entry e;
        int ndim = 0;
        std::size_t offset = 0;
        in >> e.name >> ndim;
        e.shape.resize(static_cast<std::size_t>(ndim));
        for (auto& d : e.shape) in >> d;
        in >> offset;
        entries.push_back(std::move(e));
    }
    std::getline(in, line);  // trailing newline
    std::getline(in, line);
    if (line != "data") throw TensorError("malformed checkpoint manifest: " + path);
    if (entries.size() != params.items().size())
        throw TensorError("checkpoint/model parameter count mismatch: file has " +
                          std::to_string(entries.size()) + ", model has " +
                          std::to_string(params.items().size()));
    for (const auto& e : entries) {
        Tensor* t = params.find(e.name);
        if (!t) throw TensorError("checkpoint has unknown parameter: " + e.name);
        if (t->shape != e.shape)
            throw TensorError("shape mismatch for " + e.name + ": checkpoint " +
                              Tensor(e.shape).shape_str() + " vs model " + t->shape_str());
        in.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(float)));
        if (!in) throw TensorError("truncated checkpoint payload: " + path);
    }
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TensorError("cannot open tensor file for writing: " + path);
    out << kTensorMagic << "\n" << t.ndim();
    for (int d : t.shape) out << " " << d;
    out << "\n";
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TensorError("cannot open tensor file: " + path);
    std::string line;
    std::getline(in, line);
    if (line != kTensorMagic) throw TensorError("bad tensor header in " + path);
    int ndim = 0;
    in >> ndim;
    std::vector<int> shape(static_cast<std::size_t>(ndim));
    for (auto& d : shape) in >> d;
    std::getline(in, line);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw TensorError("truncated tensor payload: " + path);
    return t;
}

}  // namespace sadrive
