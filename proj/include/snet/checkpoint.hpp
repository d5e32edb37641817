#pragma once

#include <string>
#include <vector>

#include "snet/nn.hpp"

namespace snet {

struct TensorBlob {
    std::string name;
    Shape shape;
    std::vector<float> data;  // 32-bit little-endian on disk
};

struct Checkpoint {
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    int64_t epoch = 0;
    int64_t step = 0;
    std::string config_json;
    std::vector<TensorBlob> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Elementwise mean over checkpoints with identical tensor names and shapes.
Checkpoint average_checkpoints(const std::vector<std::string>& paths);

template <class S>
Checkpoint store_to_checkpoint(const ParameterStore<S>& store) {
    Checkpoint c;
    for (const auto& e : store.entries()) {
        TensorBlob b;
        b.name = e.name;
        b.shape = e.tensor.shape();
        b.data.resize(e.tensor.numel());
        for (int64_t i = 0; i < e.tensor.numel(); ++i)
            b.data[i] = static_cast<float>(e.tensor.data()[i]);
        c.tensors.push_back(std::move(b));
    }
    return c;
}

template <class S>
void checkpoint_to_store(const Checkpoint& c, ParameterStore<S>& store) {
    if (c.tensors.size() != store.entries().size())
        throw DataError(sformat("checkpoint: %zu tensors, model has %zu", c.tensors.size(),
                                store.entries().size()));
    for (const auto& b : c.tensors) {
        auto& t = store.get(b.name);
        if (t.shape() != b.shape)
            throw DataError(sformat("checkpoint: shape mismatch for %s (%s vs %s)",
                                    b.name.c_str(), shape_str(b.shape).c_str(),
                                    shape_str(t.shape()).c_str()));
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(b.data[i]);
    }
}

}  // namespace snet
