#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "snet/tensor.hpp"

namespace snet {

// Flat, named, ordered weight set. Names are unique paths; entries keep their
// insertion order so checkpoints and optimizers see a stable layout.
template <class S>
class ParameterStore {
  public:
    struct Entry {
        std::string name;
        Tensor<S> tensor;
        bool trainable = true;
    };

    Tensor<S>& add(const std::string& name, Tensor<S> t, bool trainable = true) {
        if (by_name_.count(name)) throw DataError("parameter name not unique: " + name);
        by_name_[name] = entries_.size();
        entries_.push_back({name, std::move(t), trainable});
        Entry& e = entries_.back();
        e.tensor.set_requires_grad(trainable);
        return e.tensor;
    }

    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    Tensor<S>& get(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw DataError("no such parameter: " + name);
        return entries_[it->second].tensor;
    }
    const Tensor<S>& get(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw DataError("no such parameter: " + name);
        return entries_[it->second].tensor;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> by_name_;
};

// Uniform fan-in initialization, bound 1/sqrt(fan_in); biases use the same
// bound as their weight.
template <class S>
void init_uniform_fanin(Tensor<S>& t, int64_t fan_in, Rng rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.vec()) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
struct MhsaWeights {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Standard multi-head scaled-dot self-attention over [B, T, C]; no positional
// encoding. Optionally hands back the post-softmax scores [B*H, T, T].
template <class S>
Tensor<S> mhsa(Tape<S>* tape, const Tensor<S>& x, int heads, const MhsaWeights<S>& w,
               Tensor<S>* attn_scores = nullptr) {
    if (x.ndim() != 3) throw ShapeError("mhsa: input must be [B,T,C]");
    const int64_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
    if (heads <= 0 || C % heads != 0)
        throw ShapeError(sformat("mhsa: %lld channels not divisible by %d heads", (long long)C,
                                 heads));
    const int64_t dh = C / heads;

    auto split_heads = [&](const Tensor<S>& t) {
        auto r = reshape(tape, t, {B, T, heads, dh});
        auto p = permute(tape, r, {0, 2, 1, 3});  // [B,H,T,dh]
        return reshape(tape, p, {B * heads, T, dh});
    };

    auto q = split_heads(linear(tape, x, w.wq, &w.bq));
    auto k = split_heads(linear(tape, x, w.wk, &w.bk));
    auto v = split_heads(linear(tape, x, w.wv, &w.bv));

    auto kt = permute(tape, k, {0, 2, 1});  // [B*H, dh, T]
    auto scores = scale(tape, bmm(tape, q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn = softmax_lastdim(tape, scores);
    if (attn_scores) *attn_scores = attn;
    auto ctx = bmm(tape, attn, v);  // [B*H, T, dh]

    auto merged = reshape(tape, permute(tape, reshape(tape, ctx, {B, heads, T, dh}), {0, 2, 1, 3}),
                          {B, T, C});
    return linear(tape, merged, w.wo, &w.bo);
}

}  // namespace snet
