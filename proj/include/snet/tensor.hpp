#pragma once

// Dense real tensors with reverse-mode gradients. The op set is the minimum
// needed to express the enhancement network and its losses: affine maps,
// grouped 1-D convolution, normalizations, softmax, SiLU/PReLU, dropout,
// batched matmul and the shape-plumbing ops they require.
//
// Recording model: ops take an optional Tape*. With a tape, each op pushes a
// backward closure; recording order is execution order, so replaying the tape
// in reverse is a valid reverse topological traversal. Without a tape the op
// is a plain forward computation.
//
// Determinism: parallel loops always assign disjoint output slices to threads
// (owner-computes, static schedule); no cross-thread reductions. Reductions
// that feed attention (bmm, softmax, norm statistics) accumulate in double.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "snet/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace snet {

template <class S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // lazily allocated
    bool requires_grad = false;
    const void* producer = nullptr;  // tape that produced this tensor
};

template <class S>
class Tensor {
  public:
    Tensor() : p_(std::make_shared<TensorImpl<S>>()) {}
    explicit Tensor(Shape shape, S fill = S(0)) : p_(std::make_shared<TensorImpl<S>>()) {
        p_->shape = std::move(shape);
        p_->data.assign(numel_of(p_->shape), fill);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor from_vector(Shape shape, std::vector<S> values) {
        Tensor t;
        if (static_cast<int64_t>(values.size()) != numel_of(shape))
            throw ShapeError(sformat("from_vector: %zu values for shape %s", values.size(),
                                     shape_str(shape).c_str()));
        t.p_->shape = std::move(shape);
        t.p_->data = std::move(values);
        return t;
    }

    static Tensor scalar(S v) { return from_vector({1}, {v}); }

    static Tensor randu(Shape shape, Rng& rng, double lo, double hi) {
        Tensor t(shape);
        for (auto& v : t.p_->data) v = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stds = 1.0) {
        Tensor t(shape);
        for (auto& v : t.p_->data) v = static_cast<S>(stds * rng.normal());
        return t;
    }

    // Handle semantics: const applies to the handle, not the storage it
    // shares, mirroring shared_ptr.
    const Shape& shape() const { return p_->shape; }
    int64_t numel() const { return static_cast<int64_t>(p_->data.size()); }
    int64_t dim(int i) const { return p_->shape[i]; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }

    S* data() const { return p_->data.data(); }
    std::vector<S>& vec() const { return p_->data; }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool b) const { p_->requires_grad = b; }

    bool has_grad() const { return !p_->grad.empty(); }
    std::vector<S>& grad() const {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), S(0));
        return p_->grad;
    }
    const std::vector<S>& grad_view() const { return p_->grad; }
    void zero_grad() const {
        if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), S(0));
    }

    S item() const {
        if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
        return p_->data[0];
    }

    template <class... Ix>
    S& at(Ix... ix) const {
        return p_->data[flat_index_(ix...)];
    }

    TensorImpl<S>* impl() const { return p_.get(); }

  private:
    template <class... Ix>
    int64_t flat_index_(Ix... ix) const {
        const int64_t idx[] = {static_cast<int64_t>(ix)...};
        const int n = sizeof...(ix);
        if (n != ndim()) throw ShapeError("at: index rank mismatch");
        int64_t flat = 0;
        for (int i = 0; i < n; ++i) flat = flat * p_->shape[i] + idx[i];
        return flat;
    }
    std::shared_ptr<TensorImpl<S>> p_;
};

// ---------------------------------------------------------------------------

template <class S>
class Tape {
  public:
    using BackFn = std::function<void()>;

    void record(BackFn fn, const Tensor<S>& out) {
        ops_.push_back(std::move(fn));
        out.impl()->producer = this;
    }

    bool consumed() const { return consumed_; }
    size_t size() const { return ops_.size(); }

    void backward(Tensor<S> loss) {
        if (consumed_) throw NumericalError("backward: tape already consumed");
        if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar");
        if (loss.impl()->producer != this)
            throw NumericalError("backward: tensor was not recorded on this tape");
        loss.grad()[0] = S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        consumed_ = true;
    }

  private:
    std::vector<BackFn> ops_;
    bool consumed_ = false;
};

namespace detail {

template <class S>
inline bool want_grad(Tape<S>* tape, std::initializer_list<const Tensor<S>*> ins) {
    if (!tape) return false;
    for (const auto* t : ins)
        if (t && t->requires_grad()) return true;
    return false;
}

template <class S>
inline void check_finite_shape(const Shape&) {}

inline int64_t rows_before_last(const Shape& s) {
    int64_t n = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

// ---- elementwise ------------------------------------------------------------

template <class S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(sformat("add: shape mismatch %s vs %s", shape_str(a.shape()).c_str(),
                                 shape_str(b.shape()).c_str()));
    Tensor<S> out(a.shape());
    const int64_t n = a.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(
            [a, b, out]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const int64_t m = out.numel();
                if (a.requires_grad()) {
                    S* ga = a.grad().data();
                    for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
                }
                if (b.requires_grad()) {
                    S* gb = b.grad().data();
                    for (int64_t i = 0; i < m; ++i) gb[i] += g[i];
                }
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> sub(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(sformat("sub: shape mismatch %s vs %s", shape_str(a.shape()).c_str(),
                                 shape_str(b.shape()).c_str()));
    Tensor<S> out(a.shape());
    const int64_t n = a.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(
            [a, b, out]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const int64_t m = out.numel();
                if (a.requires_grad()) {
                    S* ga = a.grad().data();
                    for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
                }
                if (b.requires_grad()) {
                    S* gb = b.grad().data();
                    for (int64_t i = 0; i < m; ++i) gb[i] -= g[i];
                }
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(sformat("mul: shape mismatch %s vs %s", shape_str(a.shape()).c_str(),
                                 shape_str(b.shape()).c_str()));
    Tensor<S> out(a.shape());
    const int64_t n = a.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(
            [a, b, out]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const int64_t m = out.numel();
                if (a.requires_grad()) {
                    S* ga = a.grad().data();
                    const S* pb2 = b.data();
                    for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
                }
                if (b.requires_grad()) {
                    S* gb = b.grad().data();
                    const S* pa2 = a.data();
                    for (int64_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
                }
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& x, double c) {
    Tensor<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    const S cs = static_cast<S>(c);
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * cs;
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out, cs]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const int64_t m = out.numel();
                for (int64_t i = 0; i < m; ++i) gx[i] += g[i] * cs;
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> add_const(Tape<S>* tape, const Tensor<S>& x, double c) {
    Tensor<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    const S cs = static_cast<S>(c);
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] + cs;
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const int64_t m = out.numel();
                for (int64_t i = 0; i < m; ++i) gx[i] += g[i];
            },
            out);
    }
    return out;
}

// y = s * x, with s a scalar tensor in the graph.
template <class S>
Tensor<S> scale_by(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: scale must be a scalar tensor");
    Tensor<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    const S sv = s.data()[0];
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * sv;
    if (detail::want_grad(tape, {&x, &s})) {
        out.set_requires_grad(true);
        tape->record(
            [x, s, out]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const int64_t m = out.numel();
                if (x.requires_grad()) {
                    S* gx = x.grad().data();
                    const S sv2 = s.data()[0];
                    for (int64_t i = 0; i < m; ++i) gx[i] += g[i] * sv2;
                }
                if (s.requires_grad()) {
                    double acc = 0.0;
                    const S* px2 = x.data();
                    for (int64_t i = 0; i < m; ++i) acc += double(g[i]) * double(px2[i]);
                    s.grad()[0] += static_cast<S>(acc);
                }
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> sum_all(Tape<S>* tape, const Tensor<S>& x) {
    double acc = 0.0;
    const S* px = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += double(px[i]);
    Tensor<S> out = Tensor<S>::from_vector({1}, {static_cast<S>(acc)});
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S g = out.grad_view()[0];
                S* gx = x.grad().data();
                const int64_t m = x.numel();
                for (int64_t i = 0; i < m; ++i) gx[i] += g;
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> log_op(Tape<S>* tape, const Tensor<S>& x) {
    Tensor<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = std::log(px[i]);
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const S* px2 = x.data();
                const int64_t m = x.numel();
                for (int64_t i = 0; i < m; ++i) gx[i] += g[i] / px2[i];
            },
            out);
    }
    return out;
}

// Pass-through gradient inside [lo, hi], zero outside.
template <class S>
Tensor<S> clamp_op(Tape<S>* tape, const Tensor<S>& x, double lo, double hi) {
    Tensor<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i)
        po[i] = std::min(static_cast<S>(hi), std::max(static_cast<S>(lo), px[i]));
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out, lo, hi]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const S* px2 = x.data();
                const int64_t m = x.numel();
                for (int64_t i = 0; i < m; ++i)
                    if (px2[i] >= static_cast<S>(lo) && px2[i] <= static_cast<S>(hi))
                        gx[i] += g[i];
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> div_scalar(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.numel() != 1 || b.numel() != 1) throw ShapeError("div_scalar: scalars expected");
    Tensor<S> out = Tensor<S>::from_vector({1}, {a.data()[0] / b.data()[0]});
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(
            [a, b, out]() mutable {
                if (!out.has_grad()) return;
                const S g = out.grad_view()[0];
                const S av = a.data()[0];
                const S bv = b.data()[0];
                if (a.requires_grad()) a.grad()[0] += g / bv;
                if (b.requires_grad()) b.grad()[0] -= g * av / (bv * bv);
            },
            out);
    }
    return out;
}

// ---- shape plumbing ---------------------------------------------------------

template <class S>
Tensor<S> reshape(Tape<S>* tape, const Tensor<S>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        throw ShapeError(sformat("reshape: %s -> %s changes element count",
                                 shape_str(x.shape()).c_str(), shape_str(new_shape).c_str()));
    Tensor<S> out = Tensor<S>::from_vector(std::move(new_shape), x.vec());
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const int64_t m = x.numel();
                for (int64_t i = 0; i < m; ++i) gx[i] += g[i];
            },
            out);
    }
    return out;
}

namespace detail {
inline std::vector<int64_t> row_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}
}  // namespace detail

template <class S>
Tensor<S> permute(Tape<S>* tape, const Tensor<S>& x, const std::vector<int>& perm) {
    const int nd = x.ndim();
    if (static_cast<int>(perm.size()) != nd) throw ShapeError("permute: rank mismatch");
    std::vector<char> seen(nd, 0);
    Shape out_shape(nd);
    for (int i = 0; i < nd; ++i) {
        if (perm[i] < 0 || perm[i] >= nd || seen[perm[i]]) throw ShapeError("permute: bad axes");
        seen[perm[i]] = 1;
        out_shape[i] = x.shape()[perm[i]];
    }
    Tensor<S> out(out_shape);
    const auto in_st = detail::row_strides(x.shape());
    const auto out_st = detail::row_strides(out_shape);
    const S* px = x.data();
    S* po = out.data();
    const int64_t n = x.numel();
    std::vector<int64_t> map_stride(nd);  // stride in input for each output axis
    for (int i = 0; i < nd; ++i) map_stride[i] = in_st[perm[i]];
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o, src = 0;
        for (int i = 0; i < nd; ++i) {
            const int64_t q = rem / out_st[i];
            rem -= q * out_st[i];
            src += q * map_stride[i];
        }
        po[o] = px[src];
    }
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out, out_st, map_stride, nd]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const int64_t m = out.numel();
#pragma omp parallel for schedule(static) if (m > 16384)
                for (int64_t o = 0; o < m; ++o) {
                    int64_t rem = o, src = 0;
                    for (int i = 0; i < nd; ++i) {
                        const int64_t q = rem / out_st[i];
                        rem -= q * out_st[i];
                        src += q * map_stride[i];
                    }
#ifdef _OPENMP
#pragma omp atomic
#endif
                    gx[src] += g[o];
                }
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> slice_lastdim(Tape<S>* tape, const Tensor<S>& x, int64_t offset, int64_t len) {
    const int nd = x.ndim();
    if (nd < 1) throw ShapeError("slice_lastdim: rank 0");
    const int64_t C = x.shape()[nd - 1];
    if (offset < 0 || len <= 0 || offset + len > C)
        throw ShapeError(sformat("slice_lastdim: [%lld,%lld) out of %lld", (long long)offset,
                                 (long long)(offset + len), (long long)C));
    Shape os = x.shape();
    os[nd - 1] = len;
    Tensor<S> out(os);
    const int64_t rows = x.numel() / C;
    const S* px = x.data();
    S* po = out.data();
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(po + r * len, px + r * C + offset, sizeof(S) * len);
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out, offset, len, C, rows]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < len; ++j) gx[r * C + offset + j] += g[r * len + j];
            },
            out);
    }
    return out;
}

// ---- linear -----------------------------------------------------------------

template <class S>
Tensor<S> linear(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias) {
    if (w.ndim() != 2) throw ShapeError("linear: weight must be [Din,Dout]");
    const int64_t din = w.shape()[0];
    const int64_t dout = w.shape()[1];
    if (x.ndim() < 1 || x.shape()[x.ndim() - 1] != din)
        throw ShapeError(sformat("linear: input %s incompatible with weight %s",
                                 shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str()));
    if (bias && (bias->ndim() != 1 || bias->shape()[0] != dout))
        throw ShapeError("linear: bias must be [Dout]");

    Shape os = x.shape();
    os[os.size() - 1] = dout;
    Tensor<S> out(os);
    const int64_t rows = x.numel() / din;
    const S* px = x.data();
    const S* pw = w.data();
    const S* pb = bias ? bias->data() : nullptr;
    S* po = out.data();
#pragma omp parallel for schedule(static) if (rows * din * dout > 32768)
    for (int64_t r = 0; r < rows; ++r) {
        S* orow = po + r * dout;
        if (pb)
            std::memcpy(orow, pb, sizeof(S) * dout);
        else
            std::memset(orow, 0, sizeof(S) * dout);
        const S* xrow = px + r * din;
        for (int64_t k = 0; k < din; ++k) {
            const S xv = xrow[k];
            if (xv == S(0)) continue;
            const S* wrow = pw + k * dout;
            for (int64_t j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
        }
    }

    const Tensor<S> b = bias ? *bias : Tensor<S>();
    const bool has_b = bias != nullptr;
    if (detail::want_grad(tape, {&x, &w, bias})) {
        out.set_requires_grad(true);
        tape->record(
            [x, w, b, has_b, out, rows, din, dout]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                if (x.requires_grad()) {
                    S* gx = x.grad().data();
                    const S* pw2 = w.data();
#pragma omp parallel for schedule(static) if (rows * din * dout > 32768)
                    for (int64_t r = 0; r < rows; ++r) {
                        const S* grow = g + r * dout;
                        S* gxrow = gx + r * din;
                        for (int64_t k = 0; k < din; ++k) {
                            const S* wrow = pw2 + k * dout;
                            double acc = 0.0;
                            for (int64_t j = 0; j < dout; ++j)
                                acc += double(grow[j]) * double(wrow[j]);
                            gxrow[k] += static_cast<S>(acc);
                        }
                    }
                }
                if (w.requires_grad()) {
                    S* gw = w.grad().data();
                    const S* px2 = x.data();
#pragma omp parallel for schedule(static) if (rows * din * dout > 32768)
                    for (int64_t k = 0; k < din; ++k) {
                        S* gwrow = gw + k * dout;
                        for (int64_t r = 0; r < rows; ++r) {
                            const S xv = px2[r * din + k];
                            if (xv == S(0)) continue;
                            const S* grow = g + r * dout;
                            for (int64_t j = 0; j < dout; ++j) gwrow[j] += xv * grow[j];
                        }
                    }
                }
                if (has_b && b.requires_grad()) {
                    S* gb = b.grad().data();
                    for (int64_t r = 0; r < rows; ++r) {
                        const S* grow = g + r * dout;
                        for (int64_t j = 0; j < dout; ++j) gb[j] += grow[j];
                    }
                }
            },
            out);
    }
    return out;
}

// ---- grouped 1-D convolution along the middle axis of [B, T, Cin] ----------

template <class S>
Tensor<S> conv1d_grouped(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                         const Tensor<S>* bias, int64_t groups) {
    if (x.ndim() != 3) throw ShapeError("conv1d: input must be [B,T,Cin]");
    if (w.ndim() != 3) throw ShapeError("conv1d: kernel must be [Cout,Cin/G,K]");
    const int64_t B = x.shape()[0], T = x.shape()[1], cin = x.shape()[2];
    const int64_t cout = w.shape()[0], cpg = w.shape()[1], K = w.shape()[2];
    if (groups <= 0 || cin % groups != 0 || cout % groups != 0)
        throw ShapeError(sformat("conv1d: channels (%lld in, %lld out) not divisible by %lld groups",
                                 (long long)cin, (long long)cout, (long long)groups));
    if (cpg != cin / groups)
        throw ShapeError(sformat("conv1d: kernel expects %lld in-channels per group, input has %lld",
                                 (long long)cpg, (long long)(cin / groups)));
    if (K % 2 == 0) throw ShapeError("conv1d: kernel length must be odd");
    if (bias && (bias->ndim() != 1 || bias->shape()[0] != cout))
        throw ShapeError("conv1d: bias must be [Cout]");

    const int64_t h = K / 2;
    const int64_t opg = cout / groups;
    Tensor<S> out({B, T, cout});
    const S* px = x.data();
    const S* pw = w.data();
    const S* pb = bias ? bias->data() : nullptr;
    S* po = out.data();
#pragma omp parallel for schedule(static) if (B > 1)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            S* orow = po + (b * T + t) * cout;
            for (int64_t co = 0; co < cout; ++co) {
                const int64_t g0 = (co / opg) * cpg;
                double acc = pb ? double(pb[co]) : 0.0;
                const S* wk = pw + co * cpg * K;
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t tt = t + k - h;
                    if (tt < 0 || tt >= T) continue;
                    const S* xrow = px + (b * T + tt) * cin + g0;
                    for (int64_t ci = 0; ci < cpg; ++ci) acc += double(wk[ci * K + k]) * double(xrow[ci]);
                }
                orow[co] = static_cast<S>(acc);
            }
        }
    }

    const Tensor<S> bt = bias ? *bias : Tensor<S>();
    const bool has_b = bias != nullptr;
    if (detail::want_grad(tape, {&x, &w, bias})) {
        out.set_requires_grad(true);
        tape->record(
            [x, w, bt, has_b, out, B, T, cin, cout, cpg, K, h, opg]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const S* px2 = x.data();
                const S* pw2 = w.data();
                if (x.requires_grad()) {
                    S* gx = x.grad().data();
#pragma omp parallel for schedule(static) if (B > 1)
                    for (int64_t b = 0; b < B; ++b) {
                        for (int64_t t = 0; t < T; ++t) {
                            const S* grow = g + (b * T + t) * cout;
                            for (int64_t co = 0; co < cout; ++co) {
                                const S gv = grow[co];
                                if (gv == S(0)) continue;
                                const int64_t g0 = (co / opg) * cpg;
                                const S* wk = pw2 + co * cpg * K;
                                for (int64_t k = 0; k < K; ++k) {
                                    const int64_t tt = t + k - h;
                                    if (tt < 0 || tt >= T) continue;
                                    S* xg = gx + (b * T + tt) * cin + g0;
                                    for (int64_t ci = 0; ci < cpg; ++ci)
                                        xg[ci] += gv * wk[ci * K + k];
                                }
                            }
                        }
                    }
                }
                if (w.requires_grad()) {
                    S* gw = w.grad().data();
#pragma omp parallel for schedule(static) if (cout > 1)
                    for (int64_t co = 0; co < cout; ++co) {
                        const int64_t g0 = (co / opg) * cpg;
                        S* wk = gw + co * cpg * K;
                        for (int64_t b = 0; b < B; ++b) {
                            for (int64_t t = 0; t < T; ++t) {
                                const S gv = g[(b * T + t) * cout + co];
                                if (gv == S(0)) continue;
                                for (int64_t k = 0; k < K; ++k) {
                                    const int64_t tt = t + k - h;
                                    if (tt < 0 || tt >= T) continue;
                                    const S* xrow = px2 + (b * T + tt) * cin + g0;
                                    for (int64_t ci = 0; ci < cpg; ++ci)
                                        wk[ci * K + k] += gv * xrow[ci];
                                }
                            }
                        }
                    }
                }
                if (has_b && bt.requires_grad()) {
                    S* gb = bt.grad().data();
                    const int64_t rows = B * T;
                    for (int64_t r = 0; r < rows; ++r) {
                        const S* grow = g + r * cout;
                        for (int64_t co = 0; co < cout; ++co) gb[co] += grow[co];
                    }
                }
            },
            out);
    }
    return out;
}

// ---- normalizations ---------------------------------------------------------

// Per-position standardization over the last axis, then affine.
template <class S>
Tensor<S> layer_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, double eps = 1e-5) {
    const int nd = x.ndim();
    if (nd < 1) throw ShapeError("layer_norm: rank 0");
    const int64_t C = x.shape()[nd - 1];
    if (gain.numel() != C || bias.numel() != C)
        throw ShapeError("layer_norm: affine parameters must have last-dim size");
    const int64_t rows = x.numel() / C;
    Tensor<S> out(x.shape());
    auto stats = std::make_shared<std::vector<double>>(rows * 2);  // mean, inv_std
    const S* px = x.data();
    const S* pg = gain.data();
    const S* pb = bias.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (rows > 64)
    for (int64_t r = 0; r < rows; ++r) {
        const S* xr = px + r * C;
        double m = 0.0;
        for (int64_t c = 0; c < C; ++c) m += double(xr[c]);
        m /= double(C);
        double v = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = double(xr[c]) - m;
            v += d * d;
        }
        v /= double(C);
        const double inv = 1.0 / std::sqrt(v + eps);
        (*stats)[2 * r] = m;
        (*stats)[2 * r + 1] = inv;
        S* orow = po + r * C;
        for (int64_t c = 0; c < C; ++c)
            orow[c] = static_cast<S>((double(xr[c]) - m) * inv * double(pg[c]) + double(pb[c]));
    }
    if (detail::want_grad(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        tape->record(
            [x, gain, bias, out, stats, rows, C]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const S* px2 = x.data();
                const S* pg2 = gain.data();
                if (x.requires_grad()) {
                    S* gx = x.grad().data();
#pragma omp parallel for schedule(static) if (rows > 64)
                    for (int64_t r = 0; r < rows; ++r) {
                        const double m = (*stats)[2 * r];
                        const double inv = (*stats)[2 * r + 1];
                        const S* xr = px2 + r * C;
                        const S* gr = g + r * C;
                        double s1 = 0.0, s2 = 0.0;
                        for (int64_t c = 0; c < C; ++c) {
                            const double dxh = double(gr[c]) * double(pg2[c]);
                            const double xh = (double(xr[c]) - m) * inv;
                            s1 += dxh;
                            s2 += dxh * xh;
                        }
                        s1 /= double(C);
                        s2 /= double(C);
                        S* gxr = gx + r * C;
                        for (int64_t c = 0; c < C; ++c) {
                            const double dxh = double(gr[c]) * double(pg2[c]);
                            const double xh = (double(xr[c]) - m) * inv;
                            gxr[c] += static_cast<S>(inv * (dxh - s1 - xh * s2));
                        }
                    }
                }
                if (gain.requires_grad() || bias.requires_grad()) {
                    S* gg = gain.requires_grad() ? gain.grad().data() : nullptr;
                    S* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
                    for (int64_t r = 0; r < rows; ++r) {
                        const double m = (*stats)[2 * r];
                        const double inv = (*stats)[2 * r + 1];
                        const S* xr = px2 + r * C;
                        const S* gr = g + r * C;
                        for (int64_t c = 0; c < C; ++c) {
                            if (gg) gg[c] += static_cast<S>(double(gr[c]) * (double(xr[c]) - m) * inv);
                            if (gb) gb[c] += gr[c];
                        }
                    }
                }
            },
            out);
    }
    return out;
}

// Group normalization on [B, T, C]: statistics per (sample, group) over T x C/G.
template <class S>
Tensor<S> group_norm(Tape<S>* tape, const Tensor<S>& x, int64_t groups, const Tensor<S>& gain,
                     const Tensor<S>& bias, double eps = 1e-5) {
    if (x.ndim() != 3) throw ShapeError("group_norm: input must be [B,T,C]");
    const int64_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
    if (groups <= 0 || C % groups != 0)
        throw ShapeError(sformat("group_norm: %lld channels not divisible by %lld groups",
                                 (long long)C, (long long)groups));
    if (gain.numel() != C || bias.numel() != C)
        throw ShapeError("group_norm: affine parameters must be [C]");
    const int64_t cg = C / groups;
    Tensor<S> out(x.shape());
    auto stats = std::make_shared<std::vector<double>>(B * groups * 2);
    const S* px = x.data();
    const S* pg = gain.data();
    const S* pb = bias.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (B > 1)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t g = 0; g < groups; ++g) {
            const int64_t c0 = g * cg;
            double m = 0.0;
            for (int64_t t = 0; t < T; ++t) {
                const S* xr = px + (b * T + t) * C + c0;
                for (int64_t c = 0; c < cg; ++c) m += double(xr[c]);
            }
            m /= double(T * cg);
            double v = 0.0;
            for (int64_t t = 0; t < T; ++t) {
                const S* xr = px + (b * T + t) * C + c0;
                for (int64_t c = 0; c < cg; ++c) {
                    const double d = double(xr[c]) - m;
                    v += d * d;
                }
            }
            v /= double(T * cg);
            const double inv = 1.0 / std::sqrt(v + eps);
            (*stats)[(b * groups + g) * 2] = m;
            (*stats)[(b * groups + g) * 2 + 1] = inv;
            for (int64_t t = 0; t < T; ++t) {
                const S* xr = px + (b * T + t) * C + c0;
                S* orow = po + (b * T + t) * C + c0;
                for (int64_t c = 0; c < cg; ++c)
                    orow[c] = static_cast<S>((double(xr[c]) - m) * inv * double(pg[c0 + c]) +
                                             double(pb[c0 + c]));
            }
        }
    }
    if (detail::want_grad(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        tape->record(
            [x, gain, bias, out, stats, B, T, C, groups, cg]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const S* px2 = x.data();
                const S* pg2 = gain.data();
                if (x.requires_grad()) {
                    S* gx = x.grad().data();
                    const double n = double(T * cg);
#pragma omp parallel for schedule(static) if (B > 1)
                    for (int64_t b = 0; b < B; ++b) {
                        for (int64_t gi = 0; gi < groups; ++gi) {
                            const int64_t c0 = gi * cg;
                            const double m = (*stats)[(b * groups + gi) * 2];
                            const double inv = (*stats)[(b * groups + gi) * 2 + 1];
                            double s1 = 0.0, s2 = 0.0;
                            for (int64_t t = 0; t < T; ++t) {
                                const S* xr = px2 + (b * T + t) * C + c0;
                                const S* gr = g + (b * T + t) * C + c0;
                                for (int64_t c = 0; c < cg; ++c) {
                                    const double dxh = double(gr[c]) * double(pg2[c0 + c]);
                                    const double xh = (double(xr[c]) - m) * inv;
                                    s1 += dxh;
                                    s2 += dxh * xh;
                                }
                            }
                            s1 /= n;
                            s2 /= n;
                            for (int64_t t = 0; t < T; ++t) {
                                const S* xr = px2 + (b * T + t) * C + c0;
                                const S* gr = g + (b * T + t) * C + c0;
                                S* gxr = gx + (b * T + t) * C + c0;
                                for (int64_t c = 0; c < cg; ++c) {
                                    const double dxh = double(gr[c]) * double(pg2[c0 + c]);
                                    const double xh = (double(xr[c]) - m) * inv;
                                    gxr[c] += static_cast<S>(inv * (dxh - s1 - xh * s2));
                                }
                            }
                        }
                    }
                }
                if (gain.requires_grad() || bias.requires_grad()) {
                    S* gg = gain.requires_grad() ? gain.grad().data() : nullptr;
                    S* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
                    for (int64_t b = 0; b < B; ++b) {
                        for (int64_t gi = 0; gi < groups; ++gi) {
                            const int64_t c0 = gi * cg;
                            const double m = (*stats)[(b * groups + gi) * 2];
                            const double inv = (*stats)[(b * groups + gi) * 2 + 1];
                            for (int64_t t = 0; t < T; ++t) {
                                const S* xr = px2 + (b * T + t) * C + c0;
                                const S* gr = g + (b * T + t) * C + c0;
                                for (int64_t c = 0; c < cg; ++c) {
                                    if (gg)
                                        gg[c0 + c] += static_cast<S>(double(gr[c]) *
                                                                     (double(xr[c]) - m) * inv);
                                    if (gb) gb[c0 + c] += gr[c];
                                }
                            }
                        }
                    }
                }
            },
            out);
    }
    return out;
}

// ---- softmax / activations --------------------------------------------------

template <class S>
Tensor<S> softmax_lastdim(Tape<S>* tape, const Tensor<S>& x) {
    const int nd = x.ndim();
    if (nd < 1) throw ShapeError("softmax: rank 0");
    const int64_t C = x.shape()[nd - 1];
    const int64_t rows = x.numel() / C;
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (rows > 64)
    for (int64_t r = 0; r < rows; ++r) {
        const S* xr = px + r * C;
        double mx = -1e300;
        for (int64_t c = 0; c < C; ++c) mx = std::max(mx, double(xr[c]));
        double sum = 0.0;
        S* orow = po + r * C;
        for (int64_t c = 0; c < C; ++c) {
            const double e = std::exp(double(xr[c]) - mx);
            orow[c] = static_cast<S>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t c = 0; c < C; ++c) orow[c] = static_cast<S>(double(orow[c]) * inv);
    }
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out, rows, C]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                const S* y = out.data();
                S* gx = x.grad().data();
#pragma omp parallel for schedule(static) if (rows > 64)
                for (int64_t r = 0; r < rows; ++r) {
                    const S* yr = y + r * C;
                    const S* gr = g + r * C;
                    double s = 0.0;
                    for (int64_t c = 0; c < C; ++c) s += double(gr[c]) * double(yr[c]);
                    S* gxr = gx + r * C;
                    for (int64_t c = 0; c < C; ++c)
                        gxr[c] += static_cast<S>(double(yr[c]) * (double(gr[c]) - s));
                }
            },
            out);
    }
    return out;
}

template <class S>
Tensor<S> silu(Tape<S>* tape, const Tensor<S>& x) {
    Tensor<S> out(x.shape());
    const int64_t n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const double v = double(px[i]);
        po[i] = static_cast<S>(v / (1.0 + std::exp(-v)));
    }
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                const S* px2 = x.data();
                S* gx = x.grad().data();
                const int64_t m = x.numel();
                for (int64_t i = 0; i < m; ++i) {
                    const double v = double(px2[i]);
                    const double s = 1.0 / (1.0 + std::exp(-v));
                    gx[i] += static_cast<S>(double(g[i]) * (s + v * s * (1.0 - s)));
                }
            },
            out);
    }
    return out;
}

// Per-channel PReLU over the last axis.
template <class S>
Tensor<S> prelu(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& alpha) {
    const int nd = x.ndim();
    const int64_t C = x.shape()[nd - 1];
    if (alpha.numel() != C) throw ShapeError("prelu: alpha must match last dim");
    Tensor<S> out(x.shape());
    const int64_t rows = x.numel() / C;
    const S* px = x.data();
    const S* pa = alpha.data();
    S* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* xr = px + r * C;
        S* orow = po + r * C;
        for (int64_t c = 0; c < C; ++c) orow[c] = xr[c] > S(0) ? xr[c] : pa[c] * xr[c];
    }
    if (detail::want_grad(tape, {&x, &alpha})) {
        out.set_requires_grad(true);
        tape->record(
            [x, alpha, out, rows, C]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const S* px2 = x.data();
                const S* pa2 = alpha.data();
                if (x.requires_grad()) {
                    S* gx = x.grad().data();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < C; ++c) {
                            const int64_t i = r * C + c;
                            gx[i] += g[i] * (px2[i] > S(0) ? S(1) : pa2[c]);
                        }
                }
                if (alpha.requires_grad()) {
                    S* ga = alpha.grad().data();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < C; ++c) {
                            const int64_t i = r * C + c;
                            if (px2[i] <= S(0)) ga[c] += g[i] * px2[i];
                        }
                }
            },
            out);
    }
    return out;
}

// Inverted dropout; identity when not training. Deterministic given the rng.
template <class S>
Tensor<S> dropout(Tape<S>* tape, const Tensor<S>& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ShapeError(sformat("dropout: p=%g out of [0,1)", p));
    if (!training || p == 0.0) return x;
    const int64_t n = x.numel();
    auto mask = std::make_shared<std::vector<S>>(n);
    const double keep = 1.0 - p;
    const S scale_v = static_cast<S>(1.0 / keep);
    for (int64_t i = 0; i < n; ++i) (*mask)[i] = rng.uniform() < p ? S(0) : scale_v;
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * (*mask)[i];
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(
            [x, out, mask]() mutable {
                if (!out.has_grad() || !x.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gx = x.grad().data();
                const int64_t m = x.numel();
                for (int64_t i = 0; i < m; ++i) gx[i] += g[i] * (*mask)[i];
            },
            out);
    }
    return out;
}

// ---- batched matmul ---------------------------------------------------------

template <class S>
Tensor<S> bmm(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 3 || b.ndim() != 3) throw ShapeError("bmm: inputs must be rank-3");
    const int64_t B = a.shape()[0], N = a.shape()[1], K = a.shape()[2];
    if (b.shape()[0] != B || b.shape()[1] != K)
        throw ShapeError(sformat("bmm: %s x %s mismatch", shape_str(a.shape()).c_str(),
                                 shape_str(b.shape()).c_str()));
    const int64_t M = b.shape()[2];
    Tensor<S> out({B, N, M});
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
#pragma omp parallel for schedule(static) if (B * N > 8)
    for (int64_t bn = 0; bn < B * N; ++bn) {
        const int64_t bi = bn / N;
        const S* arow = pa + bn * K;
        const S* bmat = pb + bi * K * M;
        S* orow = po + bn * M;
        std::vector<double> acc(M, 0.0);
        for (int64_t k = 0; k < K; ++k) {
            const double av = double(arow[k]);
            if (av == 0.0) continue;
            const S* brow = bmat + k * M;
            for (int64_t m = 0; m < M; ++m) acc[m] += av * double(brow[m]);
        }
        for (int64_t m = 0; m < M; ++m) orow[m] = static_cast<S>(acc[m]);
    }
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(
            [a, b, out, B, N, K, M]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const S* pa2 = a.data();
                const S* pb2 = b.data();
                if (a.requires_grad()) {
                    S* ga = a.grad().data();
#pragma omp parallel for schedule(static) if (B * N > 8)
                    for (int64_t bn = 0; bn < B * N; ++bn) {
                        const int64_t bi = bn / N;
                        const S* grow = g + bn * M;
                        const S* bmat = pb2 + bi * K * M;
                        S* garow = ga + bn * K;
                        for (int64_t k = 0; k < K; ++k) {
                            const S* brow = bmat + k * M;
                            double acc = 0.0;
                            for (int64_t m = 0; m < M; ++m)
                                acc += double(grow[m]) * double(brow[m]);
                            garow[k] += static_cast<S>(acc);
                        }
                    }
                }
                if (b.requires_grad()) {
                    S* gb = b.grad().data();
#pragma omp parallel for schedule(static) if (B > 1)
                    for (int64_t bi = 0; bi < B; ++bi) {
                        const S* amat = pa2 + bi * N * K;
                        const S* gmat = g + bi * N * M;
                        S* gbmat = gb + bi * K * M;
                        for (int64_t n = 0; n < N; ++n) {
                            const S* arow = amat + n * K;
                            const S* grow = gmat + n * M;
                            for (int64_t k = 0; k < K; ++k) {
                                const S av = arow[k];
                                if (av == S(0)) continue;
                                S* gbrow = gbmat + k * M;
                                for (int64_t m = 0; m < M; ++m) gbrow[m] += av * grow[m];
                            }
                        }
                    }
                }
            },
            out);
    }
    return out;
}

// ---- per-channel frequency mixing: out[fo,t,c] = b[c,fo] + sum_fi w[c,fo,fi] x[fi,t,c]

template <class S>
Tensor<S> fbank_apply(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.ndim() != 3 || w.ndim() != 3 || b.ndim() != 2)
        throw ShapeError("fbank_apply: x[F,T,C], w[C,F,F], b[C,F] expected");
    const int64_t F = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
    if (w.shape()[0] != C || w.shape()[1] != F || w.shape()[2] != F || b.shape()[0] != C ||
        b.shape()[1] != F)
        throw ShapeError(sformat("fbank_apply: weight %s / bias %s incompatible with input %s",
                                 shape_str(w.shape()).c_str(), shape_str(b.shape()).c_str(),
                                 shape_str(x.shape()).c_str()));
    Tensor<S> out({F, T, C});
    const S* px = x.data();
    const S* pw = w.data();
    const S* pb = b.data();
    S* po = out.data();
    for (int64_t c = 0; c < C; ++c) {
        // gather channel plane [F,T]
        std::vector<S> xc(F * T);
        for (int64_t f = 0; f < F; ++f)
            for (int64_t t = 0; t < T; ++t) xc[f * T + t] = px[(f * T + t) * C + c];
        const S* wmat = pw + c * F * F;
#pragma omp parallel for schedule(static) if (F > 16)
        for (int64_t fo = 0; fo < F; ++fo) {
            const S* wrow = wmat + fo * F;
            std::vector<double> acc(T, double(pb[c * F + fo]));
            for (int64_t fi = 0; fi < F; ++fi) {
                const double wv = double(wrow[fi]);
                if (wv == 0.0) continue;
                const S* xrow = xc.data() + fi * T;
                for (int64_t t = 0; t < T; ++t) acc[t] += wv * double(xrow[t]);
            }
            for (int64_t t = 0; t < T; ++t) po[(fo * T + t) * C + c] = static_cast<S>(acc[t]);
        }
    }
    if (detail::want_grad(tape, {&x, &w, &b})) {
        out.set_requires_grad(true);
        tape->record(
            [x, w, b, out, F, T, C]() mutable {
                if (!out.has_grad()) return;
                const S* g = out.grad_view().data();
                const S* px2 = x.data();
                const S* pw2 = w.data();
                for (int64_t c = 0; c < C; ++c) {
                    std::vector<S> gc(F * T), xc(F * T);
                    for (int64_t f = 0; f < F; ++f)
                        for (int64_t t = 0; t < T; ++t) {
                            gc[f * T + t] = g[(f * T + t) * C + c];
                            xc[f * T + t] = px2[(f * T + t) * C + c];
                        }
                    const S* wmat = pw2 + c * F * F;
                    if (x.requires_grad()) {
                        S* gx = x.grad().data();
#pragma omp parallel for schedule(static) if (F > 16)
                        for (int64_t fi = 0; fi < F; ++fi) {
                            std::vector<double> acc(T, 0.0);
                            for (int64_t fo = 0; fo < F; ++fo) {
                                const double wv = double(wmat[fo * F + fi]);
                                if (wv == 0.0) continue;
                                const S* grow = gc.data() + fo * T;
                                for (int64_t t = 0; t < T; ++t) acc[t] += wv * double(grow[t]);
                            }
                            for (int64_t t = 0; t < T; ++t)
                                gx[(fi * T + t) * C + c] += static_cast<S>(acc[t]);
                        }
                    }
                    if (w.requires_grad()) {
                        S* gw = w.grad().data() + c * F * F;
#pragma omp parallel for schedule(static) if (F > 16)
                        for (int64_t fo = 0; fo < F; ++fo) {
                            const S* grow = gc.data() + fo * T;
                            S* gwrow = gw + fo * F;
                            for (int64_t fi = 0; fi < F; ++fi) {
                                const S* xrow = xc.data() + fi * T;
                                double acc = 0.0;
                                for (int64_t t = 0; t < T; ++t)
                                    acc += double(grow[t]) * double(xrow[t]);
                                gwrow[fi] += static_cast<S>(acc);
                            }
                        }
                    }
                    if (b.requires_grad()) {
                        S* gb = b.grad().data() + c * F;
                        for (int64_t fo = 0; fo < F; ++fo) {
                            const S* grow = gc.data() + fo * T;
                            double acc = 0.0;
                            for (int64_t t = 0; t < T; ++t) acc += double(grow[t]);
                            gb[fo] += static_cast<S>(acc);
                        }
                    }
                }
            },
            out);
    }
    return out;
}

}  // namespace snet
