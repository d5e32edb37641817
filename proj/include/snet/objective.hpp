#pragma once

// Losses (SI-SDR, SA-SDR), permutation-invariant training, the optimizer, and
// the training loop. SDR-family values are clamped to +-60 dB.

#include <functional>
#include <string>
#include <vector>

#include "snet/checkpoint.hpp"
#include "snet/fft.hpp"
#include "snet/model.hpp"
#include "snet/scene.hpp"
#include "snet/stft.hpp"

namespace snet {

constexpr double kSdrClampDb = 60.0;

// ---- plain metrics ----------------------------------------------------------

double si_sdr_db(const std::vector<double>& est, const std::vector<double>& ref);
double sdr_db(const std::vector<double>& est, const std::vector<double>& ref);
double sa_sdr_db(const std::vector<std::vector<double>>& ests,
                 const std::vector<std::vector<double>>& refs);

struct PitResult {
    std::vector<int> perm;  // est p is paired with ref perm[p]
    double value = 0;       // best metric (mean per-pair, or aggregate for sa_sdr)
    double loss = 0;        // -value
};

// Exhaustive assignment search, P <= 4. metric: "si_sdr" | "sdr" | "sa_sdr".
PitResult pit(const std::vector<std::vector<double>>& ests,
              const std::vector<std::vector<double>>& refs, const std::string& metric = "si_sdr");

// ---- gradient clipping / schedule --------------------------------------------

template <class S>
double clip_grad_norm(ParameterStore<S>& store, double max_norm) {
    double sq = 0.0;
    for (auto& e : store.entries()) {
        if (!e.trainable || !e.tensor.has_grad()) continue;
        for (S g : e.tensor.grad_view()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const S f = static_cast<S>(max_norm / norm);
        for (auto& e : store.entries()) {
            if (!e.trainable || !e.tensor.has_grad()) continue;
            for (S& g : e.tensor.grad()) g *= f;
        }
    }
    return norm;
}

inline double lr_at_epoch(double lr0, double decay, int64_t epoch) {
    return lr0 * std::pow(decay, static_cast<double>(epoch));
}

// ---- Adam --------------------------------------------------------------------

template <class S>
class Adam {
  public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParameterStore<S>& store, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& e : store.entries()) {
            if (!e.trainable) continue;
            auto& m = m_[e.name];
            auto& v = v_[e.name];
            if (m.empty()) {
                m.assign(e.tensor.numel(), 0.0);
                v.assign(e.tensor.numel(), 0.0);
            }
            if (!e.tensor.has_grad()) continue;
            const auto& g = e.tensor.grad_view();
            S* p = e.tensor.data();
            for (int64_t i = 0; i < e.tensor.numel(); ++i) {
                const double gi = double(g[i]);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    int64_t steps() const { return t_; }

    // Optimizer state as checkpoint blobs (names prefixed adam.m. / adam.v.).
    Checkpoint to_checkpoint(const ParameterStore<S>& store) const {
        Checkpoint c;
        c.step = t_;
        for (const auto& e : store.entries()) {
            auto mi = m_.find(e.name);
            if (mi == m_.end()) continue;
            TensorBlob bm{"adam.m." + e.name, e.tensor.shape(), {}};
            TensorBlob bv{"adam.v." + e.name, e.tensor.shape(), {}};
            bm.data.assign(mi->second.begin(), mi->second.end());
            const auto& vv = v_.at(e.name);
            bv.data.assign(vv.begin(), vv.end());
            c.tensors.push_back(std::move(bm));
            c.tensors.push_back(std::move(bv));
        }
        return c;
    }
    void from_checkpoint(const Checkpoint& c) {
        t_ = c.step;
        for (const auto& b : c.tensors) {
            if (b.name.rfind("adam.m.", 0) == 0)
                m_[b.name.substr(7)].assign(b.data.begin(), b.data.end());
            else if (b.name.rfind("adam.v.", 0) == 0)
                v_[b.name.substr(7)].assign(b.data.begin(), b.data.end());
        }
    }

  private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::unordered_map<std::string, std::vector<double>> m_, v_;
};

// ---- differentiable synthesis + graph losses ---------------------------------

// Inverse STFT of a single stream given as stacked (re, im) planes [F, T, 2].
// The map is linear in the coefficients; backward is its adjoint.
template <class S>
Tensor<S> istft_op(Tape<S>* tape, const Tensor<S>& spec2, int win) {
    if (spec2.ndim() != 3 || spec2.shape()[2] != 2)
        throw ShapeError("istft_op: expected [F,T,2]");
    const int64_t F = spec2.shape()[0], T = spec2.shape()[1];
    if (F != win / 2 + 1) throw ShapeError("istft_op: F does not match window length");
    const int hop = win / 2;
    const int64_t n = (T - 1) * hop + win;

    const auto w = hann_window(win);
    auto env = std::make_shared<std::vector<double>>(n, 0.0);
    for (int64_t t = 0; t < T; ++t)
        for (int i = 0; i < win; ++i) (*env)[t * hop + i] += w[i] * w[i];

    Tensor<S> out({n});
    {
        std::vector<double> acc(n, 0.0);
        std::vector<std::complex<double>> half(F);
        const S* ps = spec2.data();
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t f = 0; f < F; ++f)
                half[f] = {double(ps[(f * T + t) * 2]), double(ps[(f * T + t) * 2 + 1])};
            const auto frame = irfft(half, win);
            for (int i = 0; i < win; ++i) acc[t * hop + i] += frame[i] * w[i];
        }
        for (int64_t i = 0; i < n; ++i)
            out.data()[i] = static_cast<S>((*env)[i] > 1e-12 ? acc[i] / (*env)[i] : 0.0);
    }

    if (detail::want_grad(tape, {&spec2})) {
        out.set_requires_grad(true);
        tape->record(
            [spec2, out, env, w, F, T, win, hop]() mutable {
                if (!out.has_grad() || !spec2.requires_grad()) return;
                const S* g = out.grad_view().data();
                S* gs = spec2.grad().data();
                std::vector<double> seg(win);
                for (int64_t t = 0; t < T; ++t) {
                    for (int i = 0; i < win; ++i) {
                        const int64_t idx = t * hop + i;
                        const double e = (*env)[idx];
                        seg[i] = e > 1e-12 ? double(g[idx]) / e * w[i] : 0.0;
                    }
                    const auto G = rfft(seg);
                    for (int64_t f = 0; f < F; ++f) {
                        const double cf = (f == 0 || f == win / 2) ? 1.0 : 2.0;
                        gs[(f * T + t) * 2] += static_cast<S>(cf / win * G[f].real());
                        if (f != 0 && f != win / 2)
                            gs[(f * T + t) * 2 + 1] += static_cast<S>(cf / win * G[f].imag());
                    }
                }
            },
            out);
    }
    return out;
}

// SI-SDR in dB of est against a fixed reference, as a graph scalar.
template <class S>
Tensor<S> si_sdr_graph(Tape<S>* tape, const Tensor<S>& est, const std::vector<double>& ref) {
    if (est.numel() != static_cast<int64_t>(ref.size()))
        throw ShapeError("si_sdr_graph: length mismatch");
    double ref_e = 0.0;
    for (double v : ref) ref_e += v * v;
    if (ref_e <= 0.0) throw DataError("si_sdr: zero reference");
    std::vector<S> refs(ref.begin(), ref.end());
    auto refc = Tensor<S>::from_vector(est.shape(), std::move(refs));
    auto alpha = scale(tape, sum_all(tape, mul(tape, est, refc)), 1.0 / ref_e);
    auto target = scale_by(tape, refc, alpha);
    auto err = sub(tape, target, est);
    auto num = add_const(tape, sum_all(tape, mul(tape, target, target)), 1e-30);
    auto den = add_const(tape, sum_all(tape, mul(tape, err, err)), 1e-12 * ref_e + 1e-30);
    auto db = scale(tape, log_op(tape, div_scalar(tape, num, den)), 10.0 / std::log(10.0));
    return clamp_op(tape, db, -kSdrClampDb, kSdrClampDb);
}

// Source-aggregated SDR (not scale invariant) as a graph scalar.
template <class S>
Tensor<S> sa_sdr_graph(Tape<S>* tape, const std::vector<Tensor<S>>& ests,
                       const std::vector<std::vector<double>>& refs) {
    if (ests.empty() || ests.size() != refs.size()) throw ShapeError("sa_sdr_graph: size mismatch");
    double num = 0.0;
    for (const auto& r : refs)
        for (double v : r) num += v * v;
    if (num <= 0.0) throw DataError("sa_sdr: all-zero references");
    Tensor<S> den;
    bool first = true;
    for (size_t p = 0; p < ests.size(); ++p) {
        std::vector<S> rv(refs[p].begin(), refs[p].end());
        auto refc = Tensor<S>::from_vector(ests[p].shape(), std::move(rv));
        auto err = sub(tape, refc, ests[p]);
        auto e2 = sum_all(tape, mul(tape, err, err));
        den = first ? e2 : add(tape, den, e2);
        first = false;
    }
    den = add_const(tape, den, 1e-12 * num + 1e-30);
    auto numc = Tensor<S>::scalar(static_cast<S>(num));
    auto db = scale(tape, log_op(tape, div_scalar(tape, numc, den)), 10.0 / std::log(10.0));
    return clamp_op(tape, db, -kSdrClampDb, kSdrClampDb);
}

std::vector<std::vector<int>> permutations(int p);

// PIT loss: pick the assignment with plain-valued metrics, then build the graph
// only along the chosen pairing. loss = -(best metric).
template <class S>
struct PitGraph {
    std::vector<int> perm;
    Tensor<S> loss;
};

template <class S>
PitGraph<S> pit_loss_graph(Tape<S>* tape, const std::vector<Tensor<S>>& ests,
                           const std::vector<std::vector<double>>& refs,
                           const std::string& metric) {
    const int P = static_cast<int>(ests.size());
    if (P < 1 || P > 4) throw DataError("pit: speaker count must be 1..4");
    std::vector<std::vector<double>> est_vals(P);
    for (int p = 0; p < P; ++p)
        est_vals[p].assign(ests[p].data(), ests[p].data() + ests[p].numel());
    PitResult best = pit(est_vals, refs, metric);

    PitGraph<S> out;
    out.perm = best.perm;
    if (metric == "sa_sdr") {
        std::vector<std::vector<double>> pr(P);
        for (int p = 0; p < P; ++p) pr[p] = refs[best.perm[p]];
        out.loss = scale(tape, sa_sdr_graph(tape, ests, pr), -1.0);
    } else {
        Tensor<S> acc;
        for (int p = 0; p < P; ++p) {
            auto v = si_sdr_graph(tape, ests[p], refs[best.perm[p]]);
            acc = (p == 0) ? v : add(tape, acc, v);
        }
        out.loss = scale(tape, acc, -1.0 / P);
    }
    return out;
}

// ---- training ----------------------------------------------------------------

struct TrainConfig {
    int batch = 2;
    double utt_seconds = 4.0;
    double lr0 = 1e-3;
    double lr_decay = 0.99;
    double grad_clip = 5.0;
    int64_t epochs = 10;
    int64_t steps_per_epoch = 0;  // 0: one pass over the corpus per epoch
    uint64_t seed = 1;
    std::string loss = "si_sdr";  // si_sdr | sa_sdr
    int64_t save_every = 1;       // epochs between checkpoints
    int win = 0;                  // 0: 512 above 12 kHz, else 256

    void validate() const {
        if (batch < 1 || utt_seconds <= 0 || lr0 <= 0 || grad_clip <= 0 || epochs < 1 ||
            save_every < 1)
            throw UsageError("train config: values must be positive");
        if (lr_decay <= 0.0 || lr_decay > 1.0) throw UsageError("train config: decay in (0,1]");
        if (loss != "si_sdr" && loss != "sa_sdr")
            throw UsageError("train config: unknown loss " + loss);
    }
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainScene {
    Waveform mixture;
    std::vector<std::vector<double>> targets;
};

struct TrainRecord {
    int64_t step = 0;
    int64_t epoch = 0;
    double loss = 0;
    double lr = 0;
    double grad_norm = 0;
};

TrainScene load_scene(const SceneRecord& rec, const std::string& base_dir);

class Trainer {
  public:
    Trainer(Model<float>& model, TrainConfig cfg);

    // Trains in place; writes loss_curve.jsonl and per-epoch checkpoints under
    // out_dir (empty out_dir: nothing persisted). Aborts with NumericalError
    // and a diagnostic dump on non-finite loss.
    std::vector<TrainRecord> run(const std::vector<TrainScene>& scenes,
                                 const std::string& out_dir,
                                 const std::function<void(const TrainRecord&)>& on_step = {});

    void resume(const std::string& ckpt_path, const std::string& opt_path);
    int64_t start_epoch() const { return start_epoch_; }

    // One batch forward/backward/update; exposed for tests.
    TrainRecord train_step(const std::vector<TrainScene>& scenes,
                           const std::vector<int>& batch_idx, int64_t step, int64_t epoch);

  private:
    Model<float>& model_;
    TrainConfig cfg_;
    Adam<float> adam_;
    int64_t start_epoch_ = 0;
    std::string dump_dir_;
};

}  // namespace snet
