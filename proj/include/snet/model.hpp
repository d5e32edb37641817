#pragma once

// STFT-domain multichannel enhancement network: a convolutional input layer,
// L interleaved cross-band / narrow-band blocks, and a linear output layer.
// The hidden tensor is [F, T, C] throughout. Narrow-band blocks treat the
// frequency axis as batch; cross-band blocks treat the frame axis as batch.

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snet/nn.hpp"

namespace snet {

struct ModelConfig {
    int64_t num_blocks = 8;   // L
    int64_t dim_hidden = 96;  // C
    int64_t dim_ffn = 192;    // C'
    int64_t dim_squeeze = 8;  // C''
    int heads = 4;
    int64_t groups = 8;
    int64_t kernel_input = 5;
    int64_t kernel_time = 5;
    int64_t kernel_freq = 3;
    int64_t num_freqs = 257;   // F
    int64_t num_mics = 6;      // M
    int64_t num_speakers = 2;  // P
    double dropout_p = 0.0;

    // Ablation switches. plain_ffn swaps the T-ConvFFN for a two-linear FFN.
    bool enable_mhsa = true;
    bool enable_freq_conv = true;
    bool enable_full_band = true;
    bool plain_ffn = false;
    int64_t plain_ffn_hidden = 256;

    void validate() const {
        if (num_blocks < 1 || dim_hidden < 1 || dim_ffn < 1 || dim_squeeze < 1 || num_freqs < 1 ||
            num_mics < 1 || num_speakers < 1)
            throw ShapeError("model config: sizes must be positive");
        if (dim_hidden % heads != 0)
            throw ShapeError(sformat("model config: C=%lld not divisible by %d heads",
                                     (long long)dim_hidden, heads));
        if (dim_hidden % groups != 0 || dim_ffn % groups != 0)
            throw ShapeError("model config: hidden sizes not divisible by group count");
        if (kernel_input % 2 == 0 || kernel_time % 2 == 0 || kernel_freq % 2 == 0)
            throw ShapeError("model config: kernel sizes must be odd");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ShapeError("model config: dropout must be in [0,1)");
    }

    static ModelConfig small(int64_t F, int64_t M, int64_t P) {
        ModelConfig c;
        c.num_blocks = 8;
        c.dim_hidden = 96;
        c.dim_ffn = 192;
        c.dim_squeeze = 8;
        c.num_freqs = F;
        c.num_mics = M;
        c.num_speakers = P;
        return c;
    }
    static ModelConfig large(int64_t F, int64_t M, int64_t P) {
        ModelConfig c;
        c.num_blocks = 12;
        c.dim_hidden = 192;
        c.dim_ffn = 384;
        c.dim_squeeze = 16;
        c.num_freqs = F;
        c.num_mics = M;
        c.num_speakers = P;
        return c;
    }
    static ModelConfig tiny(int64_t F, int64_t M, int64_t P) {
        ModelConfig c;
        c.num_blocks = 2;
        c.dim_hidden = 24;
        c.dim_ffn = 48;
        c.dim_squeeze = 4;
        c.num_freqs = F;
        c.num_mics = M;
        c.num_speakers = P;
        return c;
    }

    nlohmann::json to_json() const {
        return {{"num_blocks", num_blocks},
                {"dim_hidden", dim_hidden},
                {"dim_ffn", dim_ffn},
                {"dim_squeeze", dim_squeeze},
                {"heads", heads},
                {"groups", groups},
                {"kernel_input", kernel_input},
                {"kernel_time", kernel_time},
                {"kernel_freq", kernel_freq},
                {"num_freqs", num_freqs},
                {"num_mics", num_mics},
                {"num_speakers", num_speakers},
                {"dropout_p", dropout_p},
                {"enable_mhsa", enable_mhsa},
                {"enable_freq_conv", enable_freq_conv},
                {"enable_full_band", enable_full_band},
                {"plain_ffn", plain_ffn},
                {"plain_ffn_hidden", plain_ffn_hidden}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.num_blocks = j.value("num_blocks", c.num_blocks);
        c.dim_hidden = j.value("dim_hidden", c.dim_hidden);
        c.dim_ffn = j.value("dim_ffn", c.dim_ffn);
        c.dim_squeeze = j.value("dim_squeeze", c.dim_squeeze);
        c.heads = j.value("heads", c.heads);
        c.groups = j.value("groups", c.groups);
        c.kernel_input = j.value("kernel_input", c.kernel_input);
        c.kernel_time = j.value("kernel_time", c.kernel_time);
        c.kernel_freq = j.value("kernel_freq", c.kernel_freq);
        c.num_freqs = j.value("num_freqs", c.num_freqs);
        c.num_mics = j.value("num_mics", c.num_mics);
        c.num_speakers = j.value("num_speakers", c.num_speakers);
        c.dropout_p = j.value("dropout_p", c.dropout_p);
        c.enable_mhsa = j.value("enable_mhsa", c.enable_mhsa);
        c.enable_freq_conv = j.value("enable_freq_conv", c.enable_freq_conv);
        c.enable_full_band = j.value("enable_full_band", c.enable_full_band);
        c.plain_ffn = j.value("plain_ffn", c.plain_ffn);
        c.plain_ffn_hidden = j.value("plain_ffn_hidden", c.plain_ffn_hidden);
        return c;
    }
    uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

template <class S>
class Model {
  public:
    struct ForwardCtx {
        Tape<S>* tape = nullptr;
        bool training = false;
        Rng* dropout_rng = nullptr;
        int attn_layer = -1;                // capture post-softmax scores of this block
        Tensor<S>* attn_scores = nullptr;   // out: [F*heads, T, T]
        // Called with (block_stage, hidden) after every cross-band (stage 2l)
        // and narrow-band (stage 2l+1) block.
        std::function<void(int, const Tensor<S>&)> block_tap;
    };

    Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterStore<S>& params() { return store_; }
    const ParameterStore<S>& params() const { return store_; }
    int64_t param_count() const { return store_.total_params(); }

    Tensor<S> forward(const Tensor<S>& x, ForwardCtx ctx = {}) {
        if (x.ndim() != 3 || x.shape()[0] != cfg_.num_freqs ||
            x.shape()[2] != 2 * cfg_.num_mics)
            throw ShapeError(sformat("forward: input %s, expected [%lld,T,%lld]",
                                     shape_str(x.shape()).c_str(), (long long)cfg_.num_freqs,
                                     (long long)(2 * cfg_.num_mics)));
        Tape<S>* tp = ctx.tape;
        Rng fallback_rng(0);
        Rng& drng = ctx.dropout_rng ? *ctx.dropout_rng : fallback_rng;

        auto h = conv1d_grouped(tp, x, store_.get("input.conv.weight"),
                                &store_.get("input.conv.bias"), 1);
        for (int64_t l = 0; l < cfg_.num_blocks; ++l) {
            h = cross_band_block(tp, h, l);
            if (ctx.block_tap) ctx.block_tap(static_cast<int>(2 * l), h);
            h = narrow_band_block(tp, h, l, ctx.training, drng,
                                  ctx.attn_layer == l ? ctx.attn_scores : nullptr);
            if (ctx.block_tap) ctx.block_tap(static_cast<int>(2 * l + 1), h);
        }
        return linear(tp, h, store_.get("output.weight"), &store_.get("output.bias"));
    }

    // One cross-band block: freq-conv module, full-band linear module,
    // freq-conv module. Frames are batch items.
    Tensor<S> cross_band_block(Tape<S>* tp, const Tensor<S>& h_in, int64_t l) {
        auto h = h_in;
        const std::string p = "blocks." + std::to_string(l) + ".cross.";
        if (cfg_.enable_freq_conv) h = freq_conv_module(tp, h, p + "fconv1.");
        if (cfg_.enable_full_band) {
            auto hq = silu(tp, linear(tp, h, store_.get(p + "squeeze.weight"),
                                      &store_.get(p + "squeeze.bias")));
            auto hb = fbank_apply(tp, hq, store_.get("fbank.weight"), store_.get("fbank.bias"));
            auto hu = silu(tp, linear(tp, hb, store_.get(p + "unsqueeze.weight"),
                                      &store_.get(p + "unsqueeze.bias")));
            h = add(tp, h, hu);
        }
        if (cfg_.enable_freq_conv) h = freq_conv_module(tp, h, p + "fconv2.");
        return h;
    }

    // One narrow-band block: residual MHSA module, residual T-ConvFFN.
    // Frequencies are batch items.
    Tensor<S> narrow_band_block(Tape<S>* tp, const Tensor<S>& h_in, int64_t l, bool training,
                                Rng& drng, Tensor<S>* attn_scores = nullptr) {
        auto h = h_in;
        const std::string p = "blocks." + std::to_string(l) + ".narrow.";
        if (cfg_.enable_mhsa) {
            auto u = layer_norm(tp, h, store_.get(p + "mhsa.norm.gain"),
                                store_.get(p + "mhsa.norm.bias"));
            MhsaWeights<S> w{store_.get(p + "mhsa.q.weight"),   store_.get(p + "mhsa.q.bias"),
                             store_.get(p + "mhsa.k.weight"),   store_.get(p + "mhsa.k.bias"),
                             store_.get(p + "mhsa.v.weight"),   store_.get(p + "mhsa.v.bias"),
                             store_.get(p + "mhsa.out.weight"), store_.get(p + "mhsa.out.bias")};
            auto a = mhsa(tp, u, cfg_.heads, w, attn_scores);
            a = dropout(tp, a, cfg_.dropout_p, training, drng);
            h = add(tp, h, a);
        }
        auto u = layer_norm(tp, h, store_.get(p + "ffn.norm.gain"), store_.get(p + "ffn.norm.bias"));
        if (cfg_.plain_ffn) {
            u = silu(tp, linear(tp, u, store_.get(p + "ffn.up.weight"),
                                &store_.get(p + "ffn.up.bias")));
            u = linear(tp, u, store_.get(p + "ffn.down.weight"), &store_.get(p + "ffn.down.bias"));
        } else {
            u = silu(tp, linear(tp, u, store_.get(p + "ffn.up.weight"),
                                &store_.get(p + "ffn.up.bias")));
            u = silu(tp, conv1d_grouped(tp, u, store_.get(p + "ffn.conv1.weight"),
                                        &store_.get(p + "ffn.conv1.bias"), cfg_.groups));
            u = conv1d_grouped(tp, u, store_.get(p + "ffn.conv2.weight"),
                               &store_.get(p + "ffn.conv2.bias"), cfg_.dim_ffn);
            u = silu(tp, group_norm(tp, u, cfg_.groups, store_.get(p + "ffn.gn.gain"),
                                    store_.get(p + "ffn.gn.bias")));
            u = silu(tp, conv1d_grouped(tp, u, store_.get(p + "ffn.conv3.weight"),
                                        &store_.get(p + "ffn.conv3.bias"), cfg_.groups));
            u = linear(tp, u, store_.get(p + "ffn.down.weight"), &store_.get(p + "ffn.down.bias"));
        }
        u = dropout(tp, u, cfg_.dropout_p, training, drng);
        return add(tp, h, u);
    }

    std::vector<std::pair<std::string, int64_t>> describe() const {
        std::vector<std::pair<std::string, int64_t>> out;
        for (const auto& e : store_.entries()) out.emplace_back(e.name, e.tensor.numel());
        return out;
    }

  private:
    Tensor<S> freq_conv_module(Tape<S>* tp, const Tensor<S>& h, const std::string& p) {
        auto u = layer_norm(tp, h, store_.get(p + "norm.gain"), store_.get(p + "norm.bias"));
        auto ut = permute(tp, u, {1, 0, 2});  // [T,F,C]: convolve along frequency
        auto c = conv1d_grouped(tp, ut, store_.get(p + "conv.weight"),
                                &store_.get(p + "conv.bias"), cfg_.groups);
        auto cb = permute(tp, c, {1, 0, 2});
        auto a = prelu(tp, cb, store_.get(p + "prelu.alpha"));
        return add(tp, h, a);
    }

    void add_linear_(const std::string& name, int64_t din, int64_t dout, const Rng& root) {
        auto& w = store_.add(name + ".weight", Tensor<S>({din, dout}));
        init_uniform_fanin(w, din, root.child(name + ".weight"));
        auto& b = store_.add(name + ".bias", Tensor<S>({dout}));
        init_uniform_fanin(b, din, root.child(name + ".bias"));
    }
    void add_conv_(const std::string& name, int64_t cout, int64_t cpg, int64_t k, const Rng& root) {
        auto& w = store_.add(name + ".weight", Tensor<S>({cout, cpg, k}));
        init_uniform_fanin(w, cpg * k, root.child(name + ".weight"));
        auto& b = store_.add(name + ".bias", Tensor<S>({cout}));
        init_uniform_fanin(b, cpg * k, root.child(name + ".bias"));
    }
    void add_norm_(const std::string& name, int64_t c) {
        store_.add(name + ".gain", Tensor<S>({c}, S(1)));
        store_.add(name + ".bias", Tensor<S>({c}, S(0)));
    }

    void build_(uint64_t seed) {
        const Rng root(seed);
        const int64_t C = cfg_.dim_hidden, Cf = cfg_.dim_ffn, Cq = cfg_.dim_squeeze;
        const int64_t F = cfg_.num_freqs, G = cfg_.groups;

        add_conv_("input.conv", C, 2 * cfg_.num_mics, cfg_.kernel_input, root);
        for (int64_t l = 0; l < cfg_.num_blocks; ++l) {
            const std::string cp = "blocks." + std::to_string(l) + ".cross.";
            if (cfg_.enable_freq_conv) {
                for (const std::string fc : {"fconv1.", "fconv2."}) {
                    add_norm_(cp + fc + "norm", C);
                    add_conv_(cp + fc + "conv", C, C / G, cfg_.kernel_freq, root);
                    auto& a = store_.add(cp + fc + "prelu.alpha", Tensor<S>({C}, S(0.25)));
                    (void)a;
                }
            }
            if (cfg_.enable_full_band) {
                add_linear_(cp + "squeeze", C, Cq, root);
                add_linear_(cp + "unsqueeze", Cq, C, root);
            }
            const std::string np = "blocks." + std::to_string(l) + ".narrow.";
            if (cfg_.enable_mhsa) {
                add_norm_(np + "mhsa.norm", C);
                add_linear_(np + "mhsa.q", C, C, root);
                add_linear_(np + "mhsa.k", C, C, root);
                add_linear_(np + "mhsa.v", C, C, root);
                add_linear_(np + "mhsa.out", C, C, root);
            }
            add_norm_(np + "ffn.norm", C);
            if (cfg_.plain_ffn) {
                add_linear_(np + "ffn.up", C, cfg_.plain_ffn_hidden, root);
                add_linear_(np + "ffn.down", cfg_.plain_ffn_hidden, C, root);
            } else {
                add_linear_(np + "ffn.up", C, Cf, root);
                add_conv_(np + "ffn.conv1", Cf, Cf / G, cfg_.kernel_time, root);
                add_conv_(np + "ffn.conv2", Cf, 1, cfg_.kernel_time, root);  // depthwise
                add_norm_(np + "ffn.gn", Cf);
                add_conv_(np + "ffn.conv3", Cf, Cf / G, cfg_.kernel_time, root);
                add_linear_(np + "ffn.down", Cf, C, root);
            }
        }
        if (cfg_.enable_full_band) {
            // One bank of per-channel F->F maps, shared by every cross-band block.
            auto& w = store_.add("fbank.weight", Tensor<S>({Cq, F, F}));
            init_uniform_fanin(w, F, root.child("fbank.weight"));
            auto& b = store_.add("fbank.bias", Tensor<S>({Cq, F}));
            init_uniform_fanin(b, F, root.child("fbank.bias"));
        }
        add_linear_("output", C, 2 * cfg_.num_speakers, root);
    }

    ModelConfig cfg_;
    ParameterStore<S> store_;
};

// ---------------------------------------------------------------------------
// Analytic multiply-accumulate counts for the weight-bearing layers, reported
// in G (1e9 MACs) per second of audio at the given duration.

struct FlopsBreakdown {
    double input = 0, mhsa = 0, tconvffn = 0, freq_conv = 0, full_band = 0, output = 0;
    double total() const { return input + mhsa + tconvffn + freq_conv + full_band + output; }
};

inline FlopsBreakdown count_flops(const ModelConfig& cfg, double duration_s, int sample_rate) {
    FlopsBreakdown out;
    if (duration_s <= 0.0) return out;
    const int64_t win = 2 * (cfg.num_freqs - 1);
    const int64_t hop = win / 2;
    const int64_t n = static_cast<int64_t>(duration_s * sample_rate);
    if (n < win) return out;
    const double T = static_cast<double>((n - win) / hop + 1);
    const double F = static_cast<double>(cfg.num_freqs);
    const double C = static_cast<double>(cfg.dim_hidden);
    const double Cf = static_cast<double>(cfg.dim_ffn);
    const double Cq = static_cast<double>(cfg.dim_squeeze);
    const double L = static_cast<double>(cfg.num_blocks);
    const double tokens = F * T;
    const double giga = 1e9 * duration_s;

    out.input = 2.0 * cfg.num_mics * cfg.kernel_input * C * tokens / giga;
    out.output = C * 2.0 * cfg.num_speakers * tokens / giga;
    if (cfg.enable_mhsa)
        out.mhsa = L * (4.0 * C * C * tokens + 2.0 * F * T * T * C) / giga;
    if (cfg.plain_ffn) {
        out.tconvffn = L * 2.0 * C * cfg.plain_ffn_hidden * tokens / giga;
    } else {
        const double convs = (2.0 * Cf * (Cf / cfg.groups) + Cf) * cfg.kernel_time;
        out.tconvffn = L * (2.0 * C * Cf + convs) * tokens / giga;
    }
    if (cfg.enable_freq_conv)
        out.freq_conv = L * 2.0 * C * (C / cfg.groups) * cfg.kernel_freq * tokens / giga;
    if (cfg.enable_full_band)
        out.full_band = L * (2.0 * C * Cq * tokens + Cq * F * F * T) / giga;
    return out;
}

}  // namespace snet
