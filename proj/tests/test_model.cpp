#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "snet/model.hpp"

using namespace snet;

namespace {

template <class S>
Tensor<S> rand_t(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng r(seed);
    return Tensor<S>::randu(std::move(s), r, lo, hi);
}

// Closed-form parameter count, written independently of the builder.
int64_t expected_params(const ModelConfig& c) {
    const int64_t C = c.dim_hidden, Cf = c.dim_ffn, Cq = c.dim_squeeze, F = c.num_freqs,
                  G = c.groups;
    const int64_t mhsa = 2 * C + 4 * (C * C + C);
    const int64_t tconvffn = 2 * C + (C * Cf + Cf) + (Cf * (Cf / G) * c.kernel_time + Cf) +
                             (Cf * c.kernel_time + Cf) + 2 * Cf +
                             (Cf * (Cf / G) * c.kernel_time + Cf) + (Cf * C + C);
    const int64_t fconv = 2 * C + C * (C / G) * c.kernel_freq + C + C;
    const int64_t full = (C * Cq + Cq) + (Cq * C + C);
    const int64_t per_block = mhsa + tconvffn + 2 * fconv + full;
    const int64_t fbank = Cq * F * (F + 1);
    const int64_t input = 2 * c.num_mics * C * c.kernel_input + C;
    const int64_t output = C * 2 * c.num_speakers + 2 * c.num_speakers;
    return input + c.num_blocks * per_block + fbank + output;
}

}  // namespace

TEST_CASE("parameter counts match the published model sizes") {
    struct Row {
        ModelConfig cfg;
        double expect_m;
    };
    const std::vector<Row> rows = {{ModelConfig::small(129, 6, 2), 1.2e6},
                                   {ModelConfig::small(257, 6, 2), 1.6e6},
                                   {ModelConfig::large(129, 6, 2), 6.5e6},
                                   {ModelConfig::large(257, 6, 2), 7.3e6}};
    for (const auto& row : rows) {
        Model<float> m(row.cfg, 1);
        CHECK(m.param_count() == expected_params(row.cfg));
        const double rel = std::abs(m.param_count() - row.expect_m) / row.expect_m;
        INFO("expected " << row.expect_m << " got " << m.param_count());
        CHECK(rel < 0.02);
    }
}

TEST_CASE("config divisibility violations are rejected") {
    auto cfg = ModelConfig::small(129, 6, 2);
    cfg.dim_hidden = 90;  // not divisible by 4 heads / 8 groups
    CHECK_THROWS_AS(Model<float>(cfg, 1), ShapeError);
    auto cfg2 = ModelConfig::small(129, 6, 2);
    cfg2.kernel_time = 4;
    CHECK_THROWS_AS(Model<float>(cfg2, 1), ShapeError);
}

TEST_CASE("input layer: zero input yields the bias at every position") {
    auto cfg = ModelConfig::tiny(9, 2, 2);
    Model<double> m(cfg, 7);
    auto x = Tensor<double>::zeros({9, 8, 4});
    auto h = conv1d_grouped<double>(nullptr, x, m.params().get("input.conv.weight"),
                                    &m.params().get("input.conv.bias"), 1);
    CHECK(h.shape() == Shape{9, 8, cfg.dim_hidden});
    const auto& bias = m.params().get("input.conv.bias");
    for (int64_t f = 0; f < 9; ++f)
        for (int64_t t = 0; t < 8; ++t)
            for (int64_t c = 0; c < cfg.dim_hidden; ++c)
                CHECK(h.at(f, t, c) == doctest::Approx(bias.at(c)).epsilon(1e-12));
}

TEST_CASE("narrow-band block is frequency-permutation equivariant") {
    auto cfg = ModelConfig::tiny(12, 2, 2);
    Model<float> m(cfg, 9);
    auto h = rand_t<float>({12, 7, cfg.dim_hidden}, 10);
    Rng drng(0);
    auto y = m.narrow_band_block(nullptr, h, 0, false, drng);

    std::vector<int> perm = {5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6};
    auto hp = Tensor<float>::zeros(h.shape());
    for (int64_t f = 0; f < 12; ++f)
        for (int64_t t = 0; t < 7; ++t)
            for (int64_t c = 0; c < cfg.dim_hidden; ++c) hp.at(f, t, c) = h.at(perm[f], t, c);
    auto yp = m.narrow_band_block(nullptr, hp, 0, false, drng);
    float max_diff = 0;
    for (int64_t f = 0; f < 12; ++f)
        for (int64_t t = 0; t < 7; ++t)
            for (int64_t c = 0; c < cfg.dim_hidden; ++c)
                max_diff = std::max(max_diff, std::abs(yp.at(f, t, c) - y.at(perm[f], t, c)));
    CHECK(max_diff <= 1e-6f);
}

TEST_CASE("cross-band block is time-permutation equivariant") {
    auto cfg = ModelConfig::tiny(10, 2, 2);
    Model<float> m(cfg, 11);
    auto h = rand_t<float>({10, 9, cfg.dim_hidden}, 12);
    auto y = m.cross_band_block(nullptr, h, 0);
    std::vector<int> perm = {4, 8, 0, 6, 2, 7, 1, 5, 3};
    auto hp = Tensor<float>::zeros(h.shape());
    for (int64_t f = 0; f < 10; ++f)
        for (int64_t t = 0; t < 9; ++t)
            for (int64_t c = 0; c < cfg.dim_hidden; ++c) hp.at(f, t, c) = h.at(f, perm[t], c);
    auto yp = m.cross_band_block(nullptr, hp, 0);
    float max_diff = 0;
    for (int64_t f = 0; f < 10; ++f)
        for (int64_t t = 0; t < 9; ++t)
            for (int64_t c = 0; c < cfg.dim_hidden; ++c)
                max_diff = std::max(max_diff, std::abs(yp.at(f, t, c) - y.at(f, perm[t], c)));
    CHECK(max_diff <= 1e-6f);
}

TEST_CASE("zeroed non-residual paths reduce both blocks to identity") {
    auto cfg = ModelConfig::tiny(8, 2, 2);
    Model<float> m(cfg, 13);
    auto& st = m.params();
    for (const std::string l : {"0", "1"}) {
        for (const std::string leaf :
             {".narrow.mhsa.out.weight", ".narrow.mhsa.out.bias", ".narrow.ffn.down.weight",
              ".narrow.ffn.down.bias", ".cross.fconv1.conv.weight", ".cross.fconv1.conv.bias",
              ".cross.fconv2.conv.weight", ".cross.fconv2.conv.bias", ".cross.unsqueeze.weight",
              ".cross.unsqueeze.bias"}) {
            auto& t = st.get("blocks." + l + leaf);
            std::fill(t.vec().begin(), t.vec().end(), 0.0f);
        }
    }
    auto h = rand_t<float>({8, 6, cfg.dim_hidden}, 14);
    Rng drng(0);
    auto y1 = m.narrow_band_block(nullptr, h, 0, false, drng);
    auto y2 = m.cross_band_block(nullptr, h, 0);
    for (int64_t i = 0; i < h.numel(); ++i) {
        CHECK(y1.data()[i] == h.data()[i]);
        CHECK(y2.data()[i] == h.data()[i]);
    }
}

// Straight-line re-implementation of the narrow-band block with plain loops.
TEST_CASE("narrow-band block matches an independent re-implementation") {
    ModelConfig cfg;
    cfg.num_blocks = 1;
    cfg.dim_hidden = 8;
    cfg.dim_ffn = 16;
    cfg.dim_squeeze = 4;
    cfg.heads = 4;
    cfg.groups = 8;
    cfg.num_freqs = 1;
    cfg.num_mics = 1;
    cfg.num_speakers = 1;
    Model<double> m(cfg, 15);
    const int64_t T = 6, C = 8, Cf = 16, H = 4, dh = C / H;
    auto h = rand_t<double>({1, T, C}, 16);
    Rng drng(0);
    auto got = m.narrow_band_block(nullptr, h, 0, false, drng);

    auto& st = m.params();
    auto W = [&](const std::string& n) { return st.get("blocks.0.narrow." + n).data(); };
    const double eps = 1e-5;

    auto layer_norm_ref = [&](const std::vector<std::vector<double>>& x, const double* g,
                              const double* b) {
        std::vector<std::vector<double>> y(x.size(), std::vector<double>(x[0].size()));
        for (size_t t = 0; t < x.size(); ++t) {
            double mean = 0, var = 0;
            for (double v : x[t]) mean += v;
            mean /= x[t].size();
            for (double v : x[t]) var += (v - mean) * (v - mean);
            var /= x[t].size();
            for (size_t c = 0; c < x[t].size(); ++c)
                y[t][c] = (x[t][c] - mean) / std::sqrt(var + eps) * g[c] + b[c];
        }
        return y;
    };
    auto matvec = [&](const std::vector<double>& x, const double* w, const double* b,
                      int64_t din, int64_t dout) {
        std::vector<double> y(dout);
        for (int64_t j = 0; j < dout; ++j) {
            double acc = b[j];
            for (int64_t k = 0; k < din; ++k) acc += x[k] * w[k * dout + j];
            y[j] = acc;
        }
        return y;
    };
    auto silu_ref = [](double v) { return v / (1.0 + std::exp(-v)); };

    std::vector<std::vector<double>> hin(T, std::vector<double>(C));
    for (int64_t t = 0; t < T; ++t)
        for (int64_t c = 0; c < C; ++c) hin[t][c] = h.at(0, t, c);

    // attention module
    auto u = layer_norm_ref(hin, W("mhsa.norm.gain"), W("mhsa.norm.bias"));
    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (int64_t t = 0; t < T; ++t) {
        q[t] = matvec(u[t], W("mhsa.q.weight"), W("mhsa.q.bias"), C, C);
        k[t] = matvec(u[t], W("mhsa.k.weight"), W("mhsa.k.bias"), C, C);
        v[t] = matvec(u[t], W("mhsa.v.weight"), W("mhsa.v.bias"), C, C);
    }
    std::vector<std::vector<double>> ctx(T, std::vector<double>(C, 0.0));
    for (int64_t head = 0; head < H; ++head) {
        for (int64_t ti = 0; ti < T; ++ti) {
            std::vector<double> scores(T);
            for (int64_t tj = 0; tj < T; ++tj) {
                double s = 0;
                for (int64_t d = 0; d < dh; ++d)
                    s += q[ti][head * dh + d] * k[tj][head * dh + d];
                scores[tj] = s / std::sqrt(static_cast<double>(dh));
            }
            double mx = *std::max_element(scores.begin(), scores.end());
            double sum = 0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                sum += s;
            }
            for (auto& s : scores) s /= sum;
            for (int64_t tj = 0; tj < T; ++tj)
                for (int64_t d = 0; d < dh; ++d)
                    ctx[ti][head * dh + d] += scores[tj] * v[tj][head * dh + d];
        }
    }
    std::vector<std::vector<double>> h1(T);
    for (int64_t t = 0; t < T; ++t) {
        auto o = matvec(ctx[t], W("mhsa.out.weight"), W("mhsa.out.bias"), C, C);
        h1[t] = hin[t];
        for (int64_t c = 0; c < C; ++c) h1[t][c] += o[c];
    }

    // T-ConvFFN
    auto u2 = layer_norm_ref(h1, W("ffn.norm.gain"), W("ffn.norm.bias"));
    std::vector<std::vector<double>> a(T);
    for (int64_t t = 0; t < T; ++t) {
        a[t] = matvec(u2[t], W("ffn.up.weight"), W("ffn.up.bias"), C, Cf);
        for (auto& vv : a[t]) vv = silu_ref(vv);
    }
    auto conv_ref = [&](const std::vector<std::vector<double>>& x, const double* w,
                        const double* b, int64_t groups, int64_t kk) {
        const int64_t ch = x[0].size();
        const int64_t cpg = ch / groups, opg = ch / groups;
        std::vector<std::vector<double>> y(T, std::vector<double>(ch));
        for (int64_t t = 0; t < T; ++t)
            for (int64_t co = 0; co < ch; ++co) {
                double acc = b[co];
                const int64_t g0 = (co / opg) * cpg;
                for (int64_t kx = 0; kx < kk; ++kx) {
                    const int64_t tt = t + kx - kk / 2;
                    if (tt < 0 || tt >= T) continue;
                    for (int64_t ci = 0; ci < cpg; ++ci)
                        acc += w[(co * cpg + ci) * kk + kx] * x[tt][g0 + ci];
                }
                y[t][co] = acc;
            }
        return y;
    };
    a = conv_ref(a, W("ffn.conv1.weight"), W("ffn.conv1.bias"), 8, 5);
    for (auto& row : a)
        for (auto& vv : row) vv = silu_ref(vv);
    a = conv_ref(a, W("ffn.conv2.weight"), W("ffn.conv2.bias"), Cf, 5);  // depthwise
    // group norm over (T, channels-per-group), then silu
    {
        const int64_t G = 8, cg = Cf / G;
        const double* gg = W("ffn.gn.gain");
        const double* gb = W("ffn.gn.bias");
        std::vector<std::vector<double>> y(T, std::vector<double>(Cf));
        for (int64_t grp = 0; grp < G; ++grp) {
            double mean = 0, var = 0;
            for (int64_t t = 0; t < T; ++t)
                for (int64_t c = 0; c < cg; ++c) mean += a[t][grp * cg + c];
            mean /= (T * cg);
            for (int64_t t = 0; t < T; ++t)
                for (int64_t c = 0; c < cg; ++c) {
                    const double d = a[t][grp * cg + c] - mean;
                    var += d * d;
                }
            var /= (T * cg);
            for (int64_t t = 0; t < T; ++t)
                for (int64_t c = 0; c < cg; ++c)
                    y[t][grp * cg + c] = (a[t][grp * cg + c] - mean) / std::sqrt(var + eps) *
                                             gg[grp * cg + c] +
                                         gb[grp * cg + c];
        }
        a = y;
        for (auto& row : a)
            for (auto& vv : row) vv = silu_ref(vv);
    }
    a = conv_ref(a, W("ffn.conv3.weight"), W("ffn.conv3.bias"), 8, 5);
    for (auto& row : a)
        for (auto& vv : row) vv = silu_ref(vv);
    for (int64_t t = 0; t < T; ++t) {
        auto d = matvec(a[t], W("ffn.down.weight"), W("ffn.down.bias"), Cf, C);
        for (int64_t c = 0; c < C; ++c) h1[t][c] += d[c];
    }

    double max_err = 0;
    for (int64_t t = 0; t < T; ++t)
        for (int64_t c = 0; c < C; ++c)
            max_err = std::max(max_err, std::abs(got.at(0, t, c) - h1[t][c]));
    CHECK(max_err < 1e-6);
}

TEST_CASE("full-band bank size and shared-instance behaviour") {
    auto cfg = ModelConfig::small(129, 6, 2);
    Model<float> m(cfg, 17);
    const auto& wb = m.params().get("fbank.weight");
    const auto& bb = m.params().get("fbank.bias");
    CHECK(wb.numel() + bb.numel() == 8 * 129 * 130);  // C'' * F * (F+1)

    // Mutating any bank weight must change the output of every cross-band block.
    auto tiny = ModelConfig::tiny(16, 2, 2);
    Model<float> mt(tiny, 18);
    auto x = rand_t<float>({16, 10, 2 * tiny.num_mics}, 19);
    auto capture = [&]() {
        std::vector<Tensor<float>> taps;
        typename Model<float>::ForwardCtx ctx;
        ctx.block_tap = [&](int stage, const Tensor<float>& h) {
            if (stage % 2 == 0) taps.push_back(h);  // after each cross-band block
        };
        mt.forward(x, ctx);
        return taps;
    };
    auto before = capture();
    mt.params().get("fbank.weight").at(1, 3, 4) += 0.5f;
    auto after = capture();
    REQUIRE(before.size() == static_cast<size_t>(tiny.num_blocks));
    for (size_t l = 0; l < before.size(); ++l) {
        double diff = 0;
        for (int64_t i = 0; i < before[l].numel(); ++i)
            diff = std::max(diff, std::abs(double(before[l].data()[i] - after[l].data()[i])));
        INFO("cross-band block " << l);
        CHECK(diff > 0.0);
    }
}

TEST_CASE("forward shape contract, determinism, and input checks") {
    auto cfg = ModelConfig::tiny(9, 2, 3);
    Model<float> m(cfg, 21);
    auto x = rand_t<float>({9, 11, 4}, 22);
    auto y1 = m.forward(x);
    CHECK(y1.shape() == Shape{9, 11, 6});
    auto y2 = m.forward(x);
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);

    auto bad = rand_t<float>({10, 11, 4}, 23);
    CHECK_THROWS_AS(m.forward(bad), ShapeError);
}

TEST_CASE("with cross-band blocks ablated the network is frequency equivariant") {
    auto cfg = ModelConfig::tiny(10, 2, 2);
    cfg.enable_freq_conv = false;
    cfg.enable_full_band = false;
    Model<float> m(cfg, 25);
    auto x = rand_t<float>({10, 8, 4}, 26);
    auto y = m.forward(x);
    std::vector<int> perm = {7, 2, 9, 0, 5, 1, 8, 3, 6, 4};
    auto xp = Tensor<float>::zeros(x.shape());
    for (int64_t f = 0; f < 10; ++f)
        for (int64_t t = 0; t < 8; ++t)
            for (int64_t c = 0; c < 4; ++c) xp.at(f, t, c) = x.at(perm[f], t, c);
    auto yp = m.forward(xp);
    float max_diff = 0;
    for (int64_t f = 0; f < 10; ++f)
        for (int64_t t = 0; t < 8; ++t)
            for (int64_t c = 0; c < y.shape()[2]; ++c)
                max_diff = std::max(max_diff, std::abs(yp.at(f, t, c) - y.at(perm[f], t, c)));
    CHECK(max_diff <= 1e-6f);
}

TEST_CASE("gradients reach every trainable parameter") {
    auto cfg = ModelConfig::tiny(8, 2, 2);
    Model<double> m(cfg, 27);
    auto x = rand_t<double>({8, 10, 4}, 28);
    Tape<double> tape;
    typename Model<double>::ForwardCtx ctx;
    ctx.tape = &tape;
    auto y = m.forward(x, ctx);
    auto target = rand_t<double>(y.shape(), 29);
    auto err = sub(&tape, y, target);
    auto loss = sum_all(&tape, mul(&tape, err, err));
    m.params().zero_grads();
    tape.backward(loss);
    for (const auto& e : m.params().entries()) {
        if (!e.trainable) continue;
        REQUIRE(e.tensor.has_grad());
        double mx = 0;
        for (double g : e.tensor.grad_view()) mx = std::max(mx, std::abs(g));
        INFO(e.name);
        CHECK(mx > 0.0);
    }
}

TEST_CASE("describe covers every parameter") {
    auto cfg = ModelConfig::tiny(8, 2, 2);
    Model<float> m(cfg, 31);
    int64_t total = 0;
    for (const auto& [name, n] : m.describe()) total += n;
    CHECK(total == m.param_count());
}

TEST_CASE("flops accountant basics") {
    auto cfg = ModelConfig::small(129, 6, 2);
    CHECK(count_flops(cfg, 0.0, 8000).total() == 0.0);
    const auto fl = count_flops(cfg, 4.0, 8000);
    CHECK(fl.total() > 0.0);
    // quadratic attention term: doubling the duration increases G/s
    const auto fl8 = count_flops(cfg, 8.0, 8000);
    CHECK(fl8.mhsa > fl.mhsa);
    CHECK(fl8.tconvffn == doctest::Approx(fl.tconvffn).epsilon(0.01));
}
