#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "snet/nn.hpp"
#include "snet/tensor.hpp"

using namespace snet;

namespace {

using T64 = Tensor<double>;

// Central finite differences at 64-bit against the recorded gradients.
// build() must construct the loss graph from the current parameter values.
double max_rel_grad_err(std::vector<T64> params,
                        const std::function<T64(Tape<double>*)>& build, double h = 1e-5) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape<double> tape;
    auto loss = build(&tape);
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    for (auto& p : params) grads.emplace_back(p.grad().begin(), p.grad().end());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double f1 = build(nullptr).item();
            p.data()[i] = orig - h;
            const double f0 = build(nullptr).item();
            p.data()[i] = orig;
            const double fd = (f1 - f0) / (2.0 * h);
            const double g = grads[pi][i];
            // absolute floor: near-zero gradients are dominated by FD noise
            const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-2});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

T64 rand_t(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng r(seed);
    return T64::randu(std::move(s), r, lo, hi);
}

}  // namespace

// ---- linear ------------------------------------------------------------------

TEST_CASE("linear identity and affine") {
    auto x = T64::from_vector({1, 2}, {1, 2});
    auto w = T64::from_vector({2, 2}, {1, 0, 0, 1});
    auto b = T64::from_vector({2}, {0, 0});
    auto y = linear<double>(nullptr, x, w, &b);
    CHECK(y.at(0, 0) == doctest::Approx(1));
    CHECK(y.at(0, 1) == doctest::Approx(2));

    auto w3 = T64::from_vector({2, 2}, {3, 0, 0, 3});
    auto b1 = T64::from_vector({2}, {1, 1});
    auto x1 = T64::from_vector({1, 2}, {1, 1});
    auto y2 = linear<double>(nullptr, x1, w3, &b1);
    CHECK(y2.at(0, 0) == doctest::Approx(4));
    CHECK(y2.at(0, 1) == doctest::Approx(4));
}

TEST_CASE("linear matches naive triple loop") {
    auto x = rand_t({4, 3}, 11);
    auto w = rand_t({3, 5}, 12);
    auto b = rand_t({5}, 13);
    auto y = linear<double>(nullptr, x, w, &b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            double acc = b.at(j);
            for (int k = 0; k < 3; ++k) acc += x.at(i, k) * w.at(k, j);
            CHECK(std::abs(y.at(i, j) - acc) <= 1e-12 * std::max(1.0, std::abs(acc)));
        }
}

TEST_CASE("linear rejects shape mismatch with a report") {
    auto x = rand_t({4, 3}, 1);
    auto w = rand_t({4, 5}, 2);
    CHECK_THROWS_AS(linear<double>(nullptr, x, w, nullptr), ShapeError);
    try {
        linear<double>(nullptr, x, w, nullptr);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4,3]") != std::string::npos);
    }
}

// ---- conv1d ------------------------------------------------------------------

TEST_CASE("conv1d delta kernel is identity") {
    auto x = rand_t({2, 7, 3}, 21);
    auto w = T64::zeros({3, 3, 5});
    for (int c = 0; c < 3; ++c) w.at(c, c, 2) = 1.0;
    auto y = conv1d_grouped<double>(nullptr, x, w, nullptr, 1);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv1d averaging kernel with zero padding") {
    auto x = T64::from_vector({1, 3, 1}, {3, 3, 3});
    auto w = T64::from_vector({1, 1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    auto y = conv1d_grouped<double>(nullptr, x, w, nullptr, 1);
    CHECK(y.at(0, 0, 0) == doctest::Approx(2.0));
    CHECK(y.at(0, 1, 0) == doctest::Approx(3.0));
    CHECK(y.at(0, 2, 0) == doctest::Approx(2.0));
}

TEST_CASE("depthwise groups act independently") {
    auto x = rand_t({1, 6, 2}, 31);
    auto w = T64::zeros({2, 1, 5});
    w.at(0, 0, 2) = 1.0;
    w.at(1, 0, 2) = 2.0;
    auto y = conv1d_grouped<double>(nullptr, x, w, nullptr, 2);
    for (int t = 0; t < 6; ++t) {
        CHECK(y.at(0, t, 0) == doctest::Approx(x.at(0, t, 0)));
        CHECK(y.at(0, t, 1) == doctest::Approx(2.0 * x.at(0, t, 1)));
    }
}

TEST_CASE("conv1d rejects bad group counts") {
    auto x = rand_t({1, 4, 3}, 41);
    auto w = rand_t({4, 1, 3}, 42);
    CHECK_THROWS_AS(conv1d_grouped<double>(nullptr, x, w, nullptr, 2), ShapeError);
}

// ---- normalize -----------------------------------------------------------------

TEST_CASE("layer norm of constant input is the affine bias") {
    auto x = T64::from_vector({1, 4}, {5, 5, 5, 5});
    auto g = T64::from_vector({4}, {1, 1, 1, 1});
    auto b = T64::zeros({4});
    auto y = layer_norm<double>(nullptr, x, g, b);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(y.at(0, i)) < 1e-9);
}

TEST_CASE("layer norm scale invariance") {
    auto x = rand_t({3, 16}, 51, -3.0, 3.0);
    auto g = T64::from_vector({16}, std::vector<double>(16, 1.0));
    auto b = T64::zeros({16});
    auto y1 = layer_norm<double>(nullptr, x, g, b);
    auto xs = scale<double>(nullptr, x, 7.0);
    auto y2 = layer_norm<double>(nullptr, xs, g, b);
    for (int64_t i = 0; i < y1.numel(); ++i)
        CHECK(std::abs(y1.data()[i] - y2.data()[i]) < 1e-5);
}

TEST_CASE("group norm matches a two-pass statistics oracle") {
    auto x = rand_t({1, 5, 4}, 61);
    auto g = T64::from_vector({4}, std::vector<double>(4, 1.0));
    auto b = T64::zeros({4});
    auto y = group_norm<double>(nullptr, x, 2, g, b, 1e-5);
    for (int grp = 0; grp < 2; ++grp) {
        double mean = 0, var = 0;
        for (int t = 0; t < 5; ++t)
            for (int c = 0; c < 2; ++c) mean += x.at(0, t, grp * 2 + c);
        mean /= 10.0;
        for (int t = 0; t < 5; ++t)
            for (int c = 0; c < 2; ++c) {
                const double d = x.at(0, t, grp * 2 + c) - mean;
                var += d * d;
            }
        var /= 10.0;
        for (int t = 0; t < 5; ++t)
            for (int c = 0; c < 2; ++c) {
                const double expect =
                    (x.at(0, t, grp * 2 + c) - mean) / std::sqrt(var + 1e-5);
                CHECK(std::abs(y.at(0, t, grp * 2 + c) - expect) < 1e-10);
            }
    }
}

// ---- mhsa ----------------------------------------------------------------------

namespace {
MhsaWeights<double> random_mhsa(int64_t c, uint64_t seed) {
    Rng root(seed);
    MhsaWeights<double> w;
    w.wq = rand_t({c, c}, root.next_u64());
    w.bq = rand_t({c}, root.next_u64());
    w.wk = rand_t({c, c}, root.next_u64());
    w.bk = rand_t({c}, root.next_u64());
    w.wv = rand_t({c, c}, root.next_u64());
    w.bv = rand_t({c}, root.next_u64());
    w.wo = rand_t({c, c}, root.next_u64());
    w.bo = rand_t({c}, root.next_u64());
    return w;
}
}  // namespace

TEST_CASE("mhsa with zero query/key projections is uniform attention") {
    const int64_t C = 8;
    auto w = random_mhsa(C, 71);
    w.wq = T64::zeros({C, C});
    w.bq = T64::zeros({C});
    w.wk = T64::zeros({C, C});
    w.bk = T64::zeros({C});
    auto x = rand_t({1, 2, C}, 72);
    Tensor<double> attn;
    auto y = mhsa<double>(nullptr, x, 2, w, &attn);
    for (int64_t i = 0; i < attn.numel(); ++i) CHECK(attn.data()[i] == doctest::Approx(0.5));
    for (int64_t c = 0; c < C; ++c)
        CHECK(y.at(0, 0, c) == doctest::Approx(y.at(0, 1, c)).epsilon(1e-10));
}

TEST_CASE("mhsa attention rows sum to one") {
    auto w = random_mhsa(8, 81);
    auto x = rand_t({3, 5, 8}, 82);
    Tensor<double> attn;
    mhsa<double>(nullptr, x, 4, w, &attn);
    const int64_t rows = attn.shape()[0] * attn.shape()[1];
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (int64_t k = 0; k < attn.shape()[2]; ++k) s += attn.data()[r * attn.shape()[2] + k];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("mhsa is equivariant to time permutation") {
    const int64_t B = 2, T = 7, C = 8;
    auto w = random_mhsa(C, 91);
    auto x = rand_t({B, T, C}, 92);
    auto y = mhsa<double>(nullptr, x, 4, w);
    std::vector<int> perm = {3, 0, 6, 1, 5, 2, 4};
    auto xp = T64::zeros({B, T, C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t c = 0; c < C; ++c) xp.at(b, t, c) = x.at(b, perm[t], c);
    auto yp = mhsa<double>(nullptr, xp, 4, w);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t c = 0; c < C; ++c)
                CHECK(std::abs(yp.at(b, t, c) - y.at(b, perm[t], c)) < 1e-10);
}

TEST_CASE("mhsa rejects indivisible head count") {
    auto w = random_mhsa(6, 95);
    auto x = rand_t({1, 3, 6}, 96);
    CHECK_THROWS_AS(mhsa<double>(nullptr, x, 4, w), ShapeError);
}

// ---- activations ----------------------------------------------------------------

TEST_CASE("activation values") {
    auto z = T64::scalar(0.0);
    CHECK(silu<double>(nullptr, z).item() == doctest::Approx(0.0));

    auto x = T64::from_vector({1, 2}, {-4, 4});
    auto a = T64::from_vector({2}, {0.25, 0.25});
    auto y = prelu<double>(nullptr, x, a);
    CHECK(y.at(0, 0) == doctest::Approx(-1.0));
    CHECK(y.at(0, 1) == doctest::Approx(4.0));

    auto s = softmax_lastdim<double>(nullptr, T64::from_vector({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(s.at(i) == doctest::Approx(1.0 / 3));
}

// ---- dropout --------------------------------------------------------------------

TEST_CASE("dropout identity cases and scaling") {
    Rng rng(7);
    auto x = rand_t({100}, 101);
    auto y0 = dropout<double>(nullptr, x, 0.0, true, rng);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y0.data()[i] == x.data()[i]);
    auto yi = dropout<double>(nullptr, x, 0.9, false, rng);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(yi.data()[i] == x.data()[i]);
    CHECK_THROWS_AS(dropout<double>(nullptr, x, 1.0, true, rng), ShapeError);

    auto ones = T64::from_vector({1000000}, std::vector<double>(1000000, 1.0));
    Rng rng2(8);
    auto y = dropout<double>(nullptr, ones, 0.5, true, rng2);
    double mean = 0;
    for (int64_t i = 0; i < y.numel(); ++i) mean += y.data()[i];
    mean /= y.numel();
    CHECK(std::abs(mean - 1.0) < 0.01);
}

// ---- backward ---------------------------------------------------------------------

TEST_CASE("gradient of sum of squares is exactly 2x") {
    auto x = rand_t({17}, 111);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(&tape, mul(&tape, x, x));
    tape.backward(loss);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0 * x.data()[i]);
}

TEST_CASE("backward twice is rejected; unrecorded tensors are rejected") {
    auto x = rand_t({4}, 121);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = sum_all(&tape, mul(&tape, x, x));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), NumericalError);

    Tape<double> tape2;
    auto leaf = rand_t({1}, 122);
    CHECK_THROWS_AS(tape2.backward(leaf), NumericalError);
}

TEST_CASE("forward determinism is bit exact") {
    auto x = rand_t({33, 17}, 131);
    auto w = rand_t({17, 9}, 132);
    auto b = rand_t({9}, 133);
    auto y1 = silu<double>(nullptr, linear<double>(nullptr, x, w, &b));
    auto y2 = silu<double>(nullptr, linear<double>(nullptr, x, w, &b));
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("finite differences: linear+silu+sum chain") {
    auto x = rand_t({4, 6}, 141);
    auto w = rand_t({6, 3}, 142);
    auto b = rand_t({3}, 143);
    const double err = max_rel_grad_err({x, w, b}, [&](Tape<double>* tp) {
        return sum_all(tp, silu(tp, linear(tp, x, w, &b)));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("finite differences: every primitive op") {
    // Each case returns a scalar loss built from the listed parameters.
    struct Case {
        const char* name;
        std::vector<T64> params;
        std::function<T64(Tape<double>*)> build;
    };
    std::vector<Case> cases;

    {
        auto a = rand_t({3, 4}, 201), b = rand_t({3, 4}, 202);
        cases.push_back({"add/mul/sub", {a, b}, [=](Tape<double>* tp) {
                             return sum_all(tp, mul(tp, add(tp, a, b), sub(tp, a, b)));
                         }});
    }
    {
        auto a = rand_t({5}, 203);
        cases.push_back({"scale/add_const", {a}, [=](Tape<double>* tp) {
                             return sum_all(tp, add_const(tp, scale(tp, a, -1.7), 0.3));
                         }});
    }
    {
        auto a = rand_t({6}, 204);
        auto s = rand_t({1}, 205, 0.5, 1.5);
        cases.push_back({"scale_by", {a, s}, [=](Tape<double>* tp) {
                             return sum_all(tp, mul(tp, scale_by(tp, a, s), a));
                         }});
    }
    {
        auto a = rand_t({4}, 206, 0.5, 2.0);
        cases.push_back({"log", {a}, [=](Tape<double>* tp) {
                             return sum_all(tp, log_op(tp, a));
                         }});
    }
    {
        auto a = rand_t({9}, 207, -2.0, 2.0);
        // keep samples away from the clamp kinks
        for (int64_t i = 0; i < a.numel(); ++i)
            if (std::abs(std::abs(a.data()[i]) - 1.0) < 0.05) a.data()[i] += 0.2;
        cases.push_back({"clamp", {a}, [=](Tape<double>* tp) {
                             return sum_all(tp, mul(tp, clamp_op(tp, a, -1.0, 1.0), a));
                         }});
    }
    {
        auto a = rand_t({1}, 208, 1.0, 2.0), b = rand_t({1}, 209, 1.0, 2.0);
        cases.push_back({"div_scalar", {a, b}, [=](Tape<double>* tp) {
                             return div_scalar(tp, a, b);
                         }});
    }
    {
        auto a = rand_t({2, 6}, 210);
        cases.push_back({"reshape/permute/slice", {a}, [=](Tape<double>* tp) {
                             auto r = reshape(tp, a, {3, 4});
                             auto p = permute(tp, r, {1, 0});
                             auto s = slice_lastdim(tp, p, 1, 2);
                             return sum_all(tp, mul(tp, s, s));
                         }});
    }
    {
        auto x = rand_t({3, 4}, 211), w = rand_t({4, 2}, 212), b = rand_t({2}, 213);
        cases.push_back({"linear", {x, w, b}, [=](Tape<double>* tp) {
                             auto y = linear(tp, x, w, &b);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({2, 6, 4}, 214), w = rand_t({4, 2, 3}, 215), b = rand_t({4}, 216);
        cases.push_back({"conv1d_grouped", {x, w, b}, [=](Tape<double>* tp) {
                             auto y = conv1d_grouped(tp, x, w, &b, 2);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({3, 5}, 217), g = rand_t({5}, 218, 0.5, 1.5), b = rand_t({5}, 219);
        cases.push_back({"layer_norm", {x, g, b}, [=](Tape<double>* tp) {
                             auto y = layer_norm(tp, x, g, b);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({2, 4, 6}, 220), g = rand_t({6}, 221, 0.5, 1.5), b = rand_t({6}, 222);
        cases.push_back({"group_norm", {x, g, b}, [=](Tape<double>* tp) {
                             auto y = group_norm(tp, x, 3, g, b);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({4, 5}, 223);
        auto m = rand_t({4, 5}, 224);
        cases.push_back({"softmax", {x}, [=](Tape<double>* tp) {
                             return sum_all(tp, mul(tp, softmax_lastdim(tp, x), m));
                         }});
    }
    {
        auto x = rand_t({11}, 225);
        cases.push_back({"silu", {x}, [=](Tape<double>* tp) {
                             return sum_all(tp, mul(tp, silu(tp, x), x));
                         }});
    }
    {
        auto x = rand_t({3, 4}, 226);
        for (int64_t i = 0; i < x.numel(); ++i)
            if (std::abs(x.data()[i]) < 0.05) x.data()[i] += 0.1;  // avoid the kink
        auto a = rand_t({4}, 227, 0.1, 0.4);
        cases.push_back({"prelu", {x, a}, [=](Tape<double>* tp) {
                             auto y = prelu(tp, x, a);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({40}, 228);
        cases.push_back({"dropout", {x}, [=](Tape<double>* tp) {
                             Rng rng(99);  // same mask for every evaluation
                             auto y = dropout(tp, x, 0.3, true, rng);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto a = rand_t({2, 3, 4}, 229), b = rand_t({2, 4, 5}, 230);
        cases.push_back({"bmm", {a, b}, [=](Tape<double>* tp) {
                             auto y = bmm(tp, a, b);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({5, 3, 2}, 231), w = rand_t({2, 5, 5}, 232), b = rand_t({2, 5}, 233);
        cases.push_back({"fbank_apply", {x, w, b}, [=](Tape<double>* tp) {
                             auto y = fbank_apply(tp, x, w, b);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }
    {
        auto x = rand_t({2, 6, 8}, 234);
        auto w = random_mhsa(8, 235);
        cases.push_back({"mhsa", {x, w.wq, w.bq, w.wk, w.bk, w.wv, w.bv, w.wo, w.bo},
                         [=](Tape<double>* tp) {
                             auto y = mhsa(tp, x, 2, w);
                             return sum_all(tp, mul(tp, y, y));
                         }});
    }

    for (auto& c : cases) {
        INFO(std::string(c.name));
        CHECK(max_rel_grad_err(c.params, c.build) < 1e-4);
    }
}

TEST_CASE("shape fuzzing rejects but never crashes") {
    Rng rng(777);
    int rejected = 0;
    for (int it = 0; it < 300; ++it) {
        auto dim = [&]() { return 1 + static_cast<int64_t>(rng.uniform_int(5)); };
        try {
            switch (rng.uniform_int(6)) {
                case 0: {
                    auto a = rand_t({dim(), dim()}, rng.next_u64());
                    auto b = rand_t({dim(), dim()}, rng.next_u64());
                    add<double>(nullptr, a, b);
                    break;
                }
                case 1: {
                    auto x = rand_t({dim(), dim()}, rng.next_u64());
                    auto w = rand_t({dim(), dim()}, rng.next_u64());
                    linear<double>(nullptr, x, w, nullptr);
                    break;
                }
                case 2: {
                    auto x = rand_t({dim(), dim(), dim()}, rng.next_u64());
                    auto w = rand_t({dim(), dim(), 3}, rng.next_u64());
                    conv1d_grouped<double>(nullptr, x, w, nullptr, 1 + rng.uniform_int(3));
                    break;
                }
                case 3: {
                    auto a = rand_t({dim(), dim(), dim()}, rng.next_u64());
                    auto b = rand_t({dim(), dim(), dim()}, rng.next_u64());
                    bmm<double>(nullptr, a, b);
                    break;
                }
                case 4: {
                    auto x = rand_t({dim(), dim()}, rng.next_u64());
                    reshape<double>(nullptr, x, {dim(), dim()});
                    break;
                }
                default: {
                    auto x = rand_t({dim(), dim(), dim()}, rng.next_u64());
                    auto g = rand_t({dim()}, rng.next_u64());
                    auto b = rand_t({dim()}, rng.next_u64());
                    group_norm<double>(nullptr, x, 1 + rng.uniform_int(3), g, b);
                    break;
                }
            }
        } catch (const ShapeError&) {
            ++rejected;
        }
    }
    CHECK(rejected > 0);  // the fuzz actually exercised rejection paths
}
