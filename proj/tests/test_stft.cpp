#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "snet/objective.hpp"
#include "snet/scene.hpp"
#include "snet/stft.hpp"

using namespace snet;

namespace {

Waveform noise_wave(int channels, int64_t n, int sr, uint64_t seed) {
    Waveform w(channels, n, sr);
    Rng rng(seed);
    for (auto& ch : w.samples)
        for (auto& v : ch) v = rng.normal() * 0.3;
    return w;
}

double interior_si_sdr(const Waveform& rec, const Waveform& ref, int win) {
    const int64_t n = std::min(rec.length(), ref.length());
    std::vector<double> a(rec.samples[0].begin() + win, rec.samples[0].begin() + n - win);
    std::vector<double> b(ref.samples[0].begin() + win, ref.samples[0].begin() + n - win);
    return si_sdr_db(a, b);
}

}  // namespace

TEST_CASE("zero waveform gives zero spectrogram and back") {
    Waveform w(2, 4096, 16000);
    auto s = stft(w, 512);
    for (const auto& v : s.bins) CHECK(std::abs(v) == 0.0);
    auto r = istft(s);
    for (const auto& ch : r.samples)
        for (double v : ch) CHECK(v == 0.0);
}

TEST_CASE("pure tone peaks at the expected bin") {
    const int sr = 16000, win = 512;
    Waveform w(1, sr, sr);
    for (int64_t i = 0; i < sr; ++i) w.samples[0][i] = std::sin(2.0 * M_PI * 1000.0 * i / sr);
    auto s = stft(w, win);
    const int64_t expect = std::lround(1000.0 * win / sr);  // 32
    CHECK(expect == 32);
    for (int64_t t = 1; t + 1 < s.T; ++t) {
        int64_t arg = 0;
        double best = -1;
        for (int64_t f = 0; f < s.F; ++f)
            if (std::abs(s.at(f, t, 0)) > best) {
                best = std::abs(s.at(f, t, 0));
                arg = f;
            }
        CHECK(arg == expect);
    }
}

TEST_CASE("frame counts and bin counts at both rates") {
    auto s16 = stft(noise_wave(1, 4 * 16000, 16000, 1), 512);
    CHECK(s16.F == 257);
    CHECK(s16.T == (4 * 16000 - 512) / 256 + 1);
    auto s8 = stft(noise_wave(1, 4 * 8000, 8000, 2), 256);
    CHECK(s8.F == 129);
    CHECK(s8.T == (4 * 8000 - 256) / 128 + 1);
}

TEST_CASE("too-short input is rejected") {
    Waveform w(1, 100, 16000);
    CHECK_THROWS_AS(stft(w, 512), DataError);
}

TEST_CASE("roundtrip reconstructs interior samples above 60 dB") {
    const auto w = noise_wave(1, 4 * 16000, 16000, 3);
    auto rec = istft(stft(w, 512));
    CHECK(interior_si_sdr(rec, w, 512) > 60.0);
}

TEST_CASE("roundtrip on a speech-shaped signal is sample-accurate") {
    Rng rng(4);
    auto x = synth_speech(3 * 16000, 16000, rng);
    double peak = 0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    Waveform w(1, x.size(), 16000);
    for (size_t i = 0; i < x.size(); ++i) w.samples[0][i] = x[i] / peak;  // unit scale
    auto rec = istft(stft(w, 512));
    double max_err = 0;
    for (int64_t i = 512; i < rec.length() - 512; ++i)
        max_err = std::max(max_err, std::abs(rec.samples[0][i] - w.samples[0][i]));
    CHECK(max_err < 1e-5);
}

TEST_CASE("istft rejects inconsistent metadata") {
    auto s = stft(noise_wave(1, 8000, 8000, 5), 256);
    s.F = 200;
    CHECK_THROWS_AS(istft(s), DataError);
}

TEST_CASE("input stacking order and inverse") {
    Spectrogram s;
    s.win = 512;
    s.hop = 256;
    s.sample_rate = 16000;
    s.F = 1;
    s.T = 1;
    s.M = 1;
    s.bins = {{3.0, 4.0}};
    auto x = stack_input<double>(s);
    CHECK(x.at(0, 0, 0) == 3.0);
    CHECK(x.at(0, 0, 1) == 4.0);

    Spectrogram s2 = s;
    s2.M = 2;
    s2.bins = {{1.0, 0.0}, {0.0, 1.0}};
    auto x2 = stack_input<double>(s2);
    CHECK(x2.at(0, 0, 0) == 1.0);
    CHECK(x2.at(0, 0, 1) == 0.0);
    CHECK(x2.at(0, 0, 2) == 0.0);
    CHECK(x2.at(0, 0, 3) == 1.0);

    // unstack(stack(spec)) is exact
    auto w = noise_wave(3, 8000, 8000, 6);
    auto spec = stft(w, 256);
    auto stacked = stack_input<double>(spec);
    auto parts = unstack_output(stacked, 256, 8000);
    REQUIRE(parts.size() == 3);
    for (int64_t m = 0; m < 3; ++m)
        for (int64_t f = 0; f < spec.F; ++f)
            for (int64_t t = 0; t < spec.T; ++t)
                CHECK(parts[m].at(f, t, 0) == spec.at(f, t, m));
}

TEST_CASE("unstack rejects odd channel counts") {
    auto y = Tensor<double>::zeros({5, 4, 3});
    CHECK_THROWS_AS(unstack_output(y, 256, 8000), ShapeError);
}

TEST_CASE("stft is linear") {
    auto x = noise_wave(1, 16000, 16000, 7);
    auto y = noise_wave(1, 16000, 16000, 8);
    const double a = 1.7, b = -0.6;
    Waveform z(1, 16000, 16000);
    for (int64_t i = 0; i < 16000; ++i)
        z.samples[0][i] = a * x.samples[0][i] + b * y.samples[0][i];
    auto sx = stft(x, 512), sy = stft(y, 512), sz = stft(z, 512);
    double max_err = 0;
    for (size_t i = 0; i < sz.bins.size(); ++i)
        max_err = std::max(max_err, std::abs(sz.bins[i] - (a * sx.bins[i] + b * sy.bins[i])));
    CHECK(max_err < 1e-6);
}

TEST_CASE("windowed-frame energy agrees between domains") {
    const int win = 512;
    auto w = noise_wave(1, 4096, 16000, 9);
    auto s = stft(w, win);
    const auto window = hann_window(win);
    for (int64_t t = 0; t < s.T; ++t) {
        double e_time = 0;
        for (int i = 0; i < win; ++i) {
            const double v = w.samples[0][t * s.hop + i] * window[i];
            e_time += v * v;
        }
        double e_freq = std::norm(s.at(0, t, 0)) + std::norm(s.at(win / 2, t, 0));
        for (int64_t f = 1; f < win / 2; ++f) e_freq += 2.0 * std::norm(s.at(f, t, 0));
        e_freq /= win;
        CHECK(std::abs(e_time - e_freq) <= 1e-4 * std::max(1.0, e_time));
    }
}
