#include "snet/stft.hpp"

#include <cmath>

#include "snet/common.hpp"
#include "snet/fft.hpp"

namespace snet {

void Waveform::check() const {
    for (const auto& ch : samples) {
        if (static_cast<int64_t>(ch.size()) != length())
            throw DataError("waveform: channels differ in length");
        for (double v : ch)
            if (!std::isfinite(v)) throw NumericalError("waveform: non-finite sample");
    }
}

std::vector<double> hann_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    return w;
}

Spectrogram stft(const Waveform& wave, int win) {
    if (win <= 0 || !is_pow2(win)) throw ShapeError("stft: window length must be a power of two");
    const int hop = win / 2;
    const int64_t n = wave.length();
    if (n < win)
        throw DataError(sformat("stft: input of %lld samples shorter than window %d",
                                (long long)n, win));
    Spectrogram s;
    s.win = win;
    s.hop = hop;
    s.sample_rate = wave.sample_rate;
    s.F = win / 2 + 1;
    s.T = (n - win) / hop + 1;
    s.M = wave.channels();
    s.bins.assign(s.F * s.T * s.M, {0.0, 0.0});

    const auto w = hann_window(win);
    std::vector<double> frame(win);
    for (int64_t m = 0; m < s.M; ++m) {
        const auto& ch = wave.samples[m];
        for (int64_t t = 0; t < s.T; ++t) {
            const int64_t start = t * hop;
            for (int i = 0; i < win; ++i) frame[i] = ch[start + i] * w[i];
            const auto half = rfft(frame);
            for (int64_t f = 0; f < s.F; ++f) s.at(f, t, m) = half[f];
        }
    }
    return s;
}

Waveform istft(const Spectrogram& spec) {
    const int win = spec.win, hop = spec.hop;
    if (spec.F != win / 2 + 1 || hop != win / 2)
        throw DataError(sformat("istft: inconsistent metadata (win=%d hop=%d F=%lld)", win, hop,
                                (long long)spec.F));
    const int64_t n = (spec.T - 1) * hop + win;
    Waveform out(static_cast<int>(spec.M), n, spec.sample_rate);

    const auto w = hann_window(win);
    std::vector<double> env(n, 0.0);
    for (int64_t t = 0; t < spec.T; ++t)
        for (int i = 0; i < win; ++i) env[t * hop + i] += w[i] * w[i];

    std::vector<std::complex<double>> half(spec.F);
    for (int64_t m = 0; m < spec.M; ++m) {
        auto& ch = out.samples[m];
        for (int64_t t = 0; t < spec.T; ++t) {
            for (int64_t f = 0; f < spec.F; ++f) half[f] = spec.at(f, t, m);
            const auto frame = irfft(half, win);
            const int64_t start = t * hop;
            for (int i = 0; i < win; ++i) ch[start + i] += frame[i] * w[i];
        }
        for (int64_t i = 0; i < n; ++i)
            if (env[i] > 1e-12) ch[i] /= env[i];
    }
    return out;
}

}  // namespace snet
