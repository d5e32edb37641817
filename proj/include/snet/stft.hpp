#pragma once

#include <complex>
#include <vector>

#include "snet/tensor.hpp"

namespace snet {

struct Waveform {
    int sample_rate = 16000;
    std::vector<std::vector<double>> samples;  // channels x length

    Waveform() = default;
    Waveform(int channels, int64_t length, int sr)
        : sample_rate(sr), samples(channels, std::vector<double>(length, 0.0)) {}

    int channels() const { return static_cast<int>(samples.size()); }
    int64_t length() const { return samples.empty() ? 0 : static_cast<int64_t>(samples[0].size()); }
    void check() const;
};

struct Spectrogram {
    int win = 512;
    int hop = 256;
    int sample_rate = 16000;
    int64_t F = 0, T = 0, M = 0;
    std::vector<std::complex<double>> bins;  // [F, T, M] row-major

    std::complex<double>& at(int64_t f, int64_t t, int64_t m) {
        return bins[(f * T + t) * M + m];
    }
    std::complex<double> at(int64_t f, int64_t t, int64_t m) const {
        return bins[(f * T + t) * M + m];
    }
};

// Periodic Hann window; satisfies constant overlap-add at 50% hop.
std::vector<double> hann_window(int n);

// Frames start at sample 0, no centering; hop is win/2, F = win/2 + 1.
Spectrogram stft(const Waveform& wave, int win);

// Weighted overlap-add synthesis; the synthesis window is the analysis window
// divided by the summed squared-window envelope. Output length (T-1)*hop + win.
Waveform istft(const Spectrogram& spec);

// Network input stacking: channel order (Re ch1, Im ch1, ..., Re chM, Im chM).
template <class S>
Tensor<S> stack_input(const Spectrogram& spec) {
    Tensor<S> out({spec.F, spec.T, 2 * spec.M});
    S* po = out.data();
    for (int64_t f = 0; f < spec.F; ++f)
        for (int64_t t = 0; t < spec.T; ++t)
            for (int64_t m = 0; m < spec.M; ++m) {
                const auto v = spec.at(f, t, m);
                po[(f * spec.T + t) * 2 * spec.M + 2 * m] = static_cast<S>(v.real());
                po[(f * spec.T + t) * 2 * spec.M + 2 * m + 1] = static_cast<S>(v.imag());
            }
    return out;
}

template <class S>
Spectrogram unstack_channel(const Tensor<S>& y, int64_t p, int win, int sample_rate) {
    if (y.ndim() != 3) throw ShapeError("unstack: expected [F,T,2P]");
    const int64_t F = y.shape()[0], T = y.shape()[1], twoP = y.shape()[2];
    if (twoP % 2 != 0) throw ShapeError("unstack: last dim must be even");
    if (p < 0 || 2 * p + 1 >= twoP) throw ShapeError("unstack: speaker index out of range");
    Spectrogram s;
    s.win = win;
    s.hop = win / 2;
    s.sample_rate = sample_rate;
    s.F = F;
    s.T = T;
    s.M = 1;
    s.bins.resize(F * T);
    const S* py = y.data();
    for (int64_t f = 0; f < F; ++f)
        for (int64_t t = 0; t < T; ++t) {
            const S* v = py + (f * T + t) * twoP + 2 * p;
            s.bins[f * T + t] = {static_cast<double>(v[0]), static_cast<double>(v[1])};
        }
    return s;
}

template <class S>
std::vector<Spectrogram> unstack_output(const Tensor<S>& y, int win, int sample_rate) {
    if (y.ndim() != 3 || y.shape()[2] % 2 != 0)
        throw ShapeError("unstack_output: expected [F,T,2P] with even last dim");
    const int64_t P = y.shape()[2] / 2;
    std::vector<Spectrogram> out;
    out.reserve(P);
    for (int64_t p = 0; p < P; ++p) out.push_back(unstack_channel(y, p, win, sample_rate));
    return out;
}

}  // namespace snet
