#pragma once

// Classical oracle references: MVDR beamforming against the direct-path RTF,
// and multichannel WPE-style delayed linear prediction. Per-frequency problems
// are independent.

#include <complex>
#include <vector>

#include "snet/scene.hpp"
#include "snet/stft.hpp"

namespace snet {

struct SteeringVector {
    int64_t F = 0, M = 0;
    std::vector<std::complex<double>> v;  // [F, M], reference entry = 1
    std::complex<double>& at(int64_t f, int64_t m) { return v[f * M + m]; }
    std::complex<double> at(int64_t f, int64_t m) const { return v[f * M + m]; }
};

struct SpatialCovariance {
    int64_t F = 0, M = 0;
    std::vector<std::complex<double>> mat;  // [F, M, M], Hermitian
    std::complex<double>& at(int64_t f, int64_t i, int64_t j) { return mat[(f * M + i) * M + j]; }
    std::complex<double> at(int64_t f, int64_t i, int64_t j) const {
        return mat[(f * M + i) * M + j];
    }
};

// Relative transfer function of one speaker's direct path on the STFT bin
// grid of a length-win window: DFT of the truncated filters, divided by the
// reference channel with Tikhonov loading near its zeros.
SteeringVector oracle_rtf(const DirectPathInfo& dp, int speaker, int win, int ref_channel);

// Time-averaged outer products per frequency.
SpatialCovariance estimate_covariance(const Spectrogram& spec);

class MvdrBeamformer {
  public:
    MvdrBeamformer(const SteeringVector& steering, const SpatialCovariance& noise_cov);
    // Output is single channel: w^H x per T-F bin.
    Spectrogram apply(const Spectrogram& mix) const;
    // w^H d at one frequency (1 by construction).
    std::complex<double> response(int64_t f) const;

  private:
    int64_t F_, M_;
    std::vector<std::complex<double>> w_;  // [F, M]
    SteeringVector d_;
};

// Iteratively reweighted delayed linear prediction across all channels.
Spectrogram wpe(const Spectrogram& mix, int taps = 5, int delay = 3, int iters = 3);

}  // namespace snet
