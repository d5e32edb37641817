#pragma once

#include <complex>
#include <vector>

namespace snet {

// In-place iterative radix-2 FFT. Length must be a power of two.
void fft(std::vector<std::complex<double>>& x, bool inverse);

// Forward DFT of a real signal; returns the one-sided half [0, n/2].
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse of rfft: hermitian completion of the one-sided spectrum, real output.
std::vector<double> irfft(const std::vector<std::complex<double>>& half, int n);

bool is_pow2(int64_t n);
int64_t next_pow2(int64_t n);

}  // namespace snet
