#include "snet/fft.hpp"

#include <cmath>

#include "snet/common.hpp"

namespace snet {

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

int64_t next_pow2(int64_t n) {
    int64_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

void fft(std::vector<std::complex<double>>& x, bool inverse) {
    const size_t n = x.size();
    if (n == 0) return;
    if (!is_pow2(static_cast<int64_t>(n)))
        throw ShapeError(sformat("fft: length %zu is not a power of two", n));

    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }

    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = x[i + k];
                std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& v : x) v *= inv_n;
    }
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = {x[i], 0.0};
    fft(buf, false);
    buf.resize(n / 2 + 1);
    return buf;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& half, int n) {
    if (static_cast<int>(half.size()) != n / 2 + 1)
        throw ShapeError(sformat("irfft: expected %d bins, got %zu", n / 2 + 1, half.size()));
    std::vector<std::complex<double>> buf(n);
    for (int f = 0; f <= n / 2; ++f) buf[f] = half[f];
    for (int f = n / 2 + 1; f < n; ++f) buf[f] = std::conj(half[n - f]);
    fft(buf, true);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = buf[i].real();
    return out;
}

}  // namespace snet
