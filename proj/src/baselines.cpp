#include "snet/baselines.hpp"

#include <Eigen/Dense>

namespace snet {

SteeringVector oracle_rtf(const DirectPathInfo& dp, int speaker, int win, int ref_channel) {
    const int M = static_cast<int>(dp.filters[speaker].size());
    const int64_t F = win / 2 + 1;
    SteeringVector sv;
    sv.F = F;
    sv.M = M;
    sv.v.assign(F * M, {0.0, 0.0});

    // direct evaluation of the DFT at the window's bin grid
    std::vector<std::vector<std::complex<double>>> atf(M,
                                                       std::vector<std::complex<double>>(F));
    for (int m = 0; m < M; ++m) {
        const auto& h = dp.filters[speaker][m];
        for (int64_t f = 0; f < F; ++f) {
            std::complex<double> acc(0.0, 0.0);
            const double w0 = -2.0 * M_PI * static_cast<double>(f) / win;
            for (size_t n = 0; n < h.size(); ++n) {
                if (h[n] == 0.0) continue;
                acc += h[n] * std::complex<double>(std::cos(w0 * n), std::sin(w0 * n));
            }
            atf[m][f] = acc;
        }
    }
    double peak = 0.0;
    for (int64_t f = 0; f < F; ++f) peak = std::max(peak, std::abs(atf[ref_channel][f]));
    const double load = 1e-6 * peak;
    for (int64_t f = 0; f < F; ++f) {
        const auto ar = atf[ref_channel][f];
        const double den = std::norm(ar) + load * load;
        for (int m = 0; m < M; ++m)
            sv.at(f, m) = m == ref_channel ? std::complex<double>(1.0, 0.0)
                                           : atf[m][f] * std::conj(ar) / den;
    }
    return sv;
}

SpatialCovariance estimate_covariance(const Spectrogram& spec) {
    SpatialCovariance cov;
    cov.F = spec.F;
    cov.M = spec.M;
    cov.mat.assign(spec.F * spec.M * spec.M, {0.0, 0.0});
    const double inv_t = 1.0 / std::max<int64_t>(1, spec.T);
    for (int64_t f = 0; f < spec.F; ++f)
        for (int64_t t = 0; t < spec.T; ++t)
            for (int64_t i = 0; i < spec.M; ++i)
                for (int64_t j = 0; j < spec.M; ++j)
                    cov.at(f, i, j) += spec.at(f, t, i) * std::conj(spec.at(f, t, j)) * inv_t;
    return cov;
}

MvdrBeamformer::MvdrBeamformer(const SteeringVector& steering, const SpatialCovariance& noise_cov)
    : F_(steering.F), M_(steering.M), d_(steering) {
    if (noise_cov.F != F_ || noise_cov.M != M_)
        throw ShapeError("mvdr: steering and covariance shapes differ");
    w_.assign(F_ * M_, {0.0, 0.0});
    for (int64_t f = 0; f < F_; ++f) {
        Eigen::MatrixXcd phi(M_, M_);
        for (int64_t i = 0; i < M_; ++i)
            for (int64_t j = 0; j < M_; ++j) phi(i, j) = noise_cov.at(f, i, j);
        const double load = 1e-6 * std::max(phi.trace().real() / M_, 1e-12);
        phi += load * Eigen::MatrixXcd::Identity(M_, M_);
        Eigen::VectorXcd d(M_);
        for (int64_t m = 0; m < M_; ++m) d(m) = steering.at(f, m);
        Eigen::LDLT<Eigen::MatrixXcd> ldlt(phi);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError(sformat("mvdr: covariance singular at bin %lld", (long long)f));
        const Eigen::VectorXcd x = ldlt.solve(d);
        const std::complex<double> den = d.dot(x);  // d^H x
        if (!std::isfinite(den.real()) || std::abs(den) < 1e-300)
            throw NumericalError(sformat("mvdr: degenerate steering at bin %lld", (long long)f));
        for (int64_t m = 0; m < M_; ++m) w_[f * M_ + m] = x(m) / den;
    }
}

std::complex<double> MvdrBeamformer::response(int64_t f) const {
    std::complex<double> acc(0.0, 0.0);
    for (int64_t m = 0; m < M_; ++m) acc += std::conj(w_[f * M_ + m]) * d_.at(f, m);
    return acc;
}

Spectrogram MvdrBeamformer::apply(const Spectrogram& mix) const {
    if (mix.F != F_ || mix.M != M_) throw ShapeError("mvdr: spectrogram shape mismatch");
    Spectrogram out;
    out.win = mix.win;
    out.hop = mix.hop;
    out.sample_rate = mix.sample_rate;
    out.F = F_;
    out.T = mix.T;
    out.M = 1;
    out.bins.assign(F_ * mix.T, {0.0, 0.0});
    for (int64_t f = 0; f < F_; ++f)
        for (int64_t t = 0; t < mix.T; ++t) {
            std::complex<double> acc(0.0, 0.0);
            for (int64_t m = 0; m < M_; ++m) acc += std::conj(w_[f * M_ + m]) * mix.at(f, t, m);
            out.bins[f * mix.T + t] = acc;
        }
    return out;
}

Spectrogram wpe(const Spectrogram& mix, int taps, int delay, int iters) {
    const int64_t F = mix.F, T = mix.T, M = mix.M;
    if (T <= taps + delay)
        throw DataError(sformat("wpe: %lld frames too short for taps=%d delay=%d", (long long)T,
                                taps, delay));
    Spectrogram out = mix;
    const int64_t D = M * taps;
    constexpr double kPowerFloor = 1e-8;

#pragma omp parallel for schedule(static)
    for (int64_t f = 0; f < F; ++f) {
        Eigen::MatrixXcd X(M, T);
        for (int64_t t = 0; t < T; ++t)
            for (int64_t m = 0; m < M; ++m) X(m, t) = mix.at(f, t, m);
        Eigen::MatrixXcd Y = X;
        std::vector<double> lambda(T);
        auto update_lambda = [&](const Eigen::MatrixXcd& sig) {
            for (int64_t t = 0; t < T; ++t) {
                double p = 0.0;
                for (int64_t m = 0; m < M; ++m) p += std::norm(sig(m, t));
                lambda[t] = std::max(p / M, kPowerFloor);
            }
        };
        update_lambda(X);

        Eigen::VectorXcd xt(D);
        for (int it = 0; it < iters; ++it) {
            Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(D, D);
            Eigen::MatrixXcd P = Eigen::MatrixXcd::Zero(D, M);
            for (int64_t t = 0; t < T; ++t) {
                for (int k = 0; k < taps; ++k) {
                    const int64_t tt = t - delay - k;
                    for (int64_t m = 0; m < M; ++m)
                        xt(k * M + m) = tt >= 0 ? X(m, tt) : std::complex<double>(0.0, 0.0);
                }
                const double wgt = 1.0 / lambda[t];
                R.noalias() += wgt * (xt * xt.adjoint());
                P.noalias() += wgt * (xt * X.col(t).adjoint());
            }
            double load = std::max(1e-10 * R.trace().real() / D, 1e-12);
            Eigen::MatrixXcd G;
            for (int attempt = 0;; ++attempt) {
                Eigen::LDLT<Eigen::MatrixXcd> ldlt(
                    R + load * Eigen::MatrixXcd::Identity(D, D));
                if (ldlt.info() == Eigen::Success) {
                    G = ldlt.solve(P);
                    if (G.allFinite()) break;
                }
                load *= 100.0;
                if (attempt > 12) {
                    G = Eigen::MatrixXcd::Zero(D, M);
                    break;
                }
            }
            for (int64_t t = 0; t < T; ++t) {
                for (int k = 0; k < taps; ++k) {
                    const int64_t tt = t - delay - k;
                    for (int64_t m = 0; m < M; ++m)
                        xt(k * M + m) = tt >= 0 ? X(m, tt) : std::complex<double>(0.0, 0.0);
                }
                Y.col(t) = X.col(t) - G.adjoint() * xt;
            }
            update_lambda(Y);
        }
        for (int64_t t = 0; t < T; ++t)
            for (int64_t m = 0; m < M; ++m) out.at(f, t, m) = Y(m, t);
    }
    return out;
}

}  // namespace snet
