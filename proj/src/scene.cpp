#include "snet/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "snet/fft.hpp"
#include "snet/wav.hpp"

namespace fs = std::filesystem;

namespace snet {

namespace {

constexpr int kSincHalf = 40;  // 81-tap windowed-sinc interpolator

double dist(const Pos3& a, const Pos3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Add amp * delta(t - tau) via a Hann-windowed sinc.
void add_impulse(std::vector<double>& h, double tau, double amp) {
    const int64_t lo = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(tau)) - kSincHalf);
    const int64_t hi = std::min<int64_t>(static_cast<int64_t>(h.size()) - 1,
                                         static_cast<int64_t>(std::floor(tau)) + kSincHalf);
    for (int64_t n = lo; n <= hi; ++n) {
        const double u = static_cast<double>(n) - tau;
        double s;
        if (std::abs(u) < 1e-9) {
            s = 1.0;
        } else {
            s = std::sin(M_PI * u) / (M_PI * u);
        }
        const double w = 0.5 + 0.5 * std::cos(M_PI * u / (kSincHalf + 1));
        h[n] += amp * s * w;
    }
}

double rms(const std::vector<double>& x) {
    double e = 0;
    for (double v : x) e += v * v;
    return std::sqrt(e / std::max<size_t>(1, x.size()));
}

double energy(const std::vector<double>& x) {
    double e = 0;
    for (double v : x) e += v * v;
    return e;
}

std::vector<double> convolve_trim(const std::vector<double>& x, const std::vector<double>& h,
                                  int64_t out_len) {
    std::vector<double> y(out_len, 0.0);
    const int64_t nx = static_cast<int64_t>(x.size());
    const int64_t nh = static_cast<int64_t>(h.size());
    for (int64_t i = 0; i < nh; ++i) {
        const double hv = h[i];
        if (hv == 0.0) continue;
        const int64_t jmax = std::min(out_len - i, nx);
        for (int64_t j = 0; j < jmax; ++j) y[i + j] += hv * x[j];
    }
    return y;
}

std::vector<Pos3> fibonacci_sphere(int n, Rng& rng) {
    // quasi-uniform directions plus a random global rotation
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    // random rotation from a unit quaternion
    double q[4];
    double norm = 0;
    for (auto& v : q) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : q) v /= norm;
    const double w = q[0], xq = q[1], yq = q[2], zq = q[3];
    double R[3][3] = {
        {1 - 2 * (yq * yq + zq * zq), 2 * (xq * yq - w * zq), 2 * (xq * zq + w * yq)},
        {2 * (xq * yq + w * zq), 1 - 2 * (xq * xq + zq * zq), 2 * (yq * zq - w * xq)},
        {2 * (xq * zq - w * yq), 2 * (yq * zq + w * xq), 1 - 2 * (xq * xq + yq * yq)}};
    std::vector<Pos3> dirs(n);
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = ga * i;
        const double v[3] = {r * std::cos(phi), r * std::sin(phi), z};
        for (int a = 0; a < 3; ++a)
            dirs[i][a] = R[a][0] * v[0] + R[a][1] * v[1] + R[a][2] * v[2];
    }
    return dirs;
}

}  // namespace

int64_t RoomImpulseResponse::peak_index(int p, int m) const {
    const auto& h = filters[p][m];
    int64_t best = 0;
    double bv = -1.0;
    for (int64_t i = 0; i < static_cast<int64_t>(h.size()); ++i)
        if (std::abs(h[i]) > bv) {
            bv = std::abs(h[i]);
            best = i;
        }
    return best;
}

RoomImpulseResponse simulate_rir(const RoomSetup& setup) {
    const double Lx = setup.room[0], Ly = setup.room[1], Lz = setup.room[2];
    if (Lx <= 0 || Ly <= 0 || Lz <= 0) throw DataError("simulate_rir: bad room dimensions");
    for (const auto& pos : setup.mics)
        for (int a = 0; a < 3; ++a)
            if (pos[a] <= 0 || pos[a] >= setup.room[a])
                throw DataError("simulate_rir: microphone outside room");
    for (const auto& pos : setup.sources)
        for (int a = 0; a < 3; ++a)
            if (pos[a] <= 0 || pos[a] >= setup.room[a])
                throw DataError("simulate_rir: source outside room");

    const double fs = setup.sample_rate;
    const bool anechoic = setup.t60 <= 0.0;
    double beta = 0.0;
    if (!anechoic) {
        const double V = Lx * Ly * Lz;
        const double A = 2.0 * (Lx * Ly + Lx * Lz + Ly * Lz);
        const double alpha = 0.161 * V / (A * setup.t60);
        if (alpha > 1.0)
            throw DataError(sformat("simulate_rir: T60=%.3f s infeasible for this room (needs "
                                    "absorption %.2f)",
                                    setup.t60, alpha));
        beta = std::sqrt(1.0 - alpha);
    }

    double max_dist = 0.0;
    for (const auto& s : setup.sources)
        for (const auto& m : setup.mics) max_dist = std::max(max_dist, dist(s, m));
    const double tail_s = anechoic ? 0.0 : setup.t60 * 1.4;
    const int64_t len = static_cast<int64_t>((max_dist / kSoundSpeed + tail_s) * fs) +
                        2 * kSincHalf + 8;
    const double t_max = static_cast<double>(len - kSincHalf) / fs;
    const double reach = kSoundSpeed * t_max;

    RoomImpulseResponse rir;
    rir.sample_rate = setup.sample_rate;
    const int P = static_cast<int>(setup.sources.size());
    const int M = static_cast<int>(setup.mics.size());
    rir.filters.assign(P, std::vector<std::vector<double>>(M, std::vector<double>(len, 0.0)));

    const int nx = anechoic ? 0 : static_cast<int>(std::ceil(reach / (2 * Lx))) + 1;
    const int ny = anechoic ? 0 : static_cast<int>(std::ceil(reach / (2 * Ly))) + 1;
    const int nz = anechoic ? 0 : static_cast<int>(std::ceil(reach / (2 * Lz))) + 1;

    for (int p = 0; p < P; ++p) {
        const Pos3 src = setup.sources[p];
#pragma omp parallel for schedule(static) if (M > 1)
        for (int m = 0; m < M; ++m) {
            auto& h = rir.filters[p][m];
            const Pos3 mic = setup.mics[m];
            for (int ix = -nx; ix <= nx; ++ix)
                for (int qx = 0; qx <= (anechoic ? 0 : 1); ++qx)
                    for (int iy = -ny; iy <= ny; ++iy)
                        for (int qy = 0; qy <= (anechoic ? 0 : 1); ++qy)
                            for (int iz = -nz; iz <= nz; ++iz)
                                for (int qz = 0; qz <= (anechoic ? 0 : 1); ++qz) {
                                    const double px = (1 - 2 * qx) * src[0] + 2.0 * ix * Lx;
                                    const double py = (1 - 2 * qy) * src[1] + 2.0 * iy * Ly;
                                    const double pz = (1 - 2 * qz) * src[2] + 2.0 * iz * Lz;
                                    const double dx = px - mic[0], dy = py - mic[1],
                                                 dz = pz - mic[2];
                                    const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                                    if (d > reach) continue;
                                    const int refl = std::abs(ix - qx) + std::abs(ix) +
                                                     std::abs(iy - qy) + std::abs(iy) +
                                                     std::abs(iz - qz) + std::abs(iz);
                                    double amp = 1.0 / (4.0 * M_PI * std::max(d, 1e-2));
                                    if (refl > 0) amp *= std::pow(beta, refl);
                                    add_impulse(h, d / kSoundSpeed * fs, amp);
                                }
        }
    }
    return rir;
}

DirectPathInfo extract_direct_path(const RoomImpulseResponse& rir, double half_window_ms) {
    const int P = static_cast<int>(rir.filters.size());
    const int M = P > 0 ? static_cast<int>(rir.filters[0].size()) : 0;
    const int64_t half = static_cast<int64_t>(half_window_ms * 1e-3 * rir.sample_rate);
    DirectPathInfo dp;
    dp.delay_samples.assign(P, std::vector<double>(M, 0.0));
    dp.level.assign(P, std::vector<double>(M, 1.0));
    dp.filters.assign(P, std::vector<std::vector<double>>(M));
    for (int p = 0; p < P; ++p)
        for (int m = 0; m < M; ++m) {
            const auto& h = rir.filters[p][m];
            const int64_t pk = rir.peak_index(p, m);
            std::vector<double> d(h.size(), 0.0);
            const int64_t lo = std::max<int64_t>(0, pk - half);
            const int64_t hi = std::min<int64_t>(static_cast<int64_t>(h.size()) - 1, pk + half);
            for (int64_t i = lo; i <= hi; ++i) d[i] = h[i];
            dp.filters[p][m] = std::move(d);
            dp.delay_samples[p][m] = static_cast<double>(pk);
            dp.level[p][m] = std::abs(h[pk]);
        }
    return dp;
}

void fill_geometry_info(DirectPathInfo& dp, const RoomSetup& setup) {
    for (size_t p = 0; p < setup.sources.size(); ++p)
        for (size_t m = 0; m < setup.mics.size(); ++m) {
            const double d = dist(setup.sources[p], setup.mics[m]);
            dp.delay_samples[p][m] = d / kSoundSpeed * setup.sample_rate;
            dp.level[p][m] = 1.0 / (4.0 * M_PI * std::max(d, 1e-2));
        }
}

Waveform gen_diffuse_noise(const std::vector<Pos3>& mics, const std::string& kind, int64_t length,
                           int sample_rate, uint64_t seed, int num_waves) {
    if (mics.empty() || length <= 0) throw DataError("gen_diffuse_noise: empty request");
    if (kind != "white" && kind != "speech_shaped")
        throw DataError("gen_diffuse_noise: unknown kind " + kind);
    const int M = static_cast<int>(mics.size());
    Rng rng(seed);
    const int64_t npad = next_pow2(length + 4096);
    const int64_t half = npad / 2;

    auto dirs = fibonacci_sphere(num_waves, rng);
    std::vector<std::vector<std::complex<double>>> acc(
        M, std::vector<std::complex<double>>(half + 1, {0.0, 0.0}));
    std::vector<std::complex<double>> buf(npad);
    const double wave_gain = 1.0 / std::sqrt(static_cast<double>(num_waves));

    for (int k = 0; k < num_waves; ++k) {
        Rng wr = rng.child("wave", k);
        for (int64_t i = 0; i < npad; ++i) buf[i] = {wr.normal(), 0.0};
        fft(buf, false);
        for (int m = 0; m < M; ++m) {
            // far-field delay of this plane wave at mic m, seconds
            const double tau = (dirs[k][0] * mics[m][0] + dirs[k][1] * mics[m][1] +
                                dirs[k][2] * mics[m][2]) /
                               kSoundSpeed;
            const double wstep = -2.0 * M_PI * tau * sample_rate / npad;
            const std::complex<double> rot(std::cos(wstep), std::sin(wstep));
            std::complex<double> ph(wave_gain, 0.0);
            auto& a = acc[m];
            for (int64_t f = 0; f <= half; ++f) {
                a[f] += buf[f] * ph;
                ph *= rot;
            }
        }
    }

    Waveform out(M, length, sample_rate);
    for (int m = 0; m < M; ++m) {
        auto& a = acc[m];
        if (kind == "speech_shaped") {
            for (int64_t f = 0; f <= half; ++f) {
                const double hz = static_cast<double>(f) * sample_rate / npad;
                const double tilt = 1.0 / std::sqrt(1.0 + hz / 500.0);
                const double hp = hz / (hz + 60.0);
                a[f] *= tilt * hp;
            }
        }
        auto x = irfft(a, static_cast<int>(npad));
        std::copy(x.begin(), x.begin() + length, out.samples[m].begin());
    }
    // common scale, preserving inter-channel structure
    double r = 0.0;
    for (int m = 0; m < M; ++m) r += rms(out.samples[m]);
    r /= M;
    if (r > 0)
        for (int m = 0; m < M; ++m)
            for (auto& v : out.samples[m]) v /= r;
    return out;
}

std::vector<double> synth_speech(int64_t length, int sample_rate, Rng& rng) {
    const int64_t npad = next_pow2(length);
    std::vector<std::complex<double>> buf(npad);
    for (int64_t i = 0; i < npad; ++i) buf[i] = {rng.normal(), 0.0};
    fft(buf, false);
    // spectral tilt plus a few random formant-like bumps
    const int nf = 3;
    double fc[nf], bw[nf], gn[nf];
    for (int i = 0; i < nf; ++i) {
        fc[i] = rng.uniform(250.0, std::min(3200.0, 0.4 * sample_rate));
        bw[i] = rng.uniform(80.0, 320.0);
        gn[i] = rng.uniform(1.5, 5.0);
    }
    for (int64_t f = 0; f <= npad / 2; ++f) {
        const double hz = static_cast<double>(f) * sample_rate / npad;
        double g = (hz / (hz + 90.0)) / std::sqrt(1.0 + hz / 400.0);
        for (int i = 0; i < nf; ++i) {
            const double d = (hz - fc[i]) / bw[i];
            g += gn[i] * std::exp(-0.5 * d * d) / 10.0;
        }
        buf[f] *= g;
        if (f > 0 && f < npad / 2) buf[npad - f] = std::conj(buf[f]);
    }
    fft(buf, true);
    std::vector<double> x(length);
    for (int64_t i = 0; i < length; ++i) x[i] = buf[i].real();

    // syllabic envelope: smooth bumps with pauses
    std::vector<double> env(length, 0.0);
    double t = 0.05;
    const double dur_s = static_cast<double>(length) / sample_rate;
    while (t < dur_s) {
        const double width = rng.uniform(0.08, 0.30);
        const double amp = rng.uniform(0.4, 1.0);
        const int64_t c = static_cast<int64_t>(t * sample_rate);
        const int64_t wl = static_cast<int64_t>(width * sample_rate);
        for (int64_t i = std::max<int64_t>(0, c - wl); i < std::min(length, c + wl); ++i) {
            const double u = static_cast<double>(i - c) / wl;
            env[i] = std::max(env[i], amp * (0.5 + 0.5 * std::cos(M_PI * u)));
        }
        t += width * rng.uniform(0.9, 1.6);
        if (rng.uniform() < 0.15) t += rng.uniform(0.1, 0.4);  // pause
    }
    for (int64_t i = 0; i < length; ++i) x[i] *= (0.05 + env[i]);
    const double r = rms(x);
    if (r > 0)
        for (auto& v : x) v /= (r * 10.0);
    return x;
}

SceneRender mix_scene(const std::vector<std::vector<double>>& sources,
                      const RoomImpulseResponse& rir, const DirectPathInfo& dp,
                      const Waveform& noise, const std::vector<double>& sir_db, double snr_db,
                      int ref_channel) {
    const int P = static_cast<int>(sources.size());
    const int M = P > 0 ? static_cast<int>(rir.filters[0].size()) : 0;
    if (P == 0 || M == 0) throw DataError("mix_scene: empty inputs");
    if (static_cast<int>(rir.filters.size()) != P) throw DataError("mix_scene: source/RIR count");
    if (ref_channel < 0 || ref_channel >= M) throw DataError("mix_scene: bad reference channel");
    const int64_t n = static_cast<int64_t>(sources[0].size());
    for (const auto& s : sources) {
        if (static_cast<int64_t>(s.size()) != n) throw DataError("mix_scene: source lengths differ");
        if (energy(s) <= 0.0) throw DataError("mix_scene: silent source rejected");
    }

    SceneRender out;
    out.images.assign(P, Waveform(M, n, rir.sample_rate));
    out.targets.assign(P, {});
    for (int p = 0; p < P; ++p) {
        for (int m = 0; m < M; ++m)
            out.images[p].samples[m] = convolve_trim(sources[p], rir.filters[p][m], n);
        out.targets[p] = convolve_trim(sources[p], dp.filters[p][ref_channel], n);
    }

    // SIR: scale speakers 2..P against speaker 1 at the reference channel.
    out.source_gains.assign(P, 1.0);
    const double e_ref0 = energy(out.images[0].samples[ref_channel]);
    for (int p = 1; p < P; ++p) {
        const double ep = energy(out.images[p].samples[ref_channel]);
        const double sir = p < static_cast<int>(sir_db.size()) ? sir_db[p] : 0.0;
        if (ep <= 0.0) throw DataError("mix_scene: silent reverberant image");
        out.source_gains[p] = std::sqrt(e_ref0 / (ep * std::pow(10.0, sir / 10.0)));
    }
    for (int p = 0; p < P; ++p) {
        const double g = out.source_gains[p];
        if (g == 1.0) continue;
        for (int m = 0; m < M; ++m)
            for (auto& v : out.images[p].samples[m]) v *= g;
        for (auto& v : out.targets[p]) v *= g;
    }

    // SNR: scale noise against the summed reverberant speech at the reference.
    std::vector<double> speech_ref(n, 0.0);
    for (int p = 0; p < P; ++p)
        for (int64_t i = 0; i < n; ++i) speech_ref[i] += out.images[p].samples[ref_channel][i];
    out.noise = Waveform(M, n, rir.sample_rate);
    out.noise_gain = 0.0;
    if (noise.channels() == M && noise.length() >= n && std::isfinite(snr_db)) {
        const double es = energy(speech_ref);
        std::vector<double> nref(noise.samples[ref_channel].begin(),
                                 noise.samples[ref_channel].begin() + n);
        const double en = energy(nref);
        if (en > 0.0) {
            out.noise_gain = std::sqrt(es / (en * std::pow(10.0, snr_db / 10.0)));
            for (int m = 0; m < M; ++m)
                for (int64_t i = 0; i < n; ++i)
                    out.noise.samples[m][i] = noise.samples[m][i] * out.noise_gain;
        }
    }

    out.mixture = Waveform(M, n, rir.sample_rate);
    for (int m = 0; m < M; ++m) {
        auto& mix = out.mixture.samples[m];
        for (int p = 0; p < P; ++p) {
            const auto& img = out.images[p].samples[m];
            for (int64_t i = 0; i < n; ++i) mix[i] += img[i];
        }
        for (int64_t i = 0; i < n; ++i) mix[i] += out.noise.samples[m][i];
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Pos3> circular_array(Pos3 center, int n, double radius) {
    std::vector<Pos3> mics(n);
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * i / n;
        mics[i] = {center[0] + radius * std::cos(a), center[1] + radius * std::sin(a), center[2]};
    }
    return mics;
}

nlohmann::json CorpusConfig::to_json() const {
    return {{"count", count},
            {"seed", seed},
            {"sample_rate", sample_rate},
            {"speakers", speakers},
            {"utt_seconds", utt_seconds},
            {"array_kind", array_kind},
            {"num_mics", num_mics},
            {"array_radius", array_radius},
            {"pair_spacing", pair_spacing},
            {"t60_range", t60_range},
            {"sir_range", sir_range},
            {"snr_range", snr_range},
            {"room_x", room_x},
            {"room_y", room_y},
            {"room_z", room_z},
            {"src_dist", src_dist},
            {"noise_kind", noise_kind},
            {"source_pool", source_pool},
            {"ref_channel", ref_channel}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j) {
    CorpusConfig c;
    c.count = j.value("count", c.count);
    c.seed = j.value("seed", c.seed);
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.speakers = j.value("speakers", c.speakers);
    c.utt_seconds = j.value("utt_seconds", c.utt_seconds);
    c.array_kind = j.value("array_kind", c.array_kind);
    c.num_mics = j.value("num_mics", c.num_mics);
    c.array_radius = j.value("array_radius", c.array_radius);
    c.pair_spacing = j.value("pair_spacing", c.pair_spacing);
    c.t60_range = j.value("t60_range", c.t60_range);
    c.sir_range = j.value("sir_range", c.sir_range);
    c.snr_range = j.value("snr_range", c.snr_range);
    c.room_x = j.value("room_x", c.room_x);
    c.room_y = j.value("room_y", c.room_y);
    c.room_z = j.value("room_z", c.room_z);
    c.src_dist = j.value("src_dist", c.src_dist);
    c.noise_kind = j.value("noise_kind", c.noise_kind);
    c.source_pool = j.value("source_pool", c.source_pool);
    c.ref_channel = j.value("ref_channel", c.ref_channel);
    return c;
}

nlohmann::json SceneRecord::to_json() const {
    return {{"index", index},     {"mixture", mixture},
            {"targets", targets}, {"noise", noise},
            {"rir", rir},         {"t60", t60},
            {"sir_db", sir_db},   {"snr_db", snr_db},
            {"sample_rate", sample_rate}, {"ref_channel", ref_channel},
            {"room", room},       {"mics", mics},
            {"sources", sources}};
}

SceneRecord SceneRecord::from_json(const nlohmann::json& j) {
    SceneRecord r;
    r.index = j.value("index", 0);
    r.mixture = j.value("mixture", std::string());
    r.targets = j.value("targets", std::vector<std::string>());
    r.noise = j.value("noise", std::string());
    r.rir = j.value("rir", std::string());
    r.t60 = j.value("t60", 0.0);
    r.sir_db = j.value("sir_db", std::vector<double>());
    r.snr_db = j.value("snr_db", 0.0);
    r.sample_rate = j.value("sample_rate", 0);
    r.ref_channel = j.value("ref_channel", 0);
    r.room = j.value("room", Pos3{});
    r.mics = j.value("mics", std::vector<Pos3>());
    r.sources = j.value("sources", std::vector<Pos3>());
    return r;
}

namespace {

std::vector<std::string> list_wavs(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> draw_source(const CorpusConfig& cfg, int64_t n, Rng& rng,
                                const std::vector<std::string>& pool) {
    if (cfg.source_pool == "synthetic") return synth_speech(n, cfg.sample_rate, rng);
    const auto& path = pool[rng.uniform_int(static_cast<int64_t>(pool.size()))];
    Waveform w = read_wav(path);
    if (w.sample_rate != cfg.sample_rate)
        throw DataError(sformat("corpus: %s has rate %d, expected %d", path.c_str(),
                                w.sample_rate, cfg.sample_rate));
    std::vector<double> x(n, 0.0);
    const auto& src = w.samples[0];
    if (static_cast<int64_t>(src.size()) >= n) {
        const int64_t off = rng.uniform_int(static_cast<int64_t>(src.size()) - n + 1);
        std::copy(src.begin() + off, src.begin() + off + n, x.begin());
    } else {
        for (int64_t i = 0; i < n; ++i) x[i] = src[i % src.size()];
    }
    if (energy(x) <= 0.0) throw DataError("corpus: drew a silent source clip");
    return x;
}

}  // namespace

std::vector<SceneRecord> make_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    if (cfg.count < 0) throw DataError("make_corpus: negative count");
    std::vector<std::string> pool;
    if (cfg.source_pool != "synthetic") {
        pool = list_wavs(cfg.source_pool);
        if (pool.empty()) throw DataError("make_corpus: empty source pool " + cfg.source_pool);
    }
    fs::create_directories(out_dir);
    std::vector<SceneRecord> records(cfg.count);
    const Rng root(cfg.seed);
    const int64_t n = static_cast<int64_t>(cfg.utt_seconds * cfg.sample_rate);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < cfg.count; ++i) {
        Rng rng = root.child("scene", static_cast<uint64_t>(i));
        RoomSetup setup;
        setup.sample_rate = cfg.sample_rate;
        setup.room = {rng.uniform(cfg.room_x[0], cfg.room_x[1]),
                      rng.uniform(cfg.room_y[0], cfg.room_y[1]),
                      rng.uniform(cfg.room_z[0], cfg.room_z[1])};
        setup.t60 = rng.uniform(cfg.t60_range[0], cfg.t60_range[1]);
        const Pos3 center = {setup.room[0] / 2 + rng.uniform(-0.3, 0.3),
                             setup.room[1] / 2 + rng.uniform(-0.3, 0.3),
                             rng.uniform(1.2, 1.8)};
        if (cfg.array_kind == "pair") {
            setup.mics = {{center[0] - cfg.pair_spacing / 2, center[1], center[2]},
                          {center[0] + cfg.pair_spacing / 2, center[1], center[2]}};
        } else {
            setup.mics = circular_array(center, cfg.num_mics, cfg.array_radius);
        }
        for (int p = 0; p < cfg.speakers; ++p) {
            Pos3 pos;
            for (int attempt = 0;; ++attempt) {
                const double d = rng.uniform(cfg.src_dist[0], cfg.src_dist[1]);
                const double az = rng.uniform(0.0, 2.0 * M_PI);
                const double el = rng.uniform(-0.25, 0.25);
                pos = {center[0] + d * std::cos(az) * std::cos(el),
                       center[1] + d * std::sin(az) * std::cos(el), center[2] + d * std::sin(el)};
                bool ok = true;
                for (int a = 0; a < 3; ++a)
                    if (pos[a] < 0.3 || pos[a] > setup.room[a] - 0.3) ok = false;
                if (ok || attempt > 200) break;
            }
            for (int a = 0; a < 3; ++a)
                pos[a] = std::min(std::max(pos[a], 0.3), setup.room[a] - 0.3);
            setup.sources.push_back(pos);
        }

        auto rir = simulate_rir(setup);
        auto dp = extract_direct_path(rir);
        fill_geometry_info(dp, setup);

        std::vector<std::vector<double>> sources(cfg.speakers);
        Rng srng = rng.child("sources");
        for (int p = 0; p < cfg.speakers; ++p) sources[p] = draw_source(cfg, n, srng, pool);

        std::vector<double> sir(cfg.speakers, 0.0);
        for (int p = 1; p < cfg.speakers; ++p) sir[p] = rng.uniform(cfg.sir_range[0], cfg.sir_range[1]);
        const double snr = rng.uniform(cfg.snr_range[0], cfg.snr_range[1]);

        Waveform noise = gen_diffuse_noise(setup.mics, cfg.noise_kind, n, cfg.sample_rate,
                                           rng.child("noise").seed());
        auto render = mix_scene(sources, rir, dp, noise, sir, snr, cfg.ref_channel);

        const std::string scene_dir = sformat("scene_%04d", i);
        fs::create_directories(fs::path(out_dir) / scene_dir);
        SceneRecord rec;
        rec.index = i;
        rec.mixture = scene_dir + "/mixture.wav";
        write_wav((fs::path(out_dir) / rec.mixture).string(), render.mixture);
        for (int p = 0; p < cfg.speakers; ++p) {
            Waveform tw(1, n, cfg.sample_rate);
            tw.samples[0] = render.targets[p];
            const std::string tp = scene_dir + sformat("/target_%d.wav", p + 1);
            write_wav((fs::path(out_dir) / tp).string(), tw);
            rec.targets.push_back(tp);
        }
        rec.noise = scene_dir + "/noise.wav";
        write_wav((fs::path(out_dir) / rec.noise).string(), render.noise);
        rec.rir = scene_dir + "/rir.bin";
        write_rir((fs::path(out_dir) / rec.rir).string(), rir);
        rec.t60 = setup.t60;
        rec.sir_db = sir;
        rec.snr_db = snr;
        rec.sample_rate = cfg.sample_rate;
        rec.ref_channel = cfg.ref_channel;
        rec.room = setup.room;
        rec.mics = setup.mics;
        rec.sources = setup.sources;
        records[i] = std::move(rec);
    }

    std::ofstream mf(fs::path(out_dir) / "manifest.jsonl");
    if (!mf) throw DataError("make_corpus: cannot write manifest in " + out_dir);
    for (const auto& r : records) mf << r.to_json().dump() << "\n";
    return records;
}

std::vector<SceneRecord> load_manifest(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw DataError("cannot open manifest: " + manifest_path);
    std::vector<SceneRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(SceneRecord::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

std::string manifest_dir(const std::string& manifest_path) {
    return fs::path(manifest_path).parent_path().string();
}

void write_rir(const std::string& path, const RoomImpulseResponse& rir) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write rir file: " + path);
    const char magic[4] = {'R', 'I', 'R', '1'};
    f.write(magic, 4);
    const uint32_t sr = rir.sample_rate;
    const uint32_t P = static_cast<uint32_t>(rir.filters.size());
    const uint32_t M = P > 0 ? static_cast<uint32_t>(rir.filters[0].size()) : 0;
    const uint64_t L = static_cast<uint64_t>(rir.length());
    f.write(reinterpret_cast<const char*>(&sr), 4);
    f.write(reinterpret_cast<const char*>(&P), 4);
    f.write(reinterpret_cast<const char*>(&M), 4);
    f.write(reinterpret_cast<const char*>(&L), 8);
    std::vector<float> buf(L);
    for (uint32_t p = 0; p < P; ++p)
        for (uint32_t m = 0; m < M; ++m) {
            for (uint64_t i = 0; i < L; ++i) buf[i] = static_cast<float>(rir.filters[p][m][i]);
            f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(4 * L));
        }
}

RoomImpulseResponse read_rir(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open rir file: " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::string(magic, 4) != "RIR1") throw DataError("bad rir file: " + path);
    uint32_t sr, P, M;
    uint64_t L;
    f.read(reinterpret_cast<char*>(&sr), 4);
    f.read(reinterpret_cast<char*>(&P), 4);
    f.read(reinterpret_cast<char*>(&M), 4);
    f.read(reinterpret_cast<char*>(&L), 8);
    RoomImpulseResponse rir;
    rir.sample_rate = static_cast<int>(sr);
    rir.filters.assign(P, std::vector<std::vector<double>>(M, std::vector<double>(L)));
    std::vector<float> buf(L);
    for (uint32_t p = 0; p < P; ++p)
        for (uint32_t m = 0; m < M; ++m) {
            f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * L));
            if (!f) throw DataError("truncated rir file: " + path);
            for (uint64_t i = 0; i < L; ++i) rir.filters[p][m][i] = buf[i];
        }
    return rir;
}

}  // namespace snet
