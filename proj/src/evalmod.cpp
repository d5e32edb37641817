#include "snet/evalmod.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace snet {

std::vector<std::vector<double>> enhance_utterance(Model<float>& model, const Waveform& mix,
                                                   int win) {
    if (mix.channels() != static_cast<int>(model.config().num_mics))
        throw DataError(sformat("enhance: %d channels, model expects %lld", mix.channels(),
                                (long long)model.config().num_mics));
    if (win == 0) win = default_win(mix.sample_rate);

    Waveform scaled = mix;
    double var = 0.0;
    for (double v : mix.samples[0]) var += v * v;
    const double stdv = std::sqrt(var / std::max<int64_t>(1, mix.length())) + 1e-8;
    for (auto& ch : scaled.samples)
        for (auto& v : ch) v /= stdv;

    const Spectrogram spec = stft(scaled, win);
    auto x = stack_input<float>(spec);
    auto y = model.forward(x);

    const int P = static_cast<int>(model.config().num_speakers);
    std::vector<std::vector<double>> out(P, std::vector<double>(mix.length(), 0.0));
    for (int p = 0; p < P; ++p) {
        Spectrogram sp = unstack_channel(y, p, win, mix.sample_rate);
        Waveform w = istft(sp);
        const int64_t n = std::min(w.length(), mix.length());
        for (int64_t i = 0; i < n; ++i) out[p][i] = w.samples[0][i] * stdv;
    }
    return out;
}

AttentionMaps attention_maps(Model<float>& model, const Waveform& utt, int layer, int head,
                             int win) {
    const auto& cfg = model.config();
    if (layer < 0 || layer >= cfg.num_blocks)
        throw DataError(sformat("attention_maps: layer %d out of range [0,%lld)", layer,
                                (long long)cfg.num_blocks));
    if (head < 0 || head >= cfg.heads)
        throw DataError(sformat("attention_maps: head %d out of range [0,%d)", head, cfg.heads));
    if (win == 0) win = default_win(utt.sample_rate);

    Waveform scaled = utt;
    double var = 0.0;
    for (double v : utt.samples[0]) var += v * v;
    const double stdv = std::sqrt(var / std::max<int64_t>(1, utt.length())) + 1e-8;
    for (auto& ch : scaled.samples)
        for (auto& v : ch) v /= stdv;

    const Spectrogram spec = stft(scaled, win);
    auto x = stack_input<float>(spec);
    Tensor<float> scores;
    typename Model<float>::ForwardCtx ctx;
    ctx.attn_layer = layer;
    ctx.attn_scores = &scores;
    model.forward(x, ctx);
    if (scores.numel() == 0) throw NumericalError("attention_maps: no scores recorded");

    const int64_t F = spec.F, T = spec.T, H = cfg.heads;
    AttentionMaps maps;
    maps.T = T;
    maps.F = F;
    maps.qk.assign(T * T, 0.0);
    maps.fk.assign(F * T, 0.0);
    const float* s = scores.data();  // [F*H, T, T]
    for (int64_t f = 0; f < F; ++f) {
        const float* a = s + ((f * H + head) * T) * T;
        for (int64_t q = 0; q < T; ++q)
            for (int64_t k = 0; k < T; ++k) {
                maps.qk[q * T + k] += a[q * T + k] / static_cast<double>(F);
                maps.fk[f * T + k] += a[q * T + k] / static_cast<double>(T);
            }
    }
    return maps;
}

void write_pgm(const std::string& path, int64_t rows, int64_t cols,
               const std::vector<double>& values) {
    if (static_cast<int64_t>(values.size()) != rows * cols)
        throw ShapeError("write_pgm: size mismatch");
    double lo = 1e300, hi = -1e300;
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image: " + path);
    f << "P5\n" << cols << " " << rows << "\n255\n";
    for (double v : values) {
        const int g = static_cast<int>(std::lround((v - lo) / span * 255.0));
        f.put(static_cast<char>(std::max(0, std::min(255, g))));
    }
}

void write_csv_grid(const std::string& path, int64_t rows, int64_t cols,
                    const std::vector<double>& values) {
    if (static_cast<int64_t>(values.size()) != rows * cols)
        throw ShapeError("write_csv_grid: size mismatch");
    std::ofstream f(path);
    if (!f) throw DataError("cannot write csv: " + path);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            f << values[r * cols + c];
            f << (c + 1 < cols ? ',' : '\n');
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

double ncc(const double* a, const double* b, int64_t n) {
    double ab = 0, aa = 0, bb = 0;
    for (int64_t i = 0; i < n; ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa * bb) + 1e-12);
}

}  // namespace

std::vector<std::vector<double>> chunk_and_stitch(const StreamProcessor& process,
                                                  const Waveform& mix, int num_streams,
                                                  double chunk_s, double overlap_s,
                                                  StitchPlan* plan) {
    const int sr = mix.sample_rate;
    const int64_t N = mix.length();
    const int64_t chunk = static_cast<int64_t>(chunk_s * sr);
    const int64_t overlap = static_cast<int64_t>(overlap_s * sr);
    const int64_t hop = chunk - overlap;
    if (hop <= 0) throw DataError("chunk_and_stitch: overlap must be shorter than chunk");

    auto slice = [&](int64_t start, int64_t len) {
        Waveform w(mix.channels(), len, sr);
        for (int m = 0; m < mix.channels(); ++m)
            std::copy(mix.samples[m].begin() + start, mix.samples[m].begin() + start + len,
                      w.samples[m].begin());
        return w;
    };

    StitchPlan local;
    StitchPlan& pl = plan ? *plan : local;
    pl.chunk_len = chunk;
    pl.hop = hop;
    pl.starts.clear();
    pl.boundary_perms.clear();
    pl.applied_perms.clear();

    std::vector<std::vector<double>> out(num_streams, std::vector<double>(N, 0.0));
    if (N <= chunk) {
        auto streams = process(slice(0, N));
        if (static_cast<int>(streams.size()) != num_streams)
            throw DataError("chunk_and_stitch: processor returned wrong stream count");
        std::vector<int> id(num_streams);
        for (int p = 0; p < num_streams; ++p) id[p] = p;
        pl.starts.push_back(0);
        pl.applied_perms.push_back(id);
        for (int p = 0; p < num_streams; ++p)
            std::copy(streams[p].begin(), streams[p].begin() + std::min<int64_t>(N, streams[p].size()),
                      out[p].begin());
        return out;
    }

    std::vector<int64_t> starts;
    for (int64_t s = 0;; s += hop) {
        if (s + chunk >= N) {
            starts.push_back(N - chunk);
            break;
        }
        starts.push_back(s);
    }
    pl.starts = starts;

    const auto perms = permutations(num_streams);
    int64_t cur_end = 0;
    for (size_t ci = 0; ci < starts.size(); ++ci) {
        const int64_t s = starts[ci];
        auto streams = process(slice(s, chunk));
        if (static_cast<int>(streams.size()) != num_streams)
            throw DataError("chunk_and_stitch: processor returned wrong stream count");
        for (const auto& st : streams)
            if (static_cast<int64_t>(st.size()) != chunk)
                throw DataError("chunk_and_stitch: processor changed the chunk length");

        std::vector<int> applied(num_streams);
        if (ci == 0) {
            for (int p = 0; p < num_streams; ++p) applied[p] = p;
            for (int p = 0; p < num_streams; ++p)
                std::copy(streams[p].begin(), streams[p].end(), out[p].begin() + s);
        } else {
            const int64_t ov = cur_end - s;  // actual overlap with stitched output
            double best = -1e300;
            for (const auto& perm : perms) {
                double score = 0;
                for (int p = 0; p < num_streams; ++p)
                    score += ncc(out[p].data() + s, streams[perm[p]].data(), ov);
                if (score > best) {
                    best = score;
                    applied = perm;
                }
            }
            // boundary permutation relative to the previous chunk's assignment
            const auto& prev = pl.applied_perms.back();
            std::vector<int> boundary(num_streams);
            for (int p = 0; p < num_streams; ++p) boundary[prev[p]] = applied[p];
            pl.boundary_perms.push_back(boundary);
            for (int p = 0; p < num_streams; ++p) {
                const auto& src = streams[applied[p]];
                for (int64_t i = 0; i < ov; ++i) {
                    const double w = static_cast<double>(i + 1) / static_cast<double>(ov + 1);
                    out[p][s + i] = (1.0 - w) * out[p][s + i] + w * src[i];
                }
                std::copy(src.begin() + ov, src.end(), out[p].begin() + s + ov);
            }
        }
        pl.applied_perms.push_back(applied);
        cur_end = s + chunk;
    }
    return out;
}

// ---------------------------------------------------------------------------

ReportTable report(const std::vector<std::vector<std::vector<double>>>& ests,
                   const std::vector<std::vector<std::vector<double>>>& refs,
                   const std::vector<std::vector<double>>& unproc) {
    if (ests.size() != refs.size() || ests.size() != unproc.size())
        throw DataError("report: utterance counts differ");
    ReportTable table;
    for (size_t u = 0; u < ests.size(); ++u) {
        const int P = static_cast<int>(ests[u].size());
        if (static_cast<int>(refs[u].size()) != P) throw DataError("report: stream counts differ");
        for (int p = 0; p < P; ++p)
            if (ests[u][p].size() != refs[u][p].size() ||
                unproc[u].size() != refs[u][p].size())
                throw DataError(sformat("report: length mismatch in utterance %zu", u));

        UttReport row;
        row.index = static_cast<int>(u);
        const PitResult pr = pit(ests[u], refs[u], "si_sdr");
        row.perm = pr.perm;
        row.si_sdr = pr.value;
        double sdr_sum = 0, un_si = 0, un_sdr = 0;
        for (int p = 0; p < P; ++p) {
            sdr_sum += sdr_db(ests[u][p], refs[u][pr.perm[p]]);
            un_si += si_sdr_db(unproc[u], refs[u][p]);
            un_sdr += sdr_db(unproc[u], refs[u][p]);
        }
        row.sdr = sdr_sum / P;
        row.si_sdr_unproc = un_si / P;
        row.sdr_unproc = un_sdr / P;
        row.improvement = row.si_sdr - row.si_sdr_unproc;
        table.rows.push_back(row);
    }
    for (const auto& r : table.rows) {
        table.mean_si_sdr += r.si_sdr;
        table.mean_sdr += r.sdr;
        table.mean_unproc += r.si_sdr_unproc;
        table.mean_improvement += r.improvement;
    }
    if (!table.rows.empty()) {
        const double inv = 1.0 / table.rows.size();
        table.mean_si_sdr *= inv;
        table.mean_sdr *= inv;
        table.mean_unproc *= inv;
        table.mean_improvement *= inv;
    }
    return table;
}

std::string format_report(const ReportTable& table) {
    std::ostringstream os;
    os << "utt\tsi_sdr\tsdr\tunproc_si_sdr\timprovement\tpairing\n";
    for (const auto& r : table.rows) {
        os << r.index << "\t" << sformat("%.2f", r.si_sdr) << "\t" << sformat("%.2f", r.sdr)
           << "\t" << sformat("%.2f", r.si_sdr_unproc) << "\t"
           << sformat("%.2f", r.improvement) << "\t";
        for (size_t p = 0; p < r.perm.size(); ++p)
            os << r.perm[p] << (p + 1 < r.perm.size() ? "," : "");
        os << "\n";
    }
    os << sformat("mean\t%.2f\t%.2f\t%.2f\t%.2f\t-\n", table.mean_si_sdr, table.mean_sdr,
                  table.mean_unproc, table.mean_improvement);
    return os.str();
}

}  // namespace snet
