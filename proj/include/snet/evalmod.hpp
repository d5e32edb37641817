#pragma once

// Inference pipeline, attention-map extraction, long-utterance chunked
// processing with permutation-resolved stitching, and metric reports.

#include <functional>
#include <string>
#include <vector>

#include "snet/model.hpp"
#include "snet/objective.hpp"
#include "snet/stft.hpp"

namespace snet {

inline int default_win(int sample_rate) { return sample_rate > 12000 ? 512 : 256; }

// Full enhancement pass on one utterance: normalize, analyze, forward,
// synthesize, rescale, pad to the input length. Returns P streams.
std::vector<std::vector<double>> enhance_utterance(Model<float>& model, const Waveform& mix,
                                                   int win = 0);

struct AttentionMaps {
    int64_t T = 0, F = 0;
    std::vector<double> qk;  // [T, T]: scores averaged over frequencies
    std::vector<double> fk;  // [F, T]: scores averaged over queries
};

AttentionMaps attention_maps(Model<float>& model, const Waveform& utt, int layer, int head,
                             int win = 0);

void write_pgm(const std::string& path, int64_t rows, int64_t cols,
               const std::vector<double>& values);
void write_csv_grid(const std::string& path, int64_t rows, int64_t cols,
                    const std::vector<double>& values);

// ---------------------------------------------------------------------------

// Maps one chunk of input to P output streams of the same length.
using StreamProcessor = std::function<std::vector<std::vector<double>>(const Waveform&)>;

struct StitchPlan {
    int64_t chunk_len = 0;
    int64_t hop = 0;
    std::vector<int64_t> starts;
    // per boundary: permutation between consecutive chunk outputs
    std::vector<std::vector<int>> boundary_perms;
    // per chunk: global stream p uses chunk output applied_perms[i][p]
    std::vector<std::vector<int>> applied_perms;
};

// 4 s chunks with 2 s overlap by default; per-boundary permutation chosen to
// maximize summed zero-lag normalized cross-correlation over the overlap,
// jointly across streams; overlapped samples linearly crossfaded.
std::vector<std::vector<double>> chunk_and_stitch(const StreamProcessor& process,
                                                  const Waveform& mix, int num_streams,
                                                  double chunk_s = 4.0, double overlap_s = 2.0,
                                                  StitchPlan* plan = nullptr);

// ---------------------------------------------------------------------------

struct UttReport {
    int index = 0;
    std::vector<int> perm;
    double si_sdr = 0, sdr = 0;
    double si_sdr_unproc = 0, sdr_unproc = 0;
    double improvement = 0;  // si_sdr - si_sdr_unproc
};

struct ReportTable {
    std::vector<UttReport> rows;
    double mean_si_sdr = 0, mean_sdr = 0, mean_unproc = 0, mean_improvement = 0;
};

// ests/refs: per utterance, P streams; unproc: the unprocessed reference-channel
// mixture per utterance, compared against the same targets.
ReportTable report(const std::vector<std::vector<std::vector<double>>>& ests,
                   const std::vector<std::vector<std::vector<double>>>& refs,
                   const std::vector<std::vector<double>>& unproc);

std::string format_report(const ReportTable& table);

}  // namespace snet
