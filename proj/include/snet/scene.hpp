#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "snet/stft.hpp"

namespace snet {

using Pos3 = std::array<double, 3>;

struct RoomSetup {
    Pos3 room{6.0, 5.0, 3.0};  // m
    double t60 = 0.5;          // s; <= 0 means anechoic
    std::vector<Pos3> mics;
    std::vector<Pos3> sources;
    int sample_rate = 16000;
};

struct RoomImpulseResponse {
    int sample_rate = 16000;
    // filters[p][m], all the same length
    std::vector<std::vector<std::vector<double>>> filters;
    int64_t length() const {
        return filters.empty() || filters[0].empty() ? 0
                                                     : static_cast<int64_t>(filters[0][0].size());
    }
    int64_t peak_index(int p, int m) const;
};

struct DirectPathInfo {
    std::vector<std::vector<double>> delay_samples;  // fractional, per (p,m)
    std::vector<std::vector<double>> level;          // linear direct-path gain per (p,m)
    std::vector<std::vector<std::vector<double>>> filters;  // truncated RIRs
};

// Image method with uniform wall absorption from Sabine's formula and an
// 81-tap windowed-sinc fractional-delay interpolator.
RoomImpulseResponse simulate_rir(const RoomSetup& setup);

// Zero the RIR outside [peak - half_window, peak + half_window].
DirectPathInfo extract_direct_path(const RoomImpulseResponse& rir, double half_window_ms = 2.5);

// Overwrite delay/level with the geometric values (distance / c).
void fill_geometry_info(DirectPathInfo& dp, const RoomSetup& setup);

// Isotropic noise from a quasi-uniform set of far-field plane waves with
// independent source signals; pairwise coherence follows sinc(2 pi f d / c).
// kind: "white" or "speech_shaped".
Waveform gen_diffuse_noise(const std::vector<Pos3>& mics, const std::string& kind, int64_t length,
                           int sample_rate, uint64_t seed, int num_waves = 512);

// Bandlimited speech-like test signal: tilted/formant-shaped noise with a
// syllabic amplitude envelope.
std::vector<double> synth_speech(int64_t length, int sample_rate, Rng& rng);

struct SceneRender {
    Waveform mixture;                          // M channels
    std::vector<std::vector<double>> targets;  // P direct-path signals at the reference channel
    std::vector<Waveform> images;              // P reverberant images (scaled), M channels
    Waveform noise;                            // scaled noise
    std::vector<double> source_gains;          // gain applied to each source
    double noise_gain = 0.0;
};

// sir_db[p] is the level of speaker 1 relative to speaker p at the reference
// channel (entry 0 is ignored); snr_db relates summed reverberant speech to
// noise at the reference channel (infinity disables noise).
SceneRender mix_scene(const std::vector<std::vector<double>>& sources,
                      const RoomImpulseResponse& rir, const DirectPathInfo& dp,
                      const Waveform& noise, const std::vector<double>& sir_db, double snr_db,
                      int ref_channel);

// ---------------------------------------------------------------------------

struct CorpusConfig {
    int count = 10;
    uint64_t seed = 1;
    int sample_rate = 8000;
    int speakers = 2;
    double utt_seconds = 4.0;
    std::string array_kind = "circular";  // circular | pair
    int num_mics = 6;
    double array_radius = 0.10;
    double pair_spacing = 0.08;
    std::array<double, 2> t60_range{0.1, 1.0};
    std::array<double, 2> sir_range{-5.0, 5.0};
    std::array<double, 2> snr_range{0.0, 20.0};
    std::array<double, 2> room_x{5.0, 8.0};
    std::array<double, 2> room_y{4.0, 7.0};
    std::array<double, 2> room_z{2.8, 3.5};
    std::array<double, 2> src_dist{1.0, 4.0};
    std::string noise_kind = "white";
    std::string source_pool = "synthetic";  // "synthetic" or a directory of WAV files
    int ref_channel = 0;

    nlohmann::json to_json() const;
    static CorpusConfig from_json(const nlohmann::json& j);
};

struct SceneRecord {
    int index = 0;
    std::string mixture;
    std::vector<std::string> targets;
    std::string noise;
    std::string rir;
    double t60 = 0;
    std::vector<double> sir_db;
    double snr_db = 0;
    int sample_rate = 0;
    int ref_channel = 0;
    Pos3 room{};
    std::vector<Pos3> mics;
    std::vector<Pos3> sources;

    nlohmann::json to_json() const;
    static SceneRecord from_json(const nlohmann::json& j);
};

std::vector<SceneRecord> make_corpus(const CorpusConfig& cfg, const std::string& out_dir);
std::vector<SceneRecord> load_manifest(const std::string& manifest_path);
// Paths inside records are relative to the manifest directory.
std::string manifest_dir(const std::string& manifest_path);

void write_rir(const std::string& path, const RoomImpulseResponse& rir);
RoomImpulseResponse read_rir(const std::string& path);

std::vector<Pos3> circular_array(Pos3 center, int n, double radius);

}  // namespace snet
