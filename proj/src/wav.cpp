#include "snet/wav.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "snet/common.hpp"

namespace snet {

namespace {

uint32_t rd_u32(const char* p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}
uint16_t rd_u16(const char* p) {
    uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
}

void put_u32(std::string& s, uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::string& s, uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open wav file: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 44 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
        throw DataError("not a RIFF/WAVE file: " + path);

    uint16_t fmt = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_off = 0, data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const std::string id = buf.substr(pos, 4);
        const uint32_t len = rd_u32(buf.data() + pos + 4);
        const size_t body = pos + 8;
        if (id == "fmt ") {
            if (len < 16) throw DataError("wav: malformed fmt chunk");
            fmt = rd_u16(buf.data() + body);
            channels = rd_u16(buf.data() + body + 2);
            rate = rd_u32(buf.data() + body + 4);
            bits = rd_u16(buf.data() + body + 14);
        } else if (id == "data") {
            data_off = body;
            data_len = std::min<size_t>(len, buf.size() - body);
        }
        pos = body + len + (len & 1);
    }
    if (channels == 0 || rate == 0 || data_off == 0) throw DataError("wav: missing chunks");
    if (!((fmt == 1 && bits == 16) || (fmt == 3 && bits == 32)))
        throw DataError(sformat("wav: unsupported format (fmt=%u bits=%u)", fmt, bits));

    const size_t bytes_per = bits / 8;
    const size_t frames = data_len / (bytes_per * channels);
    Waveform out(channels, static_cast<int64_t>(frames), static_cast<int>(rate));
    const char* d = buf.data() + data_off;
    for (size_t i = 0; i < frames; ++i) {
        for (int c = 0; c < channels; ++c) {
            const char* p = d + (i * channels + c) * bytes_per;
            if (fmt == 1) {
                int16_t v;
                std::memcpy(&v, p, 2);
                out.samples[c][i] = static_cast<double>(v) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, p, 4);
                out.samples[c][i] = static_cast<double>(v);
            }
        }
    }
    return out;
}

void write_wav(const std::string& path, const Waveform& wave, int bits_per_sample) {
    if (bits_per_sample != 16 && bits_per_sample != 32)
        throw DataError("wav: only 16-bit PCM and 32-bit float supported");
    const int channels = wave.channels();
    const int64_t frames = wave.length();
    const int bytes_per = bits_per_sample / 8;
    const uint32_t data_len = static_cast<uint32_t>(frames * channels * bytes_per);

    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, bits_per_sample == 16 ? 1 : 3);
    put_u16(out, static_cast<uint16_t>(channels));
    put_u32(out, static_cast<uint32_t>(wave.sample_rate));
    put_u32(out, static_cast<uint32_t>(wave.sample_rate * channels * bytes_per));
    put_u16(out, static_cast<uint16_t>(channels * bytes_per));
    put_u16(out, static_cast<uint16_t>(bits_per_sample));
    out += "data";
    put_u32(out, data_len);
    for (int64_t i = 0; i < frames; ++i) {
        for (int c = 0; c < channels; ++c) {
            const double v = wave.samples[c][i];
            if (bits_per_sample == 16) {
                const double clipped = std::max(-1.0, std::min(1.0, v));
                const int16_t q = static_cast<int16_t>(std::lround(clipped * 32767.0));
                out.append(reinterpret_cast<const char*>(&q), 2);
            } else {
                const float fv = static_cast<float>(v);
                out.append(reinterpret_cast<const char*>(&fv), 4);
            }
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write wav file: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace snet
