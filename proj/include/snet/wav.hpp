#pragma once

#include <string>

#include "snet/stft.hpp"

namespace snet {

// PCM 16-bit and IEEE float 32-bit RIFF files, interleaved multichannel.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wave, int bits_per_sample = 32);

}  // namespace snet
