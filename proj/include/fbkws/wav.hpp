#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbkws {

// 16-bit signed PCM, RIFF/WAVE. The only format the corpus uses.
struct WavData {
  std::vector<double> samples;  // mono, scaled to [-1, 1)
  int sample_rate = 0;
};

// Throws std::runtime_error on malformed files, wrong channel count or
// wrong bit depth. Unknown RIFF chunks are skipped.
WavData read_wav(const std::string& path);

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace fbkws
