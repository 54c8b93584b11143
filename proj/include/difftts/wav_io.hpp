#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace difftts {

// RIFF/WAVE, mono, 16-bit signed PCM. Samples are clamped to [-1, 1] on
// write and scaled by 32767.
void write_wav16(const std::filesystem::path& path, const std::vector<double>& samples,
                 int sample_rate);

struct WavData {
    std::vector<double> samples;
    int sample_rate = 0;
};

WavData read_wav16(const std::filesystem::path& path);

}  // namespace difftts
