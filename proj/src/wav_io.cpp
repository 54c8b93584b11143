#include "difftts/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace difftts {

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }

uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint16_t get_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    return v;
}

}  // namespace

void write_wav16(const std::filesystem::path& path, const std::vector<double>& samples,
                 int sample_rate) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_wav16: cannot open " + path.string());
    uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    os.write("RIFF", 4);
    put_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_u32(os, 16);
    put_u16(os, 1);                        // PCM
    put_u16(os, 1);                        // mono
    put_u32(os, static_cast<uint32_t>(sample_rate));
    put_u32(os, static_cast<uint32_t>(sample_rate * 2));  // byte rate
    put_u16(os, 2);                        // block align
    put_u16(os, 16);                       // bits per sample
    os.write("data", 4);
    put_u32(os, data_bytes);
    for (double s : samples) {
        double c = std::clamp(s, -1.0, 1.0);
        int16_t q = static_cast<int16_t>(std::lround(c * 32767.0));
        os.write(reinterpret_cast<const char*>(&q), 2);
    }
    if (!os) throw std::runtime_error("write_wav16: write failed for " + path.string());
}

WavData read_wav16(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_wav16: cannot open " + path.string());
    char tag[5] = {0};
    is.read(tag, 4);
    if (std::strncmp(tag, "RIFF", 4) != 0) throw std::runtime_error("read_wav16: not a RIFF file");
    get_u32(is);
    is.read(tag, 4);
    if (std::strncmp(tag, "WAVE", 4) != 0) throw std::runtime_error("read_wav16: not a WAVE file");

    WavData out;
    uint16_t channels = 0, bits = 0;
    bool got_fmt = false;
    while (is.read(tag, 4)) {
        uint32_t chunk = get_u32(is);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            uint16_t fmt = get_u16(is);
            channels = get_u16(is);
            out.sample_rate = static_cast<int>(get_u32(is));
            get_u32(is);
            get_u16(is);
            bits = get_u16(is);
            if (chunk > 16) is.seekg(chunk - 16, std::ios::cur);
            if (fmt != 1 || channels != 1 || bits != 16)
                throw std::runtime_error("read_wav16: expected mono 16-bit PCM");
            got_fmt = true;
        } else if (std::strncmp(tag, "data", 4) == 0) {
            if (!got_fmt) throw std::runtime_error("read_wav16: data before fmt chunk");
            size_t n = chunk / 2;
            out.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                int16_t q = 0;
                is.read(reinterpret_cast<char*>(&q), 2);
                out.samples[i] = static_cast<double>(q) / 32767.0;
            }
            return out;
        } else {
            is.seekg(chunk + (chunk & 1), std::ios::cur);
        }
    }
    throw std::runtime_error("read_wav16: no data chunk in " + path.string());
}

}  // namespace difftts
