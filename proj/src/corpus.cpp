#include "difftts/corpus.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <stdexcept>

namespace difftts {

using nlohmann::json;

namespace {
constexpr double kPi = 3.14159265358979323846;

// FFTW planning is not thread-safe; executions are
std::mutex fftw_mutex;
}  // namespace

void FeatureConfig::validate() const {
    if (sample_rate < 1000) throw std::invalid_argument("FeatureConfig: sample_rate too low");
    if (hop < 1 || frame_size < hop)
        throw std::invalid_argument("FeatureConfig: need 1 <= hop <= frame_size");
    if (fft_size < frame_size) throw std::invalid_argument("FeatureConfig: fft_size < frame_size");
    if ((fft_size & (fft_size - 1)) != 0)
        throw std::invalid_argument("FeatureConfig: fft_size must be a power of two");
    if (n_mels < 1 || n_mels >= fft_size / 2)
        throw std::invalid_argument("FeatureConfig: n_mels must be < fft bins");
    if (!(fmin >= 0 && fmax > fmin && fmax <= sample_rate / 2.0))
        throw std::invalid_argument("FeatureConfig: bad mel frequency bounds");
}

void CorpusConfig::validate() const {
    if (phoneme_vocab < 4) throw std::invalid_argument("CorpusConfig: phoneme inventory >= 4");
    if (min_phonemes < 1 || max_phonemes < min_phonemes)
        throw std::invalid_argument("CorpusConfig: bad phoneme count range");
    if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0))
        throw std::invalid_argument("CorpusConfig: labeled_fraction in (0,1)");
    if (!(tempo_fast > 0 && tempo_slow > tempo_fast))
        throw std::invalid_argument("CorpusConfig: need tempo_slow > tempo_fast > 0");
}

void Utterance::check_invariants(const FeatureConfig& fc) const {
    int total = 0;
    for (int d : durations) {
        if (d < 1) throw std::runtime_error("Utterance: duration < 1");
        total += d;
    }
    if (phonemes.size() != durations.size())
        throw std::runtime_error("Utterance: phoneme/duration length mismatch");
    if (total != frames()) throw std::runtime_error("Utterance: sum(durations) != frames");
    if (waveform.size() != static_cast<size_t>(total) * fc.hop)
        throw std::runtime_error("Utterance: waveform length != frames*hop");
    if (mel.size() != static_cast<size_t>(total) * fc.n_mels)
        throw std::runtime_error("Utterance: mel size mismatch");
}

int phoneme_base_duration(int phoneme) {
    if (phoneme == 0) return 3;  // silence
    return 4 + (phoneme * 13) % 7;  // 4..10 frames
}

int phoneme_mode_duration(int phoneme, double tempo) {
    return std::max(1, static_cast<int>(std::lround(phoneme_base_duration(phoneme) * tempo)));
}

std::vector<double> phoneme_fingerprint(int phoneme, int harmonics) {
    std::vector<double> a(static_cast<size_t>(harmonics), 0.0);
    if (phoneme == 0) return a;  // silence
    int peak1 = 1 + (phoneme * 3) % 4;       // 1..4
    int peak2 = 1 + (phoneme * 5 + 2) % 5;   // 1..5
    for (int h = 1; h <= harmonics; ++h) {
        double v = 0.35 * std::exp(-(h - peak1) * (h - peak1) / 1.2) +
                   0.22 * std::exp(-(h - peak2) * (h - peak2) / 2.0) + 0.08 / h;
        a[static_cast<size_t>(h - 1)] = v;
    }
    return a;
}

std::vector<double> synth_toy_waveform(const std::vector<int>& phonemes,
                                       const std::vector<int>& durations,
                                       const std::vector<double>& pitch,
                                       const FeatureConfig& fc, int harmonics) {
    fc.validate();
    if (phonemes.size() != durations.size())
        throw std::invalid_argument("synth_toy_waveform: phoneme/duration length mismatch");
    int total_frames = 0;
    for (int d : durations) total_frames += d;
    if (pitch.size() != static_cast<size_t>(total_frames))
        throw std::invalid_argument("synth_toy_waveform: pitch length mismatch");

    // frame-level phoneme labels
    std::vector<int> frame_ph(static_cast<size_t>(total_frames));
    int f = 0;
    for (size_t i = 0; i < phonemes.size(); ++i)
        for (int k = 0; k < durations[i]; ++k) frame_ph[static_cast<size_t>(f++)] = phonemes[i];

    size_t out_len = static_cast<size_t>(total_frames) * fc.hop;
    std::vector<double> wav(out_len + fc.frame_size, 0.0);

    std::vector<double> window(static_cast<size_t>(fc.frame_size));
    for (int n = 0; n < fc.frame_size; ++n)
        window[static_cast<size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / fc.frame_size);
    // Hann overlap-add sums to 0.5 * frame/hop when hop divides the frame
    double cola = 0.5 * static_cast<double>(fc.frame_size) / fc.hop;

    for (int j = 0; j < total_frames; ++j) {
        int ph = frame_ph[static_cast<size_t>(j)];
        double f0 = pitch[static_cast<size_t>(j)];
        auto amp = phoneme_fingerprint(ph, harmonics);
        size_t base = static_cast<size_t>(j) * fc.hop;
        for (int n = 0; n < fc.frame_size; ++n) {
            double t = static_cast<double>(base + n) / fc.sample_rate;
            double s = 0.0;
            for (size_t h = 0; h < amp.size(); ++h)
                if (amp[h] != 0.0) s += amp[h] * std::sin(2.0 * kPi * f0 * (h + 1) * t);
            wav[base + n] += window[static_cast<size_t>(n)] * s / cola;
        }
    }
    wav.resize(out_len);
    return wav;
}

int mel_frame_count(size_t waveform_len, const FeatureConfig& fc) {
    if (waveform_len < static_cast<size_t>(fc.frame_size))
        throw std::invalid_argument("mel_spectrogram: input shorter than one frame");
    return static_cast<int>(waveform_len / fc.hop);
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// triangular filterbank edge frequencies (n_mels + 2 points)
std::vector<double> mel_edges(const FeatureConfig& fc) {
    std::vector<double> edges(static_cast<size_t>(fc.n_mels) + 2);
    double m0 = hz_to_mel(fc.fmin), m1 = hz_to_mel(fc.fmax);
    for (int i = 0; i < fc.n_mels + 2; ++i)
        edges[static_cast<size_t>(i)] = mel_to_hz(m0 + (m1 - m0) * i / (fc.n_mels + 1));
    return edges;
}

}  // namespace

double mel_band_center_hz(int band, const FeatureConfig& fc) {
    auto edges = mel_edges(fc);
    return edges[static_cast<size_t>(band) + 1];
}

std::vector<double> mel_spectrogram(const std::vector<double>& waveform,
                                    const FeatureConfig& fc) {
    fc.validate();
    int n_frames = mel_frame_count(waveform.size(), fc);
    int bins = fc.fft_size / 2 + 1;

    std::vector<double> window(static_cast<size_t>(fc.frame_size));
    for (int n = 0; n < fc.frame_size; ++n)
        window[static_cast<size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / fc.frame_size);

    // precompute filterbank weights
    auto edges = mel_edges(fc);
    double bin_hz = static_cast<double>(fc.sample_rate) / fc.fft_size;
    std::vector<std::vector<std::pair<int, double>>> bank(static_cast<size_t>(fc.n_mels));
    for (int m = 0; m < fc.n_mels; ++m) {
        double lo = edges[static_cast<size_t>(m)], mid = edges[static_cast<size_t>(m) + 1],
               hi = edges[static_cast<size_t>(m) + 2];
        for (int b = 0; b < bins; ++b) {
            double f = b * bin_hz;
            double w = 0.0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w = (hi - f) / (hi - mid);
            if (w > 0.0) bank[static_cast<size_t>(m)].emplace_back(b, w);
        }
    }

    std::vector<double> out(static_cast<size_t>(n_frames) * fc.n_mels);

    std::lock_guard<std::mutex> lock(fftw_mutex);
    std::vector<double> in(static_cast<size_t>(fc.fft_size), 0.0);
    std::vector<fftw_complex> spec(static_cast<size_t>(bins));
    fftw_plan plan =
        fftw_plan_dft_r2c_1d(fc.fft_size, in.data(), spec.data(), FFTW_ESTIMATE);

    for (int j = 0; j < n_frames; ++j) {
        std::fill(in.begin(), in.end(), 0.0);
        size_t base = static_cast<size_t>(j) * fc.hop;
        for (int n = 0; n < fc.frame_size; ++n) {
            size_t idx = base + n;
            double s = idx < waveform.size() ? waveform[idx] : 0.0;
            in[static_cast<size_t>(n)] = s * window[static_cast<size_t>(n)];
        }
        fftw_execute(plan);
        for (int m = 0; m < fc.n_mels; ++m) {
            double e = 0.0;
            for (auto [b, w] : bank[static_cast<size_t>(m)]) {
                double re = spec[static_cast<size_t>(b)][0], im = spec[static_cast<size_t>(b)][1];
                e += w * std::sqrt(re * re + im * im);
            }
            out[static_cast<size_t>(j) * fc.n_mels + m] = std::log(std::max(fc.log_floor, e));
        }
    }
    fftw_destroy_plan(plan);
    return out;
}

std::vector<Utterance> generate_corpus(const FeatureConfig& fc, const CorpusConfig& cc, int n_utts,
                                       Rng& rng) {
    fc.validate();
    cc.validate();
    std::vector<Utterance> corpus;
    corpus.reserve(static_cast<size_t>(n_utts));
    for (int u = 0; u < n_utts; ++u) {
        Utterance utt;
        utt.id = "utt_" + std::to_string(u);
        utt.tempo_mode = rng.uniform() < 0.5 ? 0 : 1;
        double tempo = utt.tempo_mode == 0 ? cc.tempo_slow : cc.tempo_fast;
        double f0_base = utt.tempo_mode == 0 ? cc.f0_slow : cc.f0_fast;

        int n_ph = rng.uniform_int(cc.min_phonemes, cc.max_phonemes);
        utt.phonemes.push_back(0);  // leading/trailing silence
        for (int i = 0; i < n_ph; ++i) utt.phonemes.push_back(rng.uniform_int(1, cc.phoneme_vocab - 1));
        utt.phonemes.push_back(0);

        for (int ph : utt.phonemes) {
            int jitter = cc.duration_jitter > 0 ? rng.uniform_int(-1, 1) : 0;
            utt.durations.push_back(std::max(1, phoneme_mode_duration(ph, tempo) + jitter));
        }

        int total_frames = 0;
        for (int d : utt.durations) total_frames += d;

        // piecewise-smooth contour around the mode's base f0
        double phase = rng.uniform() * 2.0 * kPi;
        double cycles = 0.8 + rng.uniform() * 1.2;
        for (int j = 0; j < total_frames; ++j) {
            double x = total_frames > 1 ? static_cast<double>(j) / (total_frames - 1) : 0.0;
            utt.pitch.push_back(f0_base * (1.0 + 0.05 * std::sin(2.0 * kPi * cycles * x + phase)));
        }

        utt.waveform = synth_toy_waveform(utt.phonemes, utt.durations, utt.pitch, fc, cc.harmonics);
        utt.mel = mel_spectrogram(utt.waveform, fc);
        utt.check_invariants(fc);
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

SupervisionSplit split_supervision(const std::vector<Utterance>& corpus, double labeled_fraction,
                                   Rng& rng) {
    if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0))
        throw std::invalid_argument("split_supervision: fraction must be in (0,1)");
    int n = static_cast<int>(corpus.size());
    int n_lab = static_cast<int>(std::lround(labeled_fraction * n));
    n_lab = std::clamp(n_lab, 1, n - 1);
    if (n < 2) throw std::invalid_argument("split_supervision: corpus too small to split");

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)],
                                              order[static_cast<size_t>(rng.uniform_int(0, i))]);

    SupervisionSplit split;
    for (int i = 0; i < n; ++i) {
        bool lab = i < n_lab;
        (lab ? split.labeled : split.unlabeled)
            .emplace_back(&corpus[static_cast<size_t>(order[static_cast<size_t>(i)])], lab);
    }
    return split;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    uint64_t n = v.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * 8));
}

void write_ints(std::ostream& os, const std::vector<int>& v) {
    uint64_t n = v.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    for (int x : v) {
        int64_t q = x;
        os.write(reinterpret_cast<const char*>(&q), 8);
    }
}

std::vector<double> read_doubles(std::istream& is) {
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    return v;
}

std::vector<int> read_ints(std::istream& is) {
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    std::vector<int> v(n);
    for (auto& x : v) {
        int64_t q = 0;
        is.read(reinterpret_cast<char*>(&q), 8);
        x = static_cast<int>(q);
    }
    return v;
}

json feature_to_json(const FeatureConfig& fc) {
    return json{{"sample_rate", fc.sample_rate}, {"n_mels", fc.n_mels},
                {"frame_size", fc.frame_size},   {"hop", fc.hop},
                {"fft_size", fc.fft_size},       {"fmin", fc.fmin},
                {"fmax", fc.fmax},               {"log_floor", fc.log_floor}};
}

FeatureConfig feature_from_json(const json& j) {
    FeatureConfig fc;
    fc.sample_rate = j.at("sample_rate");
    fc.n_mels = j.at("n_mels");
    fc.frame_size = j.at("frame_size");
    fc.hop = j.at("hop");
    fc.fft_size = j.at("fft_size");
    fc.fmin = j.at("fmin");
    fc.fmax = j.at("fmax");
    fc.log_floor = j.at("log_floor");
    return fc;
}

json corpuscfg_to_json(const CorpusConfig& cc) {
    return json{{"n_utterances", cc.n_utterances},
                {"n_holdout", cc.n_holdout},
                {"phoneme_vocab", cc.phoneme_vocab},
                {"min_phonemes", cc.min_phonemes},
                {"max_phonemes", cc.max_phonemes},
                {"labeled_fraction", cc.labeled_fraction},
                {"tempo_slow", cc.tempo_slow},
                {"tempo_fast", cc.tempo_fast},
                {"f0_slow", cc.f0_slow},
                {"f0_fast", cc.f0_fast},
                {"harmonics", cc.harmonics},
                {"duration_jitter", cc.duration_jitter}};
}

CorpusConfig corpuscfg_from_json(const json& j) {
    CorpusConfig cc;
    cc.n_utterances = j.at("n_utterances");
    cc.n_holdout = j.at("n_holdout");
    cc.phoneme_vocab = j.at("phoneme_vocab");
    cc.min_phonemes = j.at("min_phonemes");
    cc.max_phonemes = j.at("max_phonemes");
    cc.labeled_fraction = j.at("labeled_fraction");
    cc.tempo_slow = j.at("tempo_slow");
    cc.tempo_fast = j.at("tempo_fast");
    cc.f0_slow = j.at("f0_slow");
    cc.f0_fast = j.at("f0_fast");
    cc.harmonics = j.at("harmonics");
    cc.duration_jitter = j.at("duration_jitter");
    return cc;
}

void save_utterance(const std::filesystem::path& file, const Utterance& u) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("save_corpus: cannot write " + file.string());
    write_ints(os, u.phonemes);
    write_ints(os, u.durations);
    write_doubles(os, u.pitch);
    write_doubles(os, u.waveform);
    write_doubles(os, u.mel);
    write_ints(os, u.semantic_tokens);
    int64_t mode = u.tempo_mode;
    os.write(reinterpret_cast<const char*>(&mode), 8);
}

Utterance load_utterance(const std::filesystem::path& file, const std::string& id) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("load_corpus: cannot read " + file.string());
    Utterance u;
    u.id = id;
    u.phonemes = read_ints(is);
    u.durations = read_ints(is);
    u.pitch = read_doubles(is);
    u.waveform = read_doubles(is);
    u.mel = read_doubles(is);
    u.semantic_tokens = read_ints(is);
    int64_t mode = 0;
    is.read(reinterpret_cast<char*>(&mode), 8);
    u.tempo_mode = static_cast<int>(mode);
    if (!is) throw std::runtime_error("load_corpus: truncated utterance file " + file.string());
    return u;
}

}  // namespace

void save_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& corpus,
                 const FeatureConfig& fc, const CorpusConfig& cc) {
    std::filesystem::create_directories(dir / "utts");
    json manifest;
    manifest["format_version"] = kCorpusFormatVersion;
    manifest["features"] = feature_to_json(fc);
    manifest["corpus_config"] = corpuscfg_to_json(cc);
    json items = json::array();
    int n_train = static_cast<int>(corpus.size()) - cc.n_holdout;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto& u = corpus[i];
        std::string file = "utts/" + u.id + ".bin";
        save_utterance(dir / file, u);
        items.push_back(json{{"id", u.id},
                             {"file", file},
                             {"frames", u.frames()},
                             {"holdout", static_cast<int>(i) >= n_train}});
    }
    manifest["items"] = items;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("save_corpus: cannot write manifest");
    os << manifest.dump(2) << "\n";
}

CorpusOnDisk load_corpus(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("load_corpus: no manifest in " + dir.string());
    json manifest = json::parse(is);
    if (manifest.at("format_version").get<int>() != kCorpusFormatVersion)
        throw std::runtime_error("load_corpus: unsupported corpus format version");
    CorpusOnDisk out;
    out.features = feature_from_json(manifest.at("features"));
    out.config = corpuscfg_from_json(manifest.at("corpus_config"));
    for (const auto& item : manifest.at("items")) {
        Utterance u = load_utterance(dir / item.at("file").get<std::string>(),
                                     item.at("id").get<std::string>());
        if (item.at("holdout").get<bool>())
            out.holdout.push_back(std::move(u));
        else
            out.items.push_back(std::move(u));
    }
    return out;
}

CorpusOnDisk build_and_save_corpus(const std::filesystem::path& dir, const FeatureConfig& fc,
                                   const CorpusConfig& cc, uint64_t seed) {
    Rng rng(seed);
    auto corpus = generate_corpus(fc, cc, cc.n_utterances + cc.n_holdout, rng);
    save_corpus(dir, corpus, fc, cc);
    return load_corpus(dir);
}

}  // namespace difftts
