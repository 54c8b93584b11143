#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "difftts/rng.hpp"

namespace difftts {

// Raised when a text-consuming trainer touches transcripts of unlabeled
// items.
struct PolicyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FeatureConfig {
    int sample_rate = 8000;
    int n_mels = 40;
    int frame_size = 320;
    int hop = 80;
    int fft_size = 512;
    double fmin = 50.0;
    double fmax = 3800.0;
    double log_floor = 1e-5;  // mel magnitude floor before log

    void validate() const;
};

struct Utterance {
    std::string id;
    std::vector<int> phonemes;
    std::vector<int> durations;       // frames per phoneme, >= 1
    std::vector<double> pitch;        // per-frame f0 in Hz
    std::vector<double> waveform;     // frames * hop samples
    std::vector<double> mel;          // frames x n_mels, frame-major
    std::vector<int> semantic_tokens; // filled once a codec exists
    int tempo_mode = 0;               // generator ground truth: 0 slow, 1 fast

    int frames() const { return static_cast<int>(pitch.size()); }
    void check_invariants(const FeatureConfig& fc) const;
};

struct CorpusConfig {
    int n_utterances = 64;
    int n_holdout = 16;
    int phoneme_vocab = 10;  // id 0 is silence
    int min_phonemes = 3;    // interior (non-silence) phonemes
    int max_phonemes = 6;
    double labeled_fraction = 15.0 / 180.0;
    double tempo_slow = 1.35;
    double tempo_fast = 0.65;
    double f0_slow = 140.0;
    double f0_fast = 200.0;
    int harmonics = 6;
    double duration_jitter = 1.0;  // +-1 frame uniform

    void validate() const;
};

// deterministic per-phoneme duration mode (frames) at tempo factor `tempo`
int phoneme_base_duration(int phoneme);
int phoneme_mode_duration(int phoneme, double tempo);

// deterministic per-phoneme harmonic fingerprint, h in [1, harmonics]
std::vector<double> phoneme_fingerprint(int phoneme, int harmonics);

std::vector<double> synth_toy_waveform(const std::vector<int>& phonemes,
                                       const std::vector<int>& durations,
                                       const std::vector<double>& pitch,
                                       const FeatureConfig& fc, int harmonics = 6);

// log-mel frames, frame-major (n_frames x n_mels); n_frames = len/hop for
// hop-aligned input, floor(len/hop) otherwise
std::vector<double> mel_spectrogram(const std::vector<double>& waveform, const FeatureConfig& fc);
int mel_frame_count(size_t waveform_len, const FeatureConfig& fc);

// mel filterbank center frequency of band b (for test oracles)
double mel_band_center_hz(int band, const FeatureConfig& fc);

std::vector<Utterance> generate_corpus(const FeatureConfig& fc, const CorpusConfig& cc, int n_utts,
                                       Rng& rng);

// Supervision split. Labeled items expose transcripts; unlabeled items throw
// PolicyError on transcript access.
class SupervisedView {
public:
    SupervisedView(const Utterance* u, bool transcript_ok)
        : utt_(u), transcript_ok_(transcript_ok) {}

    const std::string& id() const { return utt_->id; }
    bool labeled() const { return transcript_ok_; }
    const std::vector<double>& waveform() const { return utt_->waveform; }
    const std::vector<double>& mel() const { return utt_->mel; }
    const std::vector<int>& semantic_tokens() const { return utt_->semantic_tokens; }
    int frames() const { return utt_->frames(); }

    const std::vector<int>& phonemes() const {
        require_transcript("phonemes");
        return utt_->phonemes;
    }
    const std::vector<int>& durations() const {
        require_transcript("durations");
        return utt_->durations;
    }
    const Utterance& raw() const { return *utt_; }

private:
    void require_transcript(const char* what) const {
        if (!transcript_ok_)
            throw PolicyError(std::string("supervision policy: ") + what +
                              " of unlabeled item " + utt_->id + " requested");
    }
    const Utterance* utt_;
    bool transcript_ok_;
};

struct SupervisionSplit {
    std::vector<SupervisedView> labeled;
    std::vector<SupervisedView> unlabeled;
};

SupervisionSplit split_supervision(const std::vector<Utterance>& corpus, double labeled_fraction,
                                   Rng& rng);

// ---- persistence: manifest + per-utterance tensor files ----
inline constexpr int kCorpusFormatVersion = 1;

void save_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& corpus,
                 const FeatureConfig& fc, const CorpusConfig& cc);

struct CorpusOnDisk {
    std::vector<Utterance> items;   // training items
    std::vector<Utterance> holdout; // held-out items, never trained on
    FeatureConfig features;
    CorpusConfig config;
};

CorpusOnDisk load_corpus(const std::filesystem::path& dir);

// generate + mark holdout + write; returns what was written
CorpusOnDisk build_and_save_corpus(const std::filesystem::path& dir, const FeatureConfig& fc,
                                   const CorpusConfig& cc, uint64_t seed);

}  // namespace difftts
