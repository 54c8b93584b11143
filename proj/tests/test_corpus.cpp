#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "difftts/corpus.hpp"
#include "difftts/evaluation.hpp"

using namespace difftts;

namespace {

FeatureConfig toy_features() {
    FeatureConfig fc;
    fc.sample_rate = 8000;
    fc.n_mels = 40;
    fc.frame_size = 320;
    fc.hop = 80;
    fc.fft_size = 512;
    return fc;
}

CorpusConfig toy_corpus_cfg() {
    CorpusConfig cc;
    cc.phoneme_vocab = 8;
    cc.min_phonemes = 2;
    cc.max_phonemes = 4;
    return cc;
}

// dominant FFT bin of a mid-signal frame, via a plain DFT oracle
int dominant_bin(const std::vector<double>& wav, const FeatureConfig& fc) {
    int n = fc.fft_size;
    size_t start = wav.size() / 2;
    std::vector<double> frame(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n && start + i < wav.size(); ++i)
        frame[static_cast<size_t>(i)] = wav[start + i] * (0.5 - 0.5 * std::cos(2.0 * M_PI * i / n));
    int best = 0;
    double best_mag = -1.0;
    for (int k = 1; k < n / 2; ++k) {
        double re = 0.0, im = 0.0;
        for (int i = 0; i < n; ++i) {
            double ph = -2.0 * M_PI * k * i / n;
            re += frame[static_cast<size_t>(i)] * std::cos(ph);
            im += frame[static_cast<size_t>(i)] * std::sin(ph);
        }
        double mag = re * re + im * im;
        if (mag > best_mag) {
            best_mag = mag;
            best = k;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("generation is byte-identical under a fixed seed") {
    auto fc = toy_features();
    auto cc = toy_corpus_cfg();
    Rng r1(42), r2(42);
    auto a = generate_corpus(fc, cc, 4, r1);
    auto b = generate_corpus(fc, cc, 4, r2);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].phonemes == b[i].phonemes);
        CHECK(a[i].durations == b[i].durations);
        CHECK(a[i].pitch == b[i].pitch);
        CHECK(a[i].waveform == b[i].waveform);
        CHECK(a[i].mel == b[i].mel);
    }
}

TEST_CASE("every generated utterance satisfies the structural invariants") {
    auto fc = toy_features();
    auto cc = toy_corpus_cfg();
    Rng rng(7);
    auto corpus = generate_corpus(fc, cc, 12, rng);
    for (const auto& u : corpus) {
        CHECK_NOTHROW(u.check_invariants(fc));
        int total = 0;
        for (int d : u.durations) {
            CHECK(d >= 1);
            total += d;
        }
        CHECK(total == u.frames());
        CHECK(u.waveform.size() == static_cast<size_t>(total) * fc.hop);
        CHECK(u.pitch.size() == static_cast<size_t>(total));
        CHECK(u.mel.size() == static_cast<size_t>(total) * fc.n_mels);
    }
}

TEST_CASE("frame arithmetic at the published feature settings") {
    FeatureConfig fc;
    fc.sample_rate = 24000;
    fc.n_mels = 40;
    fc.frame_size = 960;
    fc.hop = 240;
    fc.fft_size = 1024;
    fc.fmax = 11000.0;
    // one second of audio at hop 240 is 100 frames
    CHECK(mel_frame_count(24000, fc) == 100);
}

TEST_CASE("toy waveform synthesis") {
    auto fc = toy_features();

    SUBCASE("silence phoneme produces near-zero energy") {
        std::vector<double> pitch(10, 150.0);
        auto wav = synth_toy_waveform({0}, {10}, pitch, fc);
        double energy = 0.0;
        for (double s : wav) energy += s * s;
        CHECK(energy < 1e-12);
    }

    SUBCASE("same inputs give identical waveforms") {
        std::vector<double> pitch(12, 180.0);
        auto a = synth_toy_waveform({3, 5}, {6, 6}, pitch, fc);
        auto b = synth_toy_waveform({3, 5}, {6, 6}, pitch, fc);
        CHECK(a == b);
    }

    SUBCASE("doubling the pitch doubles the dominant spectral peak") {
        std::vector<double> p150(24, 150.0), p300(24, 300.0);
        auto low = synth_toy_waveform({2}, {24}, p150, fc);
        auto high = synth_toy_waveform({2}, {24}, p300, fc);
        int b_low = dominant_bin(low, fc);
        int b_high = dominant_bin(high, fc);
        CHECK(std::abs(b_high - 2 * b_low) <= 2);
    }

    SUBCASE("length mismatch rejected") {
        std::vector<double> pitch(5, 150.0);
        CHECK_THROWS_AS(synth_toy_waveform({1, 2}, {3}, pitch, fc), std::invalid_argument);
        CHECK_THROWS_AS(synth_toy_waveform({1}, {3}, pitch, fc), std::invalid_argument);
    }
}

TEST_CASE("mel spectrogram") {
    auto fc = toy_features();

    SUBCASE("a pure tone at a band center dominates that band") {
        int band = 12;
        double f = mel_band_center_hz(band, fc);
        std::vector<double> wav(static_cast<size_t>(fc.hop) * 30);
        for (size_t i = 0; i < wav.size(); ++i)
            wav[i] = 0.5 * std::sin(2.0 * M_PI * f * static_cast<double>(i) / fc.sample_rate);
        auto mel = mel_spectrogram(wav, fc);
        int frames = mel_frame_count(wav.size(), fc);
        // inspect a middle frame
        const double* row = mel.data() + static_cast<size_t>(frames / 2) * fc.n_mels;
        int argmax = 0;
        for (int b = 1; b < fc.n_mels; ++b)
            if (row[b] > row[argmax]) argmax = b;
        CHECK(std::abs(argmax - band) <= 1);
    }

    SUBCASE("zero waveform maps to the log floor") {
        std::vector<double> wav(static_cast<size_t>(fc.frame_size) * 2, 0.0);
        auto mel = mel_spectrogram(wav, fc);
        for (double v : mel) CHECK(v == doctest::Approx(std::log(fc.log_floor)));
    }

    SUBCASE("too-short input is rejected") {
        std::vector<double> wav(static_cast<size_t>(fc.frame_size) - 1, 0.0);
        CHECK_THROWS_AS(mel_spectrogram(wav, fc), std::invalid_argument);
    }

    SUBCASE("frame count formula") {
        std::vector<double> wav(static_cast<size_t>(fc.hop) * 25, 0.0);
        auto mel = mel_spectrogram(wav, fc);
        CHECK(mel.size() == static_cast<size_t>(25) * fc.n_mels);
    }
}

TEST_CASE("pitch ground truth is recoverable from synthesized audio") {
    auto fc = toy_features();
    auto cc = toy_corpus_cfg();
    Rng rng(3);
    auto corpus = generate_corpus(fc, cc, 6, rng);
    std::vector<double> rel_errors;
    for (const auto& u : corpus) {
        auto track = extract_pitch(u.waveform, fc);
        for (int j = 0; j < std::min<int>(track.frames(), u.frames()); ++j) {
            if (!track.voiced[static_cast<size_t>(j)]) continue;
            double ref = u.pitch[static_cast<size_t>(j)];
            rel_errors.push_back(std::fabs(track.f0[static_cast<size_t>(j)] - ref) / ref);
        }
    }
    REQUIRE(rel_errors.size() > 20);
    std::sort(rel_errors.begin(), rel_errors.end());
    double median = rel_errors[rel_errors.size() / 2];
    CHECK(median <= 0.05);
}

TEST_CASE("supervision split") {
    auto fc = toy_features();
    auto cc = toy_corpus_cfg();
    Rng rng(9);
    auto corpus = generate_corpus(fc, cc, 10, rng);

    SUBCASE("half split on ten items gives five and five") {
        Rng srng(1);
        auto split = split_supervision(corpus, 0.5, srng);
        CHECK(split.labeled.size() == 5);
        CHECK(split.unlabeled.size() == 5);
    }

    SUBCASE("union is the corpus, intersection empty") {
        Rng srng(2);
        auto split = split_supervision(corpus, 0.3, srng);
        std::vector<std::string> seen;
        for (const auto& v : split.labeled) seen.push_back(v.id());
        for (const auto& v : split.unlabeled) seen.push_back(v.id());
        CHECK(seen.size() == corpus.size());
        std::sort(seen.begin(), seen.end());
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    }

    SUBCASE("degenerate fractions are rejected") {
        Rng srng(3);
        CHECK_THROWS_AS(split_supervision(corpus, 0.0, srng), std::invalid_argument);
        CHECK_THROWS_AS(split_supervision(corpus, 1.0, srng), std::invalid_argument);
    }

    SUBCASE("unlabeled transcript access raises a policy error") {
        Rng srng(4);
        auto split = split_supervision(corpus, 0.5, srng);
        const auto& labeled = split.labeled.front();
        CHECK_NOTHROW(labeled.phonemes());
        CHECK_NOTHROW(labeled.durations());
        const auto& unlabeled = split.unlabeled.front();
        CHECK_NOTHROW(unlabeled.waveform());
        CHECK_NOTHROW(unlabeled.mel());
        CHECK_THROWS_AS(unlabeled.phonemes(), PolicyError);
        CHECK_THROWS_AS(unlabeled.durations(), PolicyError);
    }
}

TEST_CASE("per-phoneme duration modes are bimodal across tempos") {
    auto cc = toy_corpus_cfg();
    for (int ph = 0; ph < cc.phoneme_vocab; ++ph) {
        int fast = phoneme_mode_duration(ph, cc.tempo_fast);
        int slow = phoneme_mode_duration(ph, cc.tempo_slow);
        CHECK(slow > fast);  // two separated modes per phoneme
        CHECK(fast >= 1);
    }
}

TEST_CASE("corpus round-trips through the manifest format") {
    auto fc = toy_features();
    auto cc = toy_corpus_cfg();
    cc.n_utterances = 5;
    cc.n_holdout = 2;
    auto dir = std::filesystem::temp_directory_path() / "difftts_corpus_test";
    std::filesystem::remove_all(dir);

    auto saved = build_and_save_corpus(dir, fc, cc, 1234);
    CHECK(saved.items.size() == 5);
    CHECK(saved.holdout.size() == 2);

    auto loaded = load_corpus(dir);
    REQUIRE(loaded.items.size() == saved.items.size());
    for (size_t i = 0; i < loaded.items.size(); ++i) {
        CHECK(loaded.items[i].id == saved.items[i].id);
        CHECK(loaded.items[i].phonemes == saved.items[i].phonemes);
        CHECK(loaded.items[i].waveform == saved.items[i].waveform);
        CHECK(loaded.items[i].mel == saved.items[i].mel);
    }

    SUBCASE("same seed twice produces identical manifests") {
        auto dir2 = std::filesystem::temp_directory_path() / "difftts_corpus_test2";
        std::filesystem::remove_all(dir2);
        build_and_save_corpus(dir2, fc, cc, 1234);
        std::ifstream m1(dir / "manifest.json"), m2(dir2 / "manifest.json");
        std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
        std::filesystem::remove_all(dir2);
    }

    std::filesystem::remove_all(dir);
}
