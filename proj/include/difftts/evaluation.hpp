#pragma once

#include <optional>
#include <string>
#include <vector>

#include "difftts/corpus.hpp"

namespace difftts {

struct PitchTrack {
    std::vector<double> f0;      // Hz, valid only where voiced
    std::vector<bool> voiced;
    int frames() const { return static_cast<int>(f0.size()); }
};

// Frame-wise autocorrelation pitch tracker with parabolic peak refinement.
// Low-energy frames and frames without a clear periodicity peak are marked
// unvoiced.
PitchTrack extract_pitch(const std::vector<double>& waveform, const FeatureConfig& fc,
                         double search_fmin = 80.0, double search_fmax = 400.0);

// mean squared Hz error over frames voiced in both tracks, truncation
// aligned; absent when there is no mutually voiced frame
std::optional<double> msep(const PitchTrack& pred, const PitchTrack& ref);

// mean squared frame-count error per phoneme; lengths must match
double msed(const std::vector<int>& pred, const std::vector<int>& ref);

// Levenshtein distance / reference length; |pred| for an empty reference
double token_error_rate(const std::vector<int>& pred, const std::vector<int>& ref);

// mean squared error over frame-major mel tensors, truncated to the shorter
double mel_mse(const std::vector<double>& pred, const std::vector<double>& ref, int n_mels);

struct UtteranceMetrics {
    std::string id;
    std::optional<double> msep;
    std::optional<double> msed;
    std::optional<double> ter;
    std::optional<double> mel_mse;
};

struct MetricReport {
    std::string pipeline;
    std::vector<UtteranceMetrics> per_utterance;

    std::optional<double> mean_msep() const;
    std::optional<double> mean_msed() const;
    std::optional<double> mean_ter() const;
    std::optional<double> mean_mel_mse() const;
    std::optional<double> median_mel_mse() const;

    std::string to_json_string() const;
    // one row per utterance: id, msep, msed, ter, mel_mse (tab separated)
    std::string to_tsv() const;
};

}  // namespace difftts
