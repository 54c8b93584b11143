#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "difftts/corpus.hpp"
#include "difftts/denoiser.hpp"
#include "difftts/lm.hpp"
#include "difftts/prompt_encoder.hpp"
#include "difftts/schedule.hpp"

namespace difftts {

enum class StageKind { duration, semantic, acoustic, mel, wave };

std::string stage_name(StageKind k);
StageKind stage_from_name(const std::string& name);

struct StageTrainConfig {
    ScheduleDescriptor schedule;
    int channels = 16;
    int residual_layers = 6;
    int blocks = 2;
    int kernel = 3;
    int encoder_layers = 2;
    int encoder_heads = 2;
    int phoneme_embed_dim = 16;  // context embedding width for text-conditioned stages
    int train_steps = 300;
    int batch_size = 4;
    double lr = 1e-3;
    int crop_frames = 0;         // wave stage: train on aligned crops (0 = whole)
};

struct CodecSettings {
    int K = 32;
    int dim = 16;
    int kmeans_iterations = 25;
};

struct LMTrainSettings {
    LMConfig net;
    int train_steps = 400;
    int batch_size = 4;
    double lr = 1e-3;
};

struct ExperimentConfig {
    std::string preset = "toy";
    uint64_t seed = 1234;
    FeatureConfig features;
    CorpusConfig corpus;
    CodecSettings codec;
    PromptEncoderConfig prompt_encoder;
    AnnealConfig anneal;
    int prompt_frames = 24;      // training-time self-prompt crop length
    LMTrainSettings lm;
    std::map<StageKind, StageTrainConfig> stages;

    static ExperimentConfig preset_toy();
    static ExperimentConfig preset_paper();

    // Resolve a config file: {"preset": "toy"|"paper", ...field overrides}.
    // Unknown keys are rejected.
    static ExperimentConfig load(const std::filesystem::path& path);
    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    DenoiserConfig denoiser_config(StageKind kind) const;
    void validate() const;
};

}  // namespace difftts
