#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "difftts/codec.hpp"
#include "difftts/config.hpp"
#include "difftts/corpus.hpp"
#include "difftts/ddpm.hpp"
#include "difftts/denoiser.hpp"
#include "difftts/lm.hpp"
#include "difftts/prompt_encoder.hpp"

namespace difftts {

enum class PipelineKind { diff_lm, tetra, tri };

std::string pipeline_name(PipelineKind k);
PipelineKind pipeline_from_name(const std::string& name);

// Stage topology per system: diffusion stages in execution order, plus
// whether stage one is the autoregressive semantic LM.
struct PipelineSpec {
    PipelineKind kind;
    bool uses_lm = false;
    std::vector<StageKind> diffusion_stages;

    static PipelineSpec make(PipelineKind kind);
    // which components may read transcripts (labeled data only)
    static bool stage_needs_text(StageKind k);
};

struct SynthesisResult {
    std::vector<double> waveform;
    std::vector<int> durations;         // per phoneme; empty for diff-lm
    std::vector<int> semantic_tokens;   // empty for tri
    std::vector<double> mel;            // frame-major log-mel (denormalized)
    int mel_frames = 0;
    std::vector<std::string> stage_trace;
};

// One trained (or training) pipeline bound to an experiment directory.
class Experiment {
public:
    Experiment(ExperimentConfig cfg, PipelineKind kind, std::filesystem::path dir);

    // Train all stages on the corpus under the supervision split; writes
    // checkpoints, provenance and loss logs. With resume, completed stages
    // are skipped and a partial stage continues from its last snapshot.
    void train(const CorpusOnDisk& corpus, bool resume = false);

    // Load a previously trained experiment directory.
    static Experiment open(const std::filesystem::path& dir);

    SynthesisResult synthesize(const std::vector<int>& phonemes,
                               const std::vector<double>& prompt_mel, int prompt_frames,
                               uint64_t seed, bool deterministic,
                               const std::vector<int>* forced_durations = nullptr);

    const PipelineSpec& spec() const { return spec_; }
    const ExperimentConfig& config() const { return cfg_; }
    const std::filesystem::path& dir() const { return dir_; }
    const std::vector<std::string>& training_trace() const { return training_trace_; }
    const Codebook& codebook() const { return codec_; }

    // exposed for the duration-diversity analysis: sample durations only
    std::vector<int> sample_durations(const std::vector<int>& phonemes,
                                      const std::vector<double>& prompt_mel, int prompt_frames,
                                      Rng& rng, bool deterministic);

private:
    struct StageModel {
        StageKind kind;
        DenoiserConfig net_cfg;
        std::unique_ptr<DilatedDenoiser> net;
        Var phoneme_table;  // text-conditioned stages only
        std::vector<double> stat_mean, stat_std;  // x0 normalizer
        nn::ParamRegistry merged;  // net + cond table + vae + stats buffers
    };

    void build_models(Rng& rng);
    StageModel& stage(StageKind k);
    void train_diffusion_stage(StageModel& sm, const CorpusOnDisk& corpus,
                               const SupervisionSplit& split, bool resume);
    void train_lm_stage(const CorpusOnDisk& corpus, const SupervisionSplit& split, bool resume);
    void compute_normalizers(const CorpusOnDisk& corpus, const SupervisionSplit& split);
    void build_codec(const CorpusOnDisk& corpus, bool resume);
    void log_provenance(const std::string& stage, const SupervisedView& item);
    void append_log(const std::string& line);

    // conditioning/data assembly
    ddpm::TrainSample make_sample(StageModel& sm, const SupervisedView& item, Rng& rng,
                                  int anneal_step);
    Var prompt_for(const std::vector<double>& norm_mel_crop, int frames, Rng& rng,
                   bool mean_only, Var* kl_out);
    std::vector<double> normalized_mel(const Utterance& u) const;
    std::vector<double> normalized_mel_frames(const std::vector<double>& mel) const;
    std::vector<std::vector<double>> codec_features(const std::vector<double>& mel) const;
    std::vector<double> normalized_semantic(const std::vector<int>& tokens) const;

    ExperimentConfig cfg_;
    PipelineSpec spec_;
    std::filesystem::path dir_;
    Codebook codec_;
    std::unique_ptr<PromptEncoder> vae_;
    std::unique_ptr<SemanticLM> lm_;
    std::vector<StageModel> stages_;
    std::vector<std::string> training_trace_;

    std::vector<double> mel_mean_, mel_std_;  // per band
    double dur_mean_ = 0.0, dur_std_ = 1.0;   // over ln(duration), labeled only
    double wave_std_ = 1.0;
    std::vector<double> sem_mean_, sem_std_;  // per codec dim
};

// Test hook: route an unlabeled item through a transcript access the way a
// text-consuming trainer would; must raise PolicyError.
void inject_policy_violation(const SupervisionSplit& split);

}  // namespace difftts
