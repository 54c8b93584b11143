#include "difftts/config.hpp"

#include <fstream>
#include <stdexcept>

namespace difftts {

using nlohmann::json;

std::string stage_name(StageKind k) {
    switch (k) {
        case StageKind::duration: return "duration";
        case StageKind::semantic: return "semantic";
        case StageKind::acoustic: return "acoustic";
        case StageKind::mel: return "mel";
        case StageKind::wave: return "wave";
    }
    throw std::logic_error("stage_name: bad kind");
}

StageKind stage_from_name(const std::string& name) {
    if (name == "duration") return StageKind::duration;
    if (name == "semantic") return StageKind::semantic;
    if (name == "acoustic") return StageKind::acoustic;
    if (name == "mel") return StageKind::mel;
    if (name == "wave") return StageKind::wave;
    throw std::invalid_argument("unknown stage '" + name + "'");
}

ExperimentConfig ExperimentConfig::preset_toy() {
    ExperimentConfig c;
    c.preset = "toy";
    c.seed = 1234;

    c.features.sample_rate = 8000;
    c.features.n_mels = 40;
    c.features.frame_size = 320;
    c.features.hop = 80;
    c.features.fft_size = 512;
    c.features.fmin = 50.0;
    c.features.fmax = 3800.0;

    c.corpus.n_utterances = 64;
    c.corpus.n_holdout = 16;
    c.corpus.phoneme_vocab = 10;
    c.corpus.min_phonemes = 3;
    c.corpus.max_phonemes = 6;
    // desk-scale override; the paper preset keeps the 15min/2.75h ratio
    c.corpus.labeled_fraction = 0.25;

    c.codec.K = 32;
    c.codec.dim = 16;

    c.prompt_encoder.n_mels = 40;
    c.prompt_encoder.latent_dim = 16;
    c.prompt_encoder.conv_channels = {4, 4, 8, 8, 8, 8};

    c.anneal.warmup_steps = 60;
    c.anneal.ramp_steps = 60;
    c.anneal.delta = 0.1;
    c.prompt_frames = 24;

    c.lm.net.layers = 2;
    c.lm.net.dim = 64;
    c.lm.net.heads = 2;
    c.lm.net.phoneme_vocab = c.corpus.phoneme_vocab;
    c.lm.net.semantic_vocab = c.codec.K;
    c.lm.net.max_len = 128;
    c.lm.train_steps = 500;
    c.lm.batch_size = 4;
    c.lm.lr = 1e-3;

    auto stage = [](int T, int channels, int layers, int blocks, int steps, int batch, double lr,
                    int crop) {
        StageTrainConfig s;
        s.schedule = {"linear", 1e-4, 0.05, T};
        s.channels = channels;
        s.residual_layers = layers;
        s.blocks = blocks;
        s.train_steps = steps;
        s.batch_size = batch;
        s.lr = lr;
        s.crop_frames = crop;
        return s;
    };
    c.stages[StageKind::duration] = stage(5, 16, 6, 2, 500, 8, 1e-3, 0);
    c.stages[StageKind::semantic] = stage(200, 16, 6, 2, 350, 4, 1e-3, 0);
    c.stages[StageKind::acoustic] = stage(200, 16, 6, 2, 350, 4, 1e-3, 0);
    c.stages[StageKind::mel] = stage(200, 16, 6, 2, 350, 4, 1e-3, 0);
    c.stages[StageKind::wave] = stage(50, 8, 4, 2, 300, 4, 1e-3, 16);
    c.stages[StageKind::wave].kernel = 3;
    return c;
}

ExperimentConfig ExperimentConfig::preset_paper() {
    ExperimentConfig c = preset_toy();
    c.preset = "paper";

    c.features.sample_rate = 24000;
    c.features.n_mels = 40;
    c.features.frame_size = 960;
    c.features.hop = 240;
    c.features.fft_size = 1024;
    c.features.fmax = 11000.0;

    c.corpus.labeled_fraction = 15.0 / 180.0;  // 15 min labeled vs 2.75 h unlabeled

    c.codec.K = 1024;
    c.codec.dim = 512;

    c.prompt_encoder.latent_dim = 64;
    c.prompt_encoder.conv_channels = {8, 8, 16, 16, 32, 32};

    c.lm.net.layers = 12;
    c.lm.net.dim = 256;
    c.lm.net.heads = 4;
    c.lm.net.semantic_vocab = c.codec.K;
    c.lm.net.max_len = 512;
    c.lm.lr = 2e-4;

    auto paper_stage = [](int T) {
        StageTrainConfig s;
        s.schedule = {"linear", 1e-4, 0.05, T};
        s.channels = 64;
        s.residual_layers = 30;
        s.blocks = 3;  // dilation cycle 1..512
        s.kernel = 3;
        s.train_steps = 100000;
        s.batch_size = 16;
        s.lr = 2e-4;
        return s;
    };
    c.stages[StageKind::duration] = paper_stage(5);
    c.stages[StageKind::semantic] = paper_stage(200);
    c.stages[StageKind::acoustic] = paper_stage(200);
    c.stages[StageKind::mel] = paper_stage(200);
    c.stages[StageKind::wave] = paper_stage(50);
    c.stages[StageKind::wave].crop_frames = 64;
    return c;
}

DenoiserConfig ExperimentConfig::denoiser_config(StageKind kind) const {
    const StageTrainConfig& s = stages.at(kind);
    DenoiserConfig d;
    d.residual_layers = s.residual_layers;
    d.blocks = s.blocks;
    d.channels = s.channels;
    d.kernel = s.kernel;
    int n = s.residual_layers / s.blocks;
    d.dilation_cycle.clear();
    for (int i = 0; i < n; ++i) d.dilation_cycle.push_back(1 << i);
    d.encoder_layers = s.encoder_layers;
    d.encoder_heads = s.encoder_heads;
    d.prompt_dim = prompt_encoder.latent_dim;
    d.cond_upsample = 1;
    switch (kind) {
        case StageKind::duration:
            d.in_dim = 1;
            d.cond_dim = s.phoneme_embed_dim;
            break;
        case StageKind::semantic:
            d.in_dim = codec.dim;
            d.cond_dim = s.phoneme_embed_dim;
            break;
        case StageKind::acoustic:
            d.in_dim = features.n_mels;
            d.cond_dim = codec.dim;
            break;
        case StageKind::mel:
            d.in_dim = features.n_mels;
            d.cond_dim = s.phoneme_embed_dim;
            break;
        case StageKind::wave:
            d.in_dim = 1;
            d.cond_dim = features.n_mels;
            d.prompt_dim = 0;  // conditioned on mel frames only
            d.cond_upsample = features.hop;
            break;
    }
    return d;
}

void ExperimentConfig::validate() const {
    features.validate();
    corpus.validate();
    prompt_encoder.validate();
    anneal.validate();
    lm.net.validate();
    if (prompt_frames < 2) throw std::invalid_argument("config: prompt_frames too small");
    for (const auto& [kind, s] : stages) {
        if (s.schedule.T < 1) throw std::invalid_argument("config: stage T must be >= 1");
        denoiser_config(kind).validate();
    }
    if (lm.net.phoneme_vocab != corpus.phoneme_vocab)
        throw std::invalid_argument("config: LM phoneme vocab != corpus inventory");
    if (lm.net.semantic_vocab != codec.K)
        throw std::invalid_argument("config: LM semantic vocab != codec K");
    if (prompt_encoder.n_mels != features.n_mels)
        throw std::invalid_argument("config: prompt encoder band count != features");
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

namespace {

json stage_to_json(const StageTrainConfig& s) {
    return json{{"T", s.schedule.T},
                {"beta_min", s.schedule.beta_min},
                {"beta_max", s.schedule.beta_max},
                {"channels", s.channels},
                {"residual_layers", s.residual_layers},
                {"blocks", s.blocks},
                {"kernel", s.kernel},
                {"encoder_layers", s.encoder_layers},
                {"encoder_heads", s.encoder_heads},
                {"phoneme_embed_dim", s.phoneme_embed_dim},
                {"train_steps", s.train_steps},
                {"batch_size", s.batch_size},
                {"lr", s.lr},
                {"crop_frames", s.crop_frames}};
}

void stage_apply_json(StageTrainConfig& s, const json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "T") s.schedule.T = it.value();
        else if (k == "beta_min") s.schedule.beta_min = it.value();
        else if (k == "beta_max") s.schedule.beta_max = it.value();
        else if (k == "channels") s.channels = it.value();
        else if (k == "residual_layers") s.residual_layers = it.value();
        else if (k == "blocks") s.blocks = it.value();
        else if (k == "kernel") s.kernel = it.value();
        else if (k == "encoder_layers") s.encoder_layers = it.value();
        else if (k == "encoder_heads") s.encoder_heads = it.value();
        else if (k == "phoneme_embed_dim") s.phoneme_embed_dim = it.value();
        else if (k == "train_steps") s.train_steps = it.value();
        else if (k == "batch_size") s.batch_size = it.value();
        else if (k == "lr") s.lr = it.value();
        else if (k == "crop_frames") s.crop_frames = it.value();
        else throw std::invalid_argument("config: unknown stage key '" + k + "'");
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

json ExperimentConfig::to_json() const {
    json j;
    j["preset"] = preset;
    j["seed"] = seed;
    j["features"] = {{"sample_rate", features.sample_rate}, {"n_mels", features.n_mels},
                     {"frame_size", features.frame_size},   {"hop", features.hop},
                     {"fft_size", features.fft_size},       {"fmin", features.fmin},
                     {"fmax", features.fmax},               {"log_floor", features.log_floor}};
    j["corpus"] = {{"n_utterances", corpus.n_utterances},
                   {"n_holdout", corpus.n_holdout},
                   {"phoneme_vocab", corpus.phoneme_vocab},
                   {"min_phonemes", corpus.min_phonemes},
                   {"max_phonemes", corpus.max_phonemes},
                   {"labeled_fraction", corpus.labeled_fraction},
                   {"tempo_slow", corpus.tempo_slow},
                   {"tempo_fast", corpus.tempo_fast},
                   {"f0_slow", corpus.f0_slow},
                   {"f0_fast", corpus.f0_fast},
                   {"harmonics", corpus.harmonics},
                   {"duration_jitter", corpus.duration_jitter}};
    j["codec"] = {{"K", codec.K}, {"dim", codec.dim}, {"kmeans_iterations", codec.kmeans_iterations}};
    j["prompt_encoder"] = {{"latent_dim", prompt_encoder.latent_dim},
                           {"conv_channels", prompt_encoder.conv_channels},
                           {"se_reduction", prompt_encoder.se_reduction}};
    j["anneal"] = {{"warmup_steps", anneal.warmup_steps},
                   {"ramp_steps", anneal.ramp_steps},
                   {"delta", anneal.delta}};
    j["prompt_frames"] = prompt_frames;
    j["lm"] = {{"layers", lm.net.layers},       {"dim", lm.net.dim},
               {"heads", lm.net.heads},         {"max_len", lm.net.max_len},
               {"train_steps", lm.train_steps}, {"batch_size", lm.batch_size},
               {"lr", lm.lr}};
    json st;
    for (const auto& [kind, s] : stages) st[stage_name(kind)] = stage_to_json(s);
    j["stages"] = st;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    std::string preset = j.value("preset", std::string("toy"));
    ExperimentConfig c;
    if (preset == "toy")
        c = preset_toy();
    else if (preset == "paper")
        c = preset_paper();
    else
        throw std::invalid_argument("config: unknown preset '" + preset + "'");

    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        if (key == "preset") continue;
        else if (key == "seed") c.seed = v.get<uint64_t>();
        else if (key == "prompt_frames") c.prompt_frames = v.get<int>();
        else if (key == "features") {
            maybe(v, "sample_rate", c.features.sample_rate);
            maybe(v, "n_mels", c.features.n_mels);
            maybe(v, "frame_size", c.features.frame_size);
            maybe(v, "hop", c.features.hop);
            maybe(v, "fft_size", c.features.fft_size);
            maybe(v, "fmin", c.features.fmin);
            maybe(v, "fmax", c.features.fmax);
            maybe(v, "log_floor", c.features.log_floor);
            c.prompt_encoder.n_mels = c.features.n_mels;
        } else if (key == "corpus") {
            maybe(v, "n_utterances", c.corpus.n_utterances);
            maybe(v, "n_holdout", c.corpus.n_holdout);
            maybe(v, "phoneme_vocab", c.corpus.phoneme_vocab);
            maybe(v, "min_phonemes", c.corpus.min_phonemes);
            maybe(v, "max_phonemes", c.corpus.max_phonemes);
            maybe(v, "labeled_fraction", c.corpus.labeled_fraction);
            maybe(v, "tempo_slow", c.corpus.tempo_slow);
            maybe(v, "tempo_fast", c.corpus.tempo_fast);
            maybe(v, "f0_slow", c.corpus.f0_slow);
            maybe(v, "f0_fast", c.corpus.f0_fast);
            maybe(v, "harmonics", c.corpus.harmonics);
            maybe(v, "duration_jitter", c.corpus.duration_jitter);
            c.lm.net.phoneme_vocab = c.corpus.phoneme_vocab;
        } else if (key == "codec") {
            maybe(v, "K", c.codec.K);
            maybe(v, "dim", c.codec.dim);
            maybe(v, "kmeans_iterations", c.codec.kmeans_iterations);
            c.lm.net.semantic_vocab = c.codec.K;
        } else if (key == "prompt_encoder") {
            maybe(v, "latent_dim", c.prompt_encoder.latent_dim);
            maybe(v, "conv_channels", c.prompt_encoder.conv_channels);
            maybe(v, "se_reduction", c.prompt_encoder.se_reduction);
        } else if (key == "anneal") {
            maybe(v, "warmup_steps", c.anneal.warmup_steps);
            maybe(v, "ramp_steps", c.anneal.ramp_steps);
            maybe(v, "delta", c.anneal.delta);
        } else if (key == "lm") {
            maybe(v, "layers", c.lm.net.layers);
            maybe(v, "dim", c.lm.net.dim);
            maybe(v, "heads", c.lm.net.heads);
            maybe(v, "max_len", c.lm.net.max_len);
            maybe(v, "train_steps", c.lm.train_steps);
            maybe(v, "batch_size", c.lm.batch_size);
            maybe(v, "lr", c.lm.lr);
        } else if (key == "stages") {
            for (auto sit = v.begin(); sit != v.end(); ++sit)
                stage_apply_json(c.stages.at(stage_from_name(sit.key())), sit.value());
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    json j = json::parse(is);
    return from_json(j);
}

}  // namespace difftts
