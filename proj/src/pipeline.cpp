#include "difftts/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "difftts/checkpoint.hpp"
#include "difftts/optimizer.hpp"

namespace difftts {

using nlohmann::json;

std::string pipeline_name(PipelineKind k) {
    switch (k) {
        case PipelineKind::diff_lm: return "diff-lm";
        case PipelineKind::tetra: return "tetra";
        case PipelineKind::tri: return "tri";
    }
    throw std::logic_error("pipeline_name: bad kind");
}

PipelineKind pipeline_from_name(const std::string& name) {
    if (name == "diff-lm" || name == "diff_lm") return PipelineKind::diff_lm;
    if (name == "tetra") return PipelineKind::tetra;
    if (name == "tri") return PipelineKind::tri;
    throw std::invalid_argument("unknown pipeline '" + name + "' (expected diff-lm, tetra or tri)");
}

PipelineSpec PipelineSpec::make(PipelineKind kind) {
    PipelineSpec s;
    s.kind = kind;
    switch (kind) {
        case PipelineKind::diff_lm:
            s.uses_lm = true;
            s.diffusion_stages = {StageKind::acoustic, StageKind::wave};
            break;
        case PipelineKind::tetra:
            s.diffusion_stages = {StageKind::duration, StageKind::semantic, StageKind::acoustic,
                                  StageKind::wave};
            break;
        case PipelineKind::tri:
            s.diffusion_stages = {StageKind::duration, StageKind::mel, StageKind::wave};
            break;
    }
    return s;
}

bool PipelineSpec::stage_needs_text(StageKind k) {
    switch (k) {
        case StageKind::duration:
        case StageKind::semantic:
        case StageKind::mel:
            return true;  // transcripts (and durations) feed the conditioning
        case StageKind::acoustic:
        case StageKind::wave:
            return false;
    }
    return false;
}

void inject_policy_violation(const SupervisionSplit& split) {
    if (split.unlabeled.empty())
        throw std::invalid_argument("inject_policy_violation: no unlabeled items");
    // exactly the access a text-consuming trainer performs
    (void)split.unlabeled.front().phonemes();
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg, PipelineKind kind, std::filesystem::path dir)
    : cfg_(std::move(cfg)), spec_(PipelineSpec::make(kind)), dir_(std::move(dir)) {
    cfg_.validate();
    std::filesystem::create_directories(dir_ / "checkpoints");
    Rng init_rng(derive_seed(cfg_.seed, "init"));
    build_models(init_rng);
}

Experiment::StageModel& Experiment::stage(StageKind k) {
    for (auto& s : stages_)
        if (s.kind == k) return s;
    throw std::logic_error("Experiment: stage not part of this pipeline: " + stage_name(k));
}

void Experiment::build_models(Rng&) {
    Rng vae_rng(derive_seed(cfg_.seed, "vae"));
    vae_ = std::make_unique<PromptEncoder>(cfg_.prompt_encoder, vae_rng);
    if (spec_.uses_lm) {
        Rng lm_rng(derive_seed(cfg_.seed, "lm"));
        lm_ = std::make_unique<SemanticLM>(cfg_.lm.net, lm_rng);
    }
    for (StageKind kind : spec_.diffusion_stages) {
        StageModel sm;
        sm.kind = kind;
        sm.net_cfg = cfg_.denoiser_config(kind);
        Rng srng(derive_seed(cfg_.seed, "stage." + stage_name(kind)));
        sm.net = build_denoiser(sm.net_cfg, srng);
        if (PipelineSpec::stage_needs_text(kind)) {
            sm.phoneme_table = randn_leaf(
                {cfg_.corpus.phoneme_vocab, cfg_.stages.at(kind).phoneme_embed_dim}, srng, 0.1);
        }
        // merged registry: net + conditioning table + shared prompt encoder
        for (auto& [n, p] : sm.net->registry().params)
            sm.merged.params.emplace_back("net." + n, p);
        if (sm.phoneme_table) sm.merged.params.emplace_back("cond_embed", sm.phoneme_table);
        if (sm.net_cfg.prompt_dim > 0)
            for (auto& [n, p] : vae_->registry().params)
                sm.merged.params.emplace_back("vae." + n, p);
        stages_.push_back(std::move(sm));
    }
}

// ---------------------------------------------------------------------------
// normalizers and codec
// ---------------------------------------------------------------------------

std::vector<double> Experiment::normalized_mel_frames(const std::vector<double>& mel) const {
    int bands = cfg_.features.n_mels;
    std::vector<double> out(mel.size());
    for (size_t i = 0; i < mel.size(); ++i) {
        int b = static_cast<int>(i % static_cast<size_t>(bands));
        out[i] = (mel[i] - mel_mean_[static_cast<size_t>(b)]) / mel_std_[static_cast<size_t>(b)];
    }
    return out;
}

std::vector<double> Experiment::normalized_mel(const Utterance& u) const {
    return normalized_mel_frames(u.mel);
}

std::vector<std::vector<double>> Experiment::codec_features(const std::vector<double>& mel) const {
    int bands = cfg_.features.n_mels;
    size_t frames = mel.size() / static_cast<size_t>(bands);
    std::vector<std::vector<double>> feats(frames);
    for (size_t f = 0; f < frames; ++f) {
        std::vector<double> frame(mel.begin() + static_cast<long>(f * bands),
                                  mel.begin() + static_cast<long>((f + 1) * bands));
        feats[f] = band_pool(frame, cfg_.codec.dim);
    }
    return feats;
}

std::vector<double> Experiment::normalized_semantic(const std::vector<int>& tokens) const {
    // (dim, F) channel-major tensor of normalized codebook embeddings
    int dim = codec_.dim;
    int F = static_cast<int>(tokens.size());
    std::vector<double> out(static_cast<size_t>(dim) * F);
    for (int f = 0; f < F; ++f) {
        const double* e = codec_.entry(tokens[static_cast<size_t>(f)]);
        for (int d = 0; d < dim; ++d)
            out[static_cast<size_t>(d) * F + f] =
                (e[d] - sem_mean_[static_cast<size_t>(d)]) / sem_std_[static_cast<size_t>(d)];
    }
    return out;
}

void Experiment::compute_normalizers(const CorpusOnDisk& corpus, const SupervisionSplit& split) {
    int bands = cfg_.features.n_mels;
    mel_mean_.assign(static_cast<size_t>(bands), 0.0);
    mel_std_.assign(static_cast<size_t>(bands), 0.0);
    size_t n_frames = 0;
    double wave_sq = 0.0;
    size_t n_samp = 0;
    for (const auto& u : corpus.items) {
        size_t frames = u.mel.size() / static_cast<size_t>(bands);
        for (size_t f = 0; f < frames; ++f)
            for (int b = 0; b < bands; ++b)
                mel_mean_[static_cast<size_t>(b)] += u.mel[f * bands + b];
        n_frames += frames;
        for (double s : u.waveform) wave_sq += s * s;
        n_samp += u.waveform.size();
    }
    for (auto& m : mel_mean_) m /= static_cast<double>(n_frames);
    for (const auto& u : corpus.items) {
        size_t frames = u.mel.size() / static_cast<size_t>(bands);
        for (size_t f = 0; f < frames; ++f)
            for (int b = 0; b < bands; ++b) {
                double d = u.mel[f * bands + b] - mel_mean_[static_cast<size_t>(b)];
                mel_std_[static_cast<size_t>(b)] += d * d;
            }
    }
    for (auto& s : mel_std_) s = std::max(1e-3, std::sqrt(s / static_cast<double>(n_frames)));
    wave_std_ = std::max(1e-6, std::sqrt(wave_sq / static_cast<double>(n_samp)));

    // duration stats come from transcripts: labeled partition only
    double dsum = 0.0, dsq = 0.0;
    size_t dn = 0;
    for (const auto& v : split.labeled)
        for (int d : v.durations()) {
            double ld = std::log(static_cast<double>(d));
            dsum += ld;
            dsq += ld * ld;
            ++dn;
        }
    dur_mean_ = dsum / static_cast<double>(dn);
    dur_std_ = std::max(0.05, std::sqrt(dsq / static_cast<double>(dn) - dur_mean_ * dur_mean_));

    // semantic embedding stats over quantized training frames
    sem_mean_.assign(static_cast<size_t>(codec_.dim), 0.0);
    sem_std_.assign(static_cast<size_t>(codec_.dim), 0.0);
    size_t sn = 0;
    for (const auto& u : corpus.items) {
        auto feats = codec_features(u.mel);
        auto ids = quantize(codec_, feats);
        for (int id : ids) {
            const double* e = codec_.entry(id);
            for (int d = 0; d < codec_.dim; ++d) sem_mean_[static_cast<size_t>(d)] += e[d];
            ++sn;
        }
    }
    for (auto& m : sem_mean_) m /= static_cast<double>(sn);
    for (const auto& u : corpus.items) {
        auto feats = codec_features(u.mel);
        auto ids = quantize(codec_, feats);
        for (int id : ids) {
            const double* e = codec_.entry(id);
            for (int d = 0; d < codec_.dim; ++d) {
                double diff = e[d] - sem_mean_[static_cast<size_t>(d)];
                sem_std_[static_cast<size_t>(d)] += diff * diff;
            }
        }
    }
    for (auto& s : sem_std_) s = std::max(1e-3, std::sqrt(s / static_cast<double>(sn)));
}

void Experiment::build_codec(const CorpusOnDisk& corpus, bool resume) {
    auto path = dir_ / "checkpoints" / "codec.ckpt";
    if (resume && std::filesystem::exists(path)) {
        Checkpoint ck = load_checkpoint(path);
        codec_.K = ck.config.at("K").get<int>();
        codec_.dim = ck.config.at("dim").get<int>();
        codec_.entries = ck.params.at(0).values;
        return;
    }
    std::vector<std::vector<double>> feats;
    for (const auto& u : corpus.items) {
        auto f = codec_features(u.mel);
        feats.insert(feats.end(), f.begin(), f.end());
    }
    Rng rng(derive_seed(cfg_.seed, "codec"));
    codec_ = build_codebook(feats, cfg_.codec.K, cfg_.codec.dim, rng, cfg_.codec.kmeans_iterations);
    Checkpoint ck;
    ck.module_kind = "codec";
    ck.config = {{"K", codec_.K}, {"dim", codec_.dim}};
    ck.params.push_back({"entries", {codec_.K, codec_.dim}, codec_.entries});
    save_checkpoint(ck, path);
    append_log("codec built: K=" + std::to_string(codec_.K) +
               " dim=" + std::to_string(codec_.dim));
}

// ---------------------------------------------------------------------------
// logging
// ---------------------------------------------------------------------------

void Experiment::append_log(const std::string& line) {
    std::ofstream os(dir_ / "training_log.txt", std::ios::app);
    os << line << "\n";
}

void Experiment::log_provenance(const std::string& stage, const SupervisedView& item) {
    std::ofstream os(dir_ / "provenance.log", std::ios::app);
    os << "stage=" << stage << " item=" << item.id() << " labeled=" << (item.labeled() ? 1 : 0)
       << "\n";
}

// ---------------------------------------------------------------------------
// training-sample assembly
// ---------------------------------------------------------------------------

Var Experiment::prompt_for(const std::vector<double>& norm_mel, int frames, Rng& rng,
                           bool mean_only, Var* kl_out) {
    // training-time prompt: random crop of the same utterance's mel
    int crop = std::min(cfg_.prompt_frames, frames);
    int start = frames > crop ? rng.uniform_int(0, frames - crop) : 0;
    int bands = cfg_.features.n_mels;
    std::vector<double> mel_crop(norm_mel.begin() + static_cast<long>(start) * bands,
                                 norm_mel.begin() + static_cast<long>(start + crop) * bands);
    GaussianPosterior post = vae_->encode(mel_crop, crop);
    if (kl_out) *kl_out = kl_margin_loss(post, cfg_.anneal.delta);
    return sample_prompt(post, rng, mean_only);
}

ddpm::TrainSample Experiment::make_sample(StageModel& sm, const SupervisedView& item, Rng& rng,
                                          int anneal_step) {
    ddpm::TrainSample s;
    const int bands = cfg_.features.n_mels;
    const Utterance& u = item.raw();

    // prompt + annealed margin-KL term for prompt-consuming stages
    if (sm.net_cfg.prompt_dim > 0) {
        Var kl;
        auto norm_mel = normalized_mel(u);
        s.prompt = prompt_for(norm_mel, u.frames(), rng, /*mean_only=*/false, &kl);
        double w = kl_weight(anneal_step, cfg_.anneal);
        if (w > 0.0) s.aux_loss = scale(kl, w);
    }

    switch (sm.kind) {
        case StageKind::duration: {
            const auto& durs = item.durations();  // policy-checked access
            const auto& ph = item.phonemes();
            int L = static_cast<int>(durs.size());
            s.x0_shape = {1, L};
            s.x0.resize(static_cast<size_t>(L));
            for (int i = 0; i < L; ++i)
                s.x0[static_cast<size_t>(i)] =
                    (std::log(static_cast<double>(durs[static_cast<size_t>(i)])) - dur_mean_) /
                    dur_std_;
            s.context = transpose(embedding(sm.phoneme_table, ph));
            break;
        }
        case StageKind::semantic: {
            const auto& ph = item.phonemes();
            const auto& durs = item.durations();  // ground-truth expansion at training
            auto ids = quantize(codec_, codec_features(u.mel));
            int F = static_cast<int>(ids.size());
            s.x0_shape = {codec_.dim, F};
            s.x0 = normalized_semantic(ids);
            s.context = transpose(length_regulate(embedding(sm.phoneme_table, ph), durs));
            break;
        }
        case StageKind::acoustic: {
            auto ids = quantize(codec_, codec_features(u.mel));
            int F = static_cast<int>(ids.size());
            auto norm_mel = normalized_mel(u);
            s.x0_shape = {bands, F};
            s.x0.resize(static_cast<size_t>(bands) * F);
            for (int f = 0; f < F; ++f)
                for (int b = 0; b < bands; ++b)
                    s.x0[static_cast<size_t>(b) * F + f] =
                        norm_mel[static_cast<size_t>(f) * bands + b];
            s.context = constant({codec_.dim, F}, normalized_semantic(ids));
            break;
        }
        case StageKind::mel: {
            const auto& ph = item.phonemes();
            const auto& durs = item.durations();
            auto norm_mel = normalized_mel(u);
            int F = u.frames();
            s.x0_shape = {bands, F};
            s.x0.resize(static_cast<size_t>(bands) * F);
            for (int f = 0; f < F; ++f)
                for (int b = 0; b < bands; ++b)
                    s.x0[static_cast<size_t>(b) * F + f] =
                        norm_mel[static_cast<size_t>(f) * bands + b];
            s.context = transpose(length_regulate(embedding(sm.phoneme_table, ph), durs));
            break;
        }
        case StageKind::wave: {
            int crop = cfg_.stages.at(StageKind::wave).crop_frames;
            int F = u.frames();
            int use = crop > 0 ? std::min(crop, F) : F;
            int start = F > use ? rng.uniform_int(0, F - use) : 0;
            int hop = cfg_.features.hop;
            s.x0_shape = {1, use * hop};
            s.x0.resize(static_cast<size_t>(use) * hop);
            for (int i = 0; i < use * hop; ++i)
                s.x0[static_cast<size_t>(i)] =
                    u.waveform[static_cast<size_t>(start) * hop + i] / wave_std_;
            auto norm_mel = normalized_mel(u);
            std::vector<double> ctx(static_cast<size_t>(bands) * use);
            for (int f = 0; f < use; ++f)
                for (int b = 0; b < bands; ++b)
                    ctx[static_cast<size_t>(b) * use + f] =
                        norm_mel[static_cast<size_t>(start + f) * bands + b];
            s.context = constant({bands, use}, ctx);
            break;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// stage training
// ---------------------------------------------------------------------------

void Experiment::train_diffusion_stage(StageModel& sm, const CorpusOnDisk& corpus,
                                       const SupervisionSplit& split, bool resume) {
    const std::string name = stage_name(sm.kind);
    const StageTrainConfig& scfg = cfg_.stages.at(sm.kind);
    NoiseSchedule sched = scfg.schedule.build();
    auto path = dir_ / "checkpoints" / (name + ".ckpt");

    // x0 normalizer + conditioning normalizer buffers ride along in the
    // checkpoint so synthesis is self-contained
    auto set_stats = [&](std::vector<double> mean, std::vector<double> std_) {
        sm.stat_mean = std::move(mean);
        sm.stat_std = std::move(std_);
    };
    switch (sm.kind) {
        case StageKind::duration: set_stats({dur_mean_}, {dur_std_}); break;
        case StageKind::semantic: set_stats(sem_mean_, sem_std_); break;
        case StageKind::acoustic:
        case StageKind::mel: set_stats(mel_mean_, mel_std_); break;
        case StageKind::wave: set_stats({0.0}, {wave_std_}); break;
    }
    sm.merged.buffers.clear();
    sm.merged.buffers.emplace_back(
        "stats.mean", constant({static_cast<int>(sm.stat_mean.size())}, sm.stat_mean));
    sm.merged.buffers.emplace_back(
        "stats.std", constant({static_cast<int>(sm.stat_std.size())}, sm.stat_std));
    if (sm.kind == StageKind::wave || sm.kind == StageKind::acoustic) {
        // conditioning normalizer (mel stats for wave, codec stats for acoustic)
        const auto& cm = sm.kind == StageKind::wave ? mel_mean_ : sem_mean_;
        const auto& cs = sm.kind == StageKind::wave ? mel_std_ : sem_std_;
        sm.merged.buffers.emplace_back("cond_stats.mean",
                                       constant({static_cast<int>(cm.size())}, cm));
        sm.merged.buffers.emplace_back("cond_stats.std",
                                       constant({static_cast<int>(cs.size())}, cs));
    }
    // mel stats are needed everywhere at synthesis (prompt normalization)
    sm.merged.buffers.emplace_back("mel_stats.mean",
                                   constant({static_cast<int>(mel_mean_.size())}, mel_mean_));
    sm.merged.buffers.emplace_back("mel_stats.std",
                                   constant({static_cast<int>(mel_std_.size())}, mel_std_));

    Adam opt(scfg.lr);
    Rng rng(derive_seed(cfg_.seed, "train." + name));
    int start_step = 0;
    if (resume && std::filesystem::exists(path)) {
        Checkpoint ck = load_checkpoint(path);
        ck.restore(sm.merged);
        opt.import_state(ck.opt);
        rng.load_state(ck.rng_state);
        start_step = static_cast<int>(ck.step);
        sm.stat_mean = ck.config.at("stat_mean").get<std::vector<double>>();
        sm.stat_std = ck.config.at("stat_std").get<std::vector<double>>();
        if (start_step >= scfg.train_steps) {
            append_log("stage " + name + ": already complete at step " +
                       std::to_string(start_step));
            training_trace_.push_back(name);
            return;
        }
    }

    const bool text_stage = PipelineSpec::stage_needs_text(sm.kind);
    const std::vector<SupervisedView>* pool_labeled = &split.labeled;
    const std::vector<SupervisedView>* pool_unlabeled = &split.unlabeled;

    auto save = [&](int step) {
        Checkpoint ck;
        ck.module_kind = name;
        ck.config = {{"denoiser", json{{"residual_layers", sm.net_cfg.residual_layers},
                                       {"blocks", sm.net_cfg.blocks},
                                       {"channels", sm.net_cfg.channels},
                                       {"kernel", sm.net_cfg.kernel},
                                       {"in_dim", sm.net_cfg.in_dim},
                                       {"cond_dim", sm.net_cfg.cond_dim},
                                       {"prompt_dim", sm.net_cfg.prompt_dim},
                                       {"cond_upsample", sm.net_cfg.cond_upsample}}},
                     {"stat_mean", sm.stat_mean},
                     {"stat_std", sm.stat_std}};
        ck.has_schedule = true;
        ck.schedule = scfg.schedule;
        ck.rng_state = rng.save_state();
        ck.step = step;
        ck.opt = opt.export_state();
        ck.capture(sm.merged);
        save_checkpoint(ck, path);
    };

    for (int step = start_step; step < scfg.train_steps; ++step) {
        std::vector<ddpm::TrainSample> batch;
        for (int b = 0; b < scfg.batch_size; ++b) {
            const SupervisedView* item;
            if (text_stage) {
                item = &(*pool_labeled)[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int>(pool_labeled->size()) - 1))];
            } else {
                int total = static_cast<int>(pool_labeled->size() + pool_unlabeled->size());
                int idx = rng.uniform_int(0, total - 1);
                item = idx < static_cast<int>(pool_labeled->size())
                           ? &(*pool_labeled)[static_cast<size_t>(idx)]
                           : &(*pool_unlabeled)[static_cast<size_t>(
                                 idx - static_cast<int>(pool_labeled->size()))];
            }
            log_provenance(name, *item);
            batch.push_back(make_sample(sm, *item, rng, step));
        }
        double loss;
        try {
            loss = ddpm::training_step(*sm.net, sched, batch, opt, sm.merged, rng);
        } catch (const DivergenceError& e) {
            throw DivergenceError("stage " + name + " diverged at step " + std::to_string(step) +
                                      ": " + e.what(),
                                  step);
        }
        if (step % 25 == 0 || step + 1 == scfg.train_steps)
            append_log("stage=" + name + " step=" + std::to_string(step) +
                       " loss=" + std::to_string(loss));
        if ((step + 1) % 100 == 0) save(step + 1);
    }
    save(scfg.train_steps);
    training_trace_.push_back(name);
    (void)corpus;
}

void Experiment::train_lm_stage(const CorpusOnDisk& corpus, const SupervisionSplit& split,
                                bool resume) {
    auto path = dir_ / "checkpoints" / "semantic_lm.ckpt";
    Adam opt(cfg_.lm.lr);
    Rng rng(derive_seed(cfg_.seed, "train.semantic_lm"));
    int start_step = 0;
    if (resume && std::filesystem::exists(path)) {
        Checkpoint ck = load_checkpoint(path);
        ck.restore(lm_->registry());
        opt.import_state(ck.opt);
        rng.load_state(ck.rng_state);
        start_step = static_cast<int>(ck.step);
        if (start_step >= cfg_.lm.train_steps) {
            training_trace_.push_back("semantic_lm");
            return;
        }
    }

    // token targets come from the codec over the item's own audio
    auto tokens_for = [&](const SupervisedView& v) {
        return quantize(codec_, codec_features(v.mel()));
    };

    auto save = [&](int step) {
        Checkpoint ck;
        ck.module_kind = "semantic_lm";
        ck.config = {{"layers", cfg_.lm.net.layers},
                     {"dim", cfg_.lm.net.dim},
                     {"heads", cfg_.lm.net.heads},
                     {"phoneme_vocab", cfg_.lm.net.phoneme_vocab},
                     {"semantic_vocab", cfg_.lm.net.semantic_vocab},
                     {"max_len", cfg_.lm.net.max_len}};
        ck.rng_state = rng.save_state();
        ck.step = step;
        ck.opt = opt.export_state();
        ck.capture(lm_->registry());
        save_checkpoint(ck, path);
    };

    for (int step = start_step; step < cfg_.lm.train_steps; ++step) {
        lm_->registry().zero_grad();
        Var total;
        for (int b = 0; b < cfg_.lm.batch_size; ++b) {
            const auto& item = split.labeled[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(split.labeled.size()) - 1))];
            log_provenance("semantic_lm", item);
            Var l = lm_->loss(item.phonemes(), tokens_for(item));
            total = total ? add(total, l) : l;
        }
        total = scale(total, 1.0 / cfg_.lm.batch_size);
        double loss = total->val[0];
        if (!std::isfinite(loss))
            throw DivergenceError("stage semantic_lm diverged at step " + std::to_string(step),
                                  step);
        backward(total);
        opt.step(lm_->registry());
        if (step % 25 == 0 || step + 1 == cfg_.lm.train_steps)
            append_log("stage=semantic_lm step=" + std::to_string(step) +
                       " loss=" + std::to_string(loss));
        if ((step + 1) % 100 == 0) save(step + 1);
    }
    save(cfg_.lm.train_steps);
    training_trace_.push_back("semantic_lm");
    (void)corpus;
}

void Experiment::train(const CorpusOnDisk& corpus, bool resume) {
    if (!resume) {
        std::filesystem::remove(dir_ / "provenance.log");
        std::filesystem::remove(dir_ / "training_log.txt");
        std::filesystem::remove_all(dir_ / "checkpoints");
        std::filesystem::create_directories(dir_ / "checkpoints");
    }
    // resolved config snapshot is the canonical record of this run
    {
        json snap;
        snap["pipeline"] = pipeline_name(spec_.kind);
        snap["config"] = cfg_.to_json();
        std::ofstream os(dir_ / "config.json");
        os << snap.dump(2) << "\n";
    }
    Rng split_rng(derive_seed(cfg_.seed, "split"));
    SupervisionSplit split = split_supervision(corpus.items, cfg_.corpus.labeled_fraction,
                                               split_rng);
    build_codec(corpus, resume);
    compute_normalizers(corpus, split);
    if (spec_.uses_lm) train_lm_stage(corpus, split, resume);
    for (StageKind kind : spec_.diffusion_stages)
        train_diffusion_stage(stage(kind), corpus, split, resume);
    append_log("training complete: " + pipeline_name(spec_.kind));
}

// ---------------------------------------------------------------------------
// loading a trained experiment
// ---------------------------------------------------------------------------

Experiment Experiment::open(const std::filesystem::path& dir) {
    std::ifstream is(dir / "config.json");
    if (!is) throw std::runtime_error("Experiment::open: no config.json in " + dir.string());
    json snap = json::parse(is);
    ExperimentConfig cfg = ExperimentConfig::from_json(snap.at("config"));
    PipelineKind kind = pipeline_from_name(snap.at("pipeline").get<std::string>());
    Experiment exp(cfg, kind, dir);

    {
        auto path = dir / "checkpoints" / "codec.ckpt";
        if (!std::filesystem::exists(path))
            throw std::runtime_error("missing checkpoint for stage codec: " + path.string());
        Checkpoint ck = load_checkpoint(path);
        exp.codec_.K = ck.config.at("K").get<int>();
        exp.codec_.dim = ck.config.at("dim").get<int>();
        exp.codec_.entries = ck.params.at(0).values;
    }
    if (exp.spec_.uses_lm) {
        auto path = dir / "checkpoints" / "semantic_lm.ckpt";
        if (!std::filesystem::exists(path))
            throw std::runtime_error("missing checkpoint for stage semantic_lm: " + path.string());
        Checkpoint ck = load_checkpoint(path);
        ck.restore(exp.lm_->registry());
    }
    for (auto& sm : exp.stages_) {
        auto path = dir / "checkpoints" / (stage_name(sm.kind) + ".ckpt");
        if (!std::filesystem::exists(path))
            throw std::runtime_error("missing checkpoint for stage " + stage_name(sm.kind) + ": " +
                                     path.string());
        Checkpoint ck = load_checkpoint(path);
        // buffers were captured at save; re-declare before restore
        sm.merged.buffers.clear();
        for (const auto& t : ck.buffers)
            sm.merged.buffers.emplace_back(t.name, constant(t.shape, t.values));
        ck.restore(sm.merged);
        sm.stat_mean = ck.config.at("stat_mean").get<std::vector<double>>();
        sm.stat_std = ck.config.at("stat_std").get<std::vector<double>>();

        switch (sm.kind) {
            case StageKind::duration:
                exp.dur_mean_ = sm.stat_mean[0];
                exp.dur_std_ = sm.stat_std[0];
                break;
            case StageKind::semantic:
                exp.sem_mean_ = sm.stat_mean;
                exp.sem_std_ = sm.stat_std;
                break;
            case StageKind::acoustic:
            case StageKind::mel:
                exp.mel_mean_ = sm.stat_mean;
                exp.mel_std_ = sm.stat_std;
                break;
            case StageKind::wave:
                exp.wave_std_ = sm.stat_std[0];
                break;
        }
        if (sm.kind == StageKind::acoustic) {
            // codec-embedding normalizer rides as cond stats
            for (const auto& t : ck.buffers) {
                if (t.name == "cond_stats.mean") exp.sem_mean_ = t.values;
                if (t.name == "cond_stats.std") exp.sem_std_ = t.values;
            }
        }
    }
    return exp;
}

// ---------------------------------------------------------------------------
// synthesis
// ---------------------------------------------------------------------------

std::vector<int> Experiment::sample_durations(const std::vector<int>& phonemes,
                                              const std::vector<double>& prompt_mel,
                                              int prompt_frames, Rng& rng, bool deterministic) {
    StageModel& sm = stage(StageKind::duration);
    NoiseSchedule sched = cfg_.stages.at(StageKind::duration).schedule.build();
    GaussianPosterior post = vae_->encode(normalized_mel_frames(prompt_mel), prompt_frames);
    Var p = sample_prompt(post, rng, deterministic);
    Var ctx = transpose(embedding(sm.phoneme_table, phonemes));
    int L = static_cast<int>(phonemes.size());
    auto z = ddpm::sample(*sm.net, sched, p, ctx, {1, L}, rng, deterministic);
    std::vector<int> durs(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) {
        double d = std::exp(z[static_cast<size_t>(i)] * dur_std_ + dur_mean_);
        durs[static_cast<size_t>(i)] = std::max(1, static_cast<int>(std::lround(d)));
    }
    return durs;
}

SynthesisResult Experiment::synthesize(const std::vector<int>& phonemes,
                                       const std::vector<double>& prompt_mel, int prompt_frames,
                                       uint64_t seed, bool deterministic,
                                       const std::vector<int>* forced_durations) {
    if (phonemes.empty()) throw std::invalid_argument("synthesize: empty phoneme input");
    for (int p : phonemes)
        if (p < 0 || p >= cfg_.corpus.phoneme_vocab)
            throw std::invalid_argument("synthesize: phoneme id out of range");
    if (prompt_frames < 1) throw std::invalid_argument("synthesize: empty prompt");

    Rng rng(seed);
    SynthesisResult out;
    const int bands = cfg_.features.n_mels;
    const int hop = cfg_.features.hop;

    GaussianPosterior post = vae_->encode(normalized_mel_frames(prompt_mel), prompt_frames);
    Var p = sample_prompt(post, rng, /*mean_only=*/deterministic);

    // frame-rate conditioning for the acoustic/mel stage + token record
    std::vector<double> norm_mel_pred;  // normalized (bands-major) mel prediction
    int F = 0;

    if (spec_.uses_lm) {
        out.stage_trace.push_back("semantic_lm");
        int budget = cfg_.lm.net.max_len - static_cast<int>(phonemes.size()) - 3;
        GenerateResult gen =
            lm_->generate(phonemes, rng, budget, deterministic ? 0.0 : 1.0, /*top_k=*/8);
        if (gen.tokens.empty())
            throw std::runtime_error("synthesize: semantic LM produced an empty token sequence");
        out.semantic_tokens = gen.tokens;
        F = static_cast<int>(gen.tokens.size());
    } else {
        // duration stage first
        out.stage_trace.push_back("duration");
        if (forced_durations) {
            out.durations = *forced_durations;
            if (out.durations.size() != phonemes.size())
                throw std::invalid_argument("synthesize: forced durations length mismatch");
        } else {
            out.durations = sample_durations(phonemes, prompt_mel, prompt_frames, rng,
                                             deterministic);
        }
        for (int d : out.durations) F += d;
    }

    if (spec_.kind == PipelineKind::tetra) {
        out.stage_trace.push_back("semantic");
        StageModel& sm = stage(StageKind::semantic);
        NoiseSchedule sched = cfg_.stages.at(StageKind::semantic).schedule.build();
        Var ctx = transpose(length_regulate(embedding(sm.phoneme_table, phonemes), out.durations));
        auto z = ddpm::sample(*sm.net, sched, p, ctx, {codec_.dim, F}, rng, deterministic);
        // denormalize, then snap each frame to its nearest codebook entry
        std::vector<std::vector<double>> frames(static_cast<size_t>(F));
        for (int f = 0; f < F; ++f) {
            std::vector<double> v(static_cast<size_t>(codec_.dim));
            for (int d = 0; d < codec_.dim; ++d)
                v[static_cast<size_t>(d)] = z[static_cast<size_t>(d) * F + f] *
                                                sem_std_[static_cast<size_t>(d)] +
                                            sem_mean_[static_cast<size_t>(d)];
            frames[static_cast<size_t>(f)] = std::move(v);
        }
        out.semantic_tokens = quantize(codec_, frames);
    }

    if (spec_.kind == PipelineKind::diff_lm || spec_.kind == PipelineKind::tetra) {
        out.stage_trace.push_back("acoustic");
        StageModel& sm = stage(StageKind::acoustic);
        NoiseSchedule sched = cfg_.stages.at(StageKind::acoustic).schedule.build();
        Var ctx = constant({codec_.dim, F}, normalized_semantic(out.semantic_tokens));
        norm_mel_pred = ddpm::sample(*sm.net, sched, p, ctx, {bands, F}, rng, deterministic);
    } else {
        out.stage_trace.push_back("mel");
        StageModel& sm = stage(StageKind::mel);
        NoiseSchedule sched = cfg_.stages.at(StageKind::mel).schedule.build();
        Var ctx = transpose(length_regulate(embedding(sm.phoneme_table, phonemes), out.durations));
        norm_mel_pred = ddpm::sample(*sm.net, sched, p, ctx, {bands, F}, rng, deterministic);
    }

    // denormalized frame-major mel intermediate
    out.mel_frames = F;
    out.mel.resize(static_cast<size_t>(F) * bands);
    for (int f = 0; f < F; ++f)
        for (int b = 0; b < bands; ++b)
            out.mel[static_cast<size_t>(f) * bands + b] =
                norm_mel_pred[static_cast<size_t>(b) * F + f] * mel_std_[static_cast<size_t>(b)] +
                mel_mean_[static_cast<size_t>(b)];

    out.stage_trace.push_back("wave");
    StageModel& sm = stage(StageKind::wave);
    NoiseSchedule sched = cfg_.stages.at(StageKind::wave).schedule.build();
    Var ctx = constant({bands, F}, norm_mel_pred);
    auto w = ddpm::sample(*sm.net, sched, Var(), ctx, {1, F * hop}, rng, deterministic);
    out.waveform.resize(w.size());
    for (size_t i = 0; i < w.size(); ++i) out.waveform[i] = w[i] * wave_std_;
    return out;
}

}  // namespace difftts
