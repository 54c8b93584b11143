// Batch experiment driver: corpus generation, pipeline training, synthesis
// and evaluation over experiment directories.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "difftts/config.hpp"
#include "difftts/corpus.hpp"
#include "difftts/evaluation.hpp"
#include "difftts/pipeline.hpp"
#include "difftts/wav_io.hpp"

namespace fs = std::filesystem;
using namespace difftts;
using nlohmann::json;

namespace {

fs::path resolve_experiment_dir(const std::string& arg) {
    fs::path p(arg);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("DIFFTTS_EXPERIMENT_ROOT")) return fs::path(root) / p;
    return p;
}

// One command per experiment directory at a time.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        std::ifstream probe(path_);
        if (probe.good())
            throw std::runtime_error("experiment directory is locked by another command: " +
                                     path_.string());
        std::ofstream os(path_);
        os << "locked\n";
    }
    ~DirLock() { std::error_code ec; fs::remove(path_, ec); }

private:
    fs::path path_;
};

std::vector<int> parse_phonemes(const std::string& text, int vocab) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        int v;
        try {
            size_t pos = 0;
            v = std::stoi(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument("trailing garbage");
        } catch (const std::exception&) {
            throw std::invalid_argument("malformed phoneme id '" + tok +
                                        "'; valid inventory is 0.." + std::to_string(vocab - 1));
        }
        if (v < 0 || v >= vocab)
            throw std::invalid_argument("phoneme id " + std::to_string(v) +
                                        " out of range; valid inventory is 0.." +
                                        std::to_string(vocab - 1));
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty phoneme input");
    return out;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, long seed_override) {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig::preset_toy()
                                               : ExperimentConfig::load(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    fs::create_directories(out_dir);
    auto corpus = build_and_save_corpus(out_dir, cfg.features, cfg.corpus,
                                        derive_seed(cfg.seed, "corpus"));
    double total_sec = 0.0, labeled_sec = 0.0;
    int n_lab = std::max(1, static_cast<int>(std::lround(cfg.corpus.labeled_fraction *
                                                         static_cast<int>(corpus.items.size()))));
    for (size_t i = 0; i < corpus.items.size(); ++i) {
        double sec = static_cast<double>(corpus.items[i].waveform.size()) /
                     cfg.features.sample_rate;
        total_sec += sec;
        if (static_cast<int>(i) < n_lab) labeled_sec += sec;
    }
    std::cout << "corpus written to " << out_dir << "\n"
              << "utterances: " << corpus.items.size() << " train + " << corpus.holdout.size()
              << " held out\n"
              << "audio: " << total_sec / 60.0 << " min total, labeled fraction "
              << cfg.corpus.labeled_fraction << " (~" << labeled_sec / 60.0 << " min)\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& pipeline,
              const std::string& corpus_dir, const std::string& exp_dir, bool resume,
              long seed_override) {
    PipelineKind kind = pipeline_from_name(pipeline);
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig::preset_toy()
                                               : ExperimentConfig::load(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    if (!fs::exists(fs::path(corpus_dir) / "manifest.json"))
        throw std::runtime_error("missing corpus: no manifest.json in " + corpus_dir +
                                 " (run gen-data first)");
    CorpusOnDisk corpus = load_corpus(corpus_dir);
    fs::path dir = resolve_experiment_dir(exp_dir);
    DirLock lock(dir);
    Experiment exp(cfg, kind, dir);
    exp.train(corpus, resume);
    std::cout << "trained " << pipeline << " into " << dir.string() << "\n";
    for (const auto& s : exp.training_trace()) std::cout << "stage complete: " << s << "\n";
    return 0;
}

int cmd_synth(const std::string& exp_dir, const std::string& phoneme_text,
              const std::string& prompt_wav, const std::string& out_wav, long seed,
              bool deterministic) {
    fs::path dir = resolve_experiment_dir(exp_dir);
    Experiment exp = Experiment::open(dir);
    auto phonemes = parse_phonemes(phoneme_text, exp.config().corpus.phoneme_vocab);

    WavData prompt = read_wav16(prompt_wav);
    if (prompt.sample_rate != exp.config().features.sample_rate)
        throw std::runtime_error("prompt sample rate " + std::to_string(prompt.sample_rate) +
                                 " != experiment rate " +
                                 std::to_string(exp.config().features.sample_rate));
    auto prompt_mel = mel_spectrogram(prompt.samples, exp.config().features);
    int prompt_frames = static_cast<int>(prompt_mel.size()) / exp.config().features.n_mels;

    SynthesisResult res = exp.synthesize(phonemes, prompt_mel, prompt_frames,
                                         static_cast<uint64_t>(seed), deterministic);
    write_wav16(out_wav, res.waveform, exp.config().features.sample_rate);

    fs::path inter = fs::path(out_wav).parent_path() / "intermediates";
    fs::create_directories(inter);
    {
        json j;
        j["stage_trace"] = res.stage_trace;
        j["durations"] = res.durations;
        j["semantic_tokens"] = res.semantic_tokens;
        j["mel_frames"] = res.mel_frames;
        std::ofstream os(inter / "intermediates.json");
        os << j.dump(2) << "\n";
    }
    {
        std::ofstream os(inter / "mel.bin", std::ios::binary);
        os.write(reinterpret_cast<const char*>(res.mel.data()),
                 static_cast<std::streamsize>(res.mel.size() * sizeof(double)));
    }
    std::cout << "wrote " << out_wav << " (" << res.waveform.size() << " samples)\n"
              << "intermediates in " << inter.string() << "\n";
    return 0;
}

// evaluate one experiment over the held-out corpus items
MetricReport evaluate_experiment(Experiment& exp, const CorpusOnDisk& corpus, uint64_t seed,
                                 bool self_check) {
    MetricReport report;
    report.pipeline = pipeline_name(exp.spec().kind);
    const FeatureConfig& fc = exp.config().features;
    for (const auto& u : corpus.holdout) {
        UtteranceMetrics m;
        m.id = u.id;
        if (self_check) {
            // ground truth against itself: all metrics must be zero
            auto track = extract_pitch(u.waveform, fc);
            m.msep = msep(track, track);
            m.msed = msed(u.durations, u.durations);
            m.mel_mse = mel_mse(u.mel, u.mel, fc.n_mels);
            auto feats = exp.codebook().K > 0 ? quantize(exp.codebook(), [&] {
                std::vector<std::vector<double>> ff;
                for (size_t f = 0; f < u.mel.size() / static_cast<size_t>(fc.n_mels); ++f)
                    ff.push_back(band_pool(
                        std::vector<double>(u.mel.begin() + static_cast<long>(f * fc.n_mels),
                                            u.mel.begin() + static_cast<long>((f + 1) * fc.n_mels)),
                        exp.codebook().dim));
                return ff;
            }())
                                              : std::vector<int>{};
            m.ter = token_error_rate(feats, feats);
        } else {
            SynthesisResult res = exp.synthesize(u.phonemes, u.mel, u.frames(),
                                                 derive_seed(seed, u.id), false);
            auto pred_track = extract_pitch(res.waveform, fc);
            auto ref_track = extract_pitch(u.waveform, fc);
            m.msep = msep(pred_track, ref_track);
            if (!res.durations.empty()) m.msed = msed(res.durations, u.durations);
            if (!res.semantic_tokens.empty()) {
                std::vector<std::vector<double>> ff;
                for (size_t f = 0; f < u.mel.size() / static_cast<size_t>(fc.n_mels); ++f)
                    ff.push_back(band_pool(
                        std::vector<double>(u.mel.begin() + static_cast<long>(f * fc.n_mels),
                                            u.mel.begin() + static_cast<long>((f + 1) * fc.n_mels)),
                        exp.codebook().dim));
                auto ref_tokens = quantize(exp.codebook(), ff);
                m.ter = token_error_rate(res.semantic_tokens, ref_tokens);
            }
            m.mel_mse = mel_mse(res.mel, u.mel, fc.n_mels);
        }
        report.per_utterance.push_back(m);
    }
    return report;
}

int cmd_eval(const std::vector<std::string>& exp_dirs, const std::string& corpus_dir,
             const std::string& out_dir, long seed, bool self_check) {
    CorpusOnDisk corpus = load_corpus(corpus_dir);
    fs::create_directories(out_dir);

    std::vector<MetricReport> reports;
    std::optional<json> feature_snapshot;
    for (const auto& d : exp_dirs) {
        fs::path dir = resolve_experiment_dir(d);
        Experiment exp = Experiment::open(dir);
        json feats = exp.config().to_json().at("features");
        if (!feature_snapshot)
            feature_snapshot = feats;
        else if (*feature_snapshot != feats)
            throw std::runtime_error("eval: experiments have mismatched feature configs");
        MetricReport r = evaluate_experiment(exp, corpus, static_cast<uint64_t>(seed), self_check);
        std::ofstream(out_dir + "/report_" + r.pipeline + ".json") << r.to_json_string() << "\n";
        std::ofstream(out_dir + "/report_" + r.pipeline + ".tsv") << r.to_tsv();
        reports.push_back(std::move(r));
    }

    // cross-pipeline comparison table
    std::ostringstream table;
    table << "pipeline\tmsep\tmsed\tter\tmel_mse\n";
    auto cell = [&](const std::optional<double>& v) {
        if (v)
            table << *v;
        else
            table << "NA";
    };
    for (const auto& r : reports) {
        table << r.pipeline << "\t";
        cell(r.mean_msep());
        table << "\t";
        cell(r.mean_msed());
        table << "\t";
        cell(r.mean_ter());
        table << "\t";
        cell(r.mean_mel_mse());
        table << "\n";
    }
    std::ofstream(out_dir + "/comparison.tsv") << table.str();
    std::cout << table.str();
    std::cout << "reports written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-corpus diffusion TTS experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir, pipeline, corpus_dir, exp_dir;
    std::string phonemes, prompt_wav, out_wav;
    std::vector<std::string> exp_dirs;
    long seed = -1;
    bool resume = false, deterministic = false, self_check = false;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    gen->add_option("--config", config_path, "config JSON (preset + overrides)");
    gen->add_option("--out", out_dir, "output corpus directory")->required();
    gen->add_option("--seed", seed, "override config seed");

    auto* train = app.add_subcommand("train", "train a pipeline");
    train->add_option("--config", config_path, "config JSON");
    train->add_option("--pipeline", pipeline, "diff-lm, tetra or tri")
        ->required()
        ->check(CLI::IsMember({"diff-lm", "tetra", "tri"}));
    train->add_option("--corpus", corpus_dir, "corpus directory")->required();
    train->add_option("--exp", exp_dir, "experiment directory")->required();
    train->add_flag("--resume", resume, "continue from checkpoints");
    train->add_option("--seed", seed, "override config seed");

    auto* synth = app.add_subcommand("synth", "synthesize from phoneme ids");
    synth->add_option("--exp", exp_dir, "experiment directory")->required();
    synth->add_option("--phonemes", phonemes, "space-separated phoneme ids")->required();
    synth->add_option("--prompt", prompt_wav, "prompt wav path")->required();
    synth->add_option("--out", out_wav, "output wav path")->required();
    synth->add_option("--seed", seed, "sampling seed");
    synth->add_flag("--deterministic", deterministic, "zero-noise sampling (test hook)");

    auto* eval = app.add_subcommand("eval", "evaluate experiments on held-out items");
    eval->add_option("--exp", exp_dirs, "experiment directories")->required();
    eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
    eval->add_option("--out", out_dir, "report output directory")->required();
    eval->add_option("--seed", seed, "sampling seed");
    eval->add_flag("--self-check", self_check, "evaluate ground truth against itself");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir, seed);
        if (train->parsed())
            return cmd_train(config_path, pipeline, corpus_dir, exp_dir, resume, seed);
        if (synth->parsed())
            return cmd_synth(exp_dir, phonemes, prompt_wav, out_wav, seed < 0 ? 0 : seed,
                             deterministic);
        if (eval->parsed())
            return cmd_eval(exp_dirs, corpus_dir, out_dir, seed < 0 ? 0 : seed, self_check);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
