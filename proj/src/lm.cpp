#include "difftts/lm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace difftts {

void LMConfig::validate() const {
    if (phoneme_vocab < 2 || semantic_vocab < 2)
        throw std::invalid_argument("LMConfig: vocab sizes must be >= 2");
    if (layers < 1 || dim < 1 || heads < 1 || dim % heads != 0)
        throw std::invalid_argument("LMConfig: bad transformer dimensions");
    if (max_len < 8) throw std::invalid_argument("LMConfig: max_len too small");
}

SemanticLM::SemanticLM(const LMConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int V = cfg_.total_vocab();
    tok_embed_ = reg_.add("tok_embed", randn_leaf({V, cfg_.dim}, rng, 0.02));
    pos_embed_ = reg_.add("pos_embed", randn_leaf({cfg_.max_len, cfg_.dim}, rng, 0.02));
    for (int l = 0; l < cfg_.layers; ++l)
        blocks_.emplace_back(reg_, "block" + std::to_string(l), cfg_.dim, cfg_.heads,
                             4 * cfg_.dim, rng);
    final_ln_ = nn::LayerNorm(reg_, "final_ln", cfg_.dim);
    head_ = nn::Linear(reg_, "head", cfg_.dim, V, rng);
}

std::vector<int> SemanticLM::build_sequence(const std::vector<int>& phonemes,
                                            const std::vector<int>& semantics) const {
    std::vector<int> seq;
    seq.reserve(phonemes.size() + semantics.size() + 3);
    seq.push_back(cfg_.bos());
    for (int p : phonemes) {
        if (p < 0 || p >= cfg_.phoneme_vocab)
            throw std::invalid_argument("SemanticLM: phoneme id out of range");
        seq.push_back(p);
    }
    seq.push_back(cfg_.sep());
    for (int s : semantics) {
        if (s < 0 || s >= cfg_.semantic_vocab)
            throw std::invalid_argument("SemanticLM: semantic id out of range");
        seq.push_back(cfg_.semantic_to_token(s));
    }
    seq.push_back(cfg_.eos());
    return seq;
}

Var SemanticLM::logits_for(const std::vector<int>& input_ids) const {
    int n = static_cast<int>(input_ids.size());
    if (n < 1) throw std::invalid_argument("SemanticLM: empty input");
    if (n > cfg_.max_len)
        throw std::invalid_argument("SemanticLM: sequence length " + std::to_string(n) +
                                    " exceeds max_len " + std::to_string(cfg_.max_len));
    std::vector<int> pos(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pos[i] = i;
    Var h = add(embedding(tok_embed_, input_ids), embedding(pos_embed_, pos));
    for (const auto& block : blocks_) h = block.forward(h, /*causal=*/true);
    return head_.forward(final_ln_.forward(h));
}

Var SemanticLM::loss_from_parts(const std::vector<int>& inputs, const std::vector<int>& targets,
                                const std::vector<double>& weights) const {
    Var logp = log_softmax_rows(logits_for(inputs));
    return nll_pick(logp, targets, weights);
}

Var SemanticLM::loss(const std::vector<int>& phonemes, const std::vector<int>& semantics) const {
    auto seq = build_sequence(phonemes, semantics);
    int n = static_cast<int>(seq.size());
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    // positions predicting the semantic segment + EOS; sep sits at 1 + |ph|
    int sep_pos = 1 + static_cast<int>(phonemes.size());
    int active = n - 1 - sep_pos;
    std::vector<double> weights(targets.size(), 0.0);
    for (int i = sep_pos; i < n - 1; ++i) weights[i] = 1.0 / active;
    return loss_from_parts(inputs, targets, weights);
}

GenerateResult SemanticLM::generate(const std::vector<int>& phonemes, Rng& rng, int max_new,
                                    double temperature, int top_k) const {
    if (max_new < 1) throw std::invalid_argument("SemanticLM::generate: max_new must be >= 1");
    std::vector<int> seq;
    seq.push_back(cfg_.bos());
    for (int p : phonemes) {
        if (p < 0 || p >= cfg_.phoneme_vocab)
            throw std::invalid_argument("SemanticLM: phoneme id out of range");
        seq.push_back(p);
    }
    seq.push_back(cfg_.sep());

    GenerateResult result;
    bool greedy = temperature <= 0.0;
    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int>(seq.size()) >= cfg_.max_len) {
            result.hit_max = true;
            break;
        }
        Var logits = logits_for(seq);
        int n = logits->dim(0), V = logits->dim(1);
        const double* row = logits->val.data() + static_cast<size_t>(n - 1) * V;

        // decoding is constrained to the semantic segment plus EOS
        std::vector<std::pair<double, int>> cand;
        cand.reserve(static_cast<size_t>(cfg_.semantic_vocab) + 1);
        for (int s = 0; s < cfg_.semantic_vocab; ++s)
            cand.emplace_back(row[cfg_.semantic_to_token(s)], cfg_.semantic_to_token(s));
        cand.emplace_back(row[cfg_.eos()], cfg_.eos());

        int chosen;
        if (greedy) {
            chosen = std::max_element(cand.begin(), cand.end())->second;
        } else {
            std::sort(cand.begin(), cand.end(), std::greater<>());
            if (top_k > 0 && top_k < static_cast<int>(cand.size()))
                cand.resize(static_cast<size_t>(top_k));
            double mx = cand.front().first;
            double z = 0.0;
            std::vector<double> probs(cand.size());
            for (size_t i = 0; i < cand.size(); ++i) {
                probs[i] = std::exp((cand[i].first - mx) / temperature);
                z += probs[i];
            }
            double r = rng.uniform() * z;
            double acc = 0.0;
            chosen = cand.back().second;
            for (size_t i = 0; i < cand.size(); ++i) {
                acc += probs[i];
                if (acc >= r) {
                    chosen = cand[i].second;
                    break;
                }
            }
        }
        if (chosen == cfg_.eos()) return result;
        seq.push_back(chosen);
        result.tokens.push_back(chosen - cfg_.phoneme_vocab);
    }
    if (static_cast<int>(result.tokens.size()) == max_new) result.hit_max = true;
    return result;
}

}  // namespace difftts
