#pragma once

#include <vector>

#include "difftts/nn.hpp"
#include "difftts/tensor.hpp"

namespace difftts {

struct LMConfig {
    int layers = 2;
    int dim = 64;
    int heads = 2;
    int phoneme_vocab = 10;
    int semantic_vocab = 32;
    int max_len = 128;

    int total_vocab() const { return phoneme_vocab + semantic_vocab + 3; }
    int bos() const { return phoneme_vocab + semantic_vocab; }
    int sep() const { return phoneme_vocab + semantic_vocab + 1; }
    int eos() const { return phoneme_vocab + semantic_vocab + 2; }
    int semantic_to_token(int s) const { return phoneme_vocab + s; }
    void validate() const;
};

struct GenerateResult {
    std::vector<int> tokens;  // semantic ids in [0, semantic_vocab)
    bool hit_max = false;     // ran out of budget before EOS
};

// Decoder-only transformer over the concatenation
// [BOS, phonemes, SEP, semantics, EOS]. The loss covers next-token
// prediction of the semantic segment (and EOS) only.
class SemanticLM {
public:
    SemanticLM(const LMConfig& cfg, Rng& rng);

    Var loss(const std::vector<int>& phonemes, const std::vector<int>& semantics) const;

    // building blocks exposed for property tests
    Var logits_for(const std::vector<int>& input_ids) const;  // (n, V)
    Var loss_from_parts(const std::vector<int>& inputs, const std::vector<int>& targets,
                        const std::vector<double>& weights) const;
    std::vector<int> build_sequence(const std::vector<int>& phonemes,
                                    const std::vector<int>& semantics) const;

    GenerateResult generate(const std::vector<int>& phonemes, Rng& rng, int max_new,
                            double temperature, int top_k = 0) const;

    nn::ParamRegistry& registry() { return reg_; }
    const LMConfig& config() const { return cfg_; }

private:
    LMConfig cfg_;
    nn::ParamRegistry reg_;
    Var tok_embed_;  // (V, dim)
    Var pos_embed_;  // (max_len, dim)
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear head_;
};

}  // namespace difftts
