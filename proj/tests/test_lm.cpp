#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "difftts/lm.hpp"
#include "difftts/optimizer.hpp"

using namespace difftts;

namespace {

LMConfig tiny_config() {
    LMConfig cfg;
    cfg.layers = 2;
    cfg.dim = 32;
    cfg.heads = 2;
    cfg.phoneme_vocab = 6;
    cfg.semantic_vocab = 8;
    cfg.max_len = 48;
    return cfg;
}

void zero_head(SemanticLM& lm) {
    for (auto& [name, p] : lm.registry().params)
        if (name == "head.w" || name == "head.b")
            std::fill(p->val.begin(), p->val.end(), 0.0);
}

}  // namespace

TEST_CASE("config validation") {
    LMConfig cfg = tiny_config();
    cfg.phoneme_vocab = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.heads = 3;  // does not divide dim
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("uniform logits give ln(V) per predicted position") {
    LMConfig cfg = tiny_config();
    Rng rng(1);
    SemanticLM lm(cfg, rng);
    zero_head(lm);
    Var loss = lm.loss({0, 1, 2}, {3, 4});
    CHECK(loss->val[0] == doctest::Approx(std::log(cfg.total_vocab())).epsilon(1e-10));
}

TEST_CASE("empty teacher sequence scores the EOS position only") {
    LMConfig cfg = tiny_config();
    Rng rng(2);
    SemanticLM lm(cfg, rng);
    zero_head(lm);
    Var loss = lm.loss({0, 1}, {});
    CHECK(loss->val[0] == doctest::Approx(std::log(cfg.total_vocab())).epsilon(1e-10));
}

TEST_CASE("overlong sequences are rejected") {
    LMConfig cfg = tiny_config();
    Rng rng(3);
    SemanticLM lm(cfg, rng);
    std::vector<int> sem(60, 1);
    CHECK_THROWS_AS(lm.loss({0, 1}, sem), std::invalid_argument);
}

TEST_CASE("loss ignores phoneme-segment targets") {
    LMConfig cfg = tiny_config();
    Rng rng(4);
    SemanticLM lm(cfg, rng);
    std::vector<int> phonemes{2, 3, 4};
    std::vector<int> semantics{1, 5};
    auto seq = lm.build_sequence(phonemes, semantics);
    int n = static_cast<int>(seq.size());
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    int sep_pos = 1 + static_cast<int>(phonemes.size());
    int active = n - 1 - sep_pos;
    std::vector<double> weights(targets.size(), 0.0);
    for (int i = sep_pos; i < n - 1; ++i) weights[static_cast<size_t>(i)] = 1.0 / active;

    Var base = lm.loss_from_parts(inputs, targets, weights);
    // perturb targets at masked (phoneme-segment) positions
    auto targets2 = targets;
    for (int i = 0; i < sep_pos; ++i) targets2[static_cast<size_t>(i)] = 0;
    Var perturbed = lm.loss_from_parts(inputs, targets2, weights);
    CHECK(base->val[0] == perturbed->val[0]);
    CHECK(base->val[0] == doctest::Approx(lm.loss(phonemes, semantics)->val[0]));
}

TEST_CASE("causal masking: logits at position i ignore positions > i") {
    LMConfig cfg = tiny_config();
    Rng rng(5);
    SemanticLM lm(cfg, rng);
    std::vector<int> a{cfg.bos(), 1, 2, cfg.sep(), cfg.semantic_to_token(0)};
    std::vector<int> b = a;
    b[4] = cfg.semantic_to_token(7);  // change the last token only
    Var la = lm.logits_for(a);
    Var lb = lm.logits_for(b);
    int V = cfg.total_vocab();
    for (int pos = 0; pos < 4; ++pos)
        for (int v = 0; v < V; ++v)
            CHECK(la->val[static_cast<size_t>(pos) * V + v] ==
                  doctest::Approx(lb->val[static_cast<size_t>(pos) * V + v]).epsilon(1e-12));
}

TEST_CASE("memorizes one pair and reproduces it greedily") {
    LMConfig cfg = tiny_config();
    Rng rng(6);
    SemanticLM lm(cfg, rng);
    std::vector<int> phonemes{1, 4, 2};
    std::vector<int> semantics{7, 7, 3, 0, 5};

    Adam opt(3e-3);
    double loss = 1e9;
    for (int step = 0; step < 400 && loss >= 0.01; ++step) {
        Var l = lm.loss(phonemes, semantics);
        loss = l->val[0];
        lm.registry().zero_grad();
        backward(l);
        opt.step(lm.registry());
    }
    CHECK(loss < 0.01);

    Rng grng(7);
    GenerateResult out = lm.generate(phonemes, grng, 20, /*temperature=*/0.0);
    CHECK(out.tokens == semantics);
    CHECK_FALSE(out.hit_max);

    SUBCASE("greedy decoding is deterministic") {
        Rng g1(8), g2(9);
        auto a = lm.generate(phonemes, g1, 20, 0.0);
        auto b = lm.generate(phonemes, g2, 20, 0.0);
        CHECK(a.tokens == b.tokens);
    }
}

TEST_CASE("stochastic decoding varies across seeds") {
    LMConfig cfg = tiny_config();
    Rng rng(10);
    SemanticLM lm(cfg, rng);  // untrained: near-uniform distribution
    std::vector<int> phonemes{0, 1};
    bool differs = false;
    for (uint64_t s = 0; s < 5 && !differs; ++s) {
        Rng g1(100 + s), g2(200 + s);
        auto a = lm.generate(phonemes, g1, 12, 1.0);
        auto b = lm.generate(phonemes, g2, 12, 1.0);
        differs = a.tokens != b.tokens;
    }
    CHECK(differs);
}

TEST_CASE("generation budget is flagged, not an error") {
    LMConfig cfg = tiny_config();
    Rng rng(11);
    SemanticLM lm(cfg, rng);
    zero_head(lm);  // uniform: EOS unlikely to dominate
    Rng grng(12);
    auto out = lm.generate({1}, grng, 3, 1.0);
    if (static_cast<int>(out.tokens.size()) == 3) CHECK(out.hit_max);
    CHECK_THROWS_AS(lm.generate({1}, grng, 0, 1.0), std::invalid_argument);
}

TEST_CASE("phoneme ids are validated") {
    LMConfig cfg = tiny_config();
    Rng rng(13);
    SemanticLM lm(cfg, rng);
    CHECK_THROWS_AS(lm.loss({99}, {0}), std::invalid_argument);
    Rng grng(14);
    CHECK_THROWS_AS(lm.generate({-1}, grng, 5, 1.0), std::invalid_argument);
}
