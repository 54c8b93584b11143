#pragma once

// Shared test articles: contract-conforming oracle denoisers and a micro
// configuration of the production net small enough for exhaustive
// finite-difference checks.

#include <cmath>
#include <vector>

#include "difftts/ddpm.hpp"
#include "difftts/denoiser.hpp"

namespace difftts::testing {

// always returns a fixed tensor (e.g. the exact injected noise)
class FixedDenoiser : public Denoiser {
public:
    FixedDenoiser(std::vector<int> shape, std::vector<double> out)
        : shape_(std::move(shape)), out_(std::move(out)) {}

    Var prepare_context(const Var& context) const override { return context; }
    Var forward(const Var&, int, const Var&, const Var&) const override {
        return constant(shape_, out_);
    }
    nn::ParamRegistry& registry() override { return reg_; }

private:
    std::vector<int> shape_;
    std::vector<double> out_;
    nn::ParamRegistry reg_;
};

// predicts all zeros, any input shape
class ZeroDenoiser : public Denoiser {
public:
    Var prepare_context(const Var& context) const override { return context; }
    Var forward(const Var& x_t, int, const Var&, const Var&) const override {
        return constant(x_t->shape, 0.0);
    }
    nn::ParamRegistry& registry() override { return reg_; }

private:
    nn::ParamRegistry reg_;
};

// closed-form inverse of the forward process for a known clean target:
// eps_hat = (x_t - sqrt(abar_t) x0*) / sqrt(1 - abar_t)
class AnalyticOracleDenoiser : public Denoiser {
public:
    AnalyticOracleDenoiser(const NoiseSchedule* s, std::vector<double> x0)
        : sched_(s), x0_(std::move(x0)) {}

    Var prepare_context(const Var& context) const override { return context; }
    Var forward(const Var& x_t, int t, const Var&, const Var&) const override {
        double sa = std::sqrt(sched_->alpha_bar(t));
        double sb = std::sqrt(1.0 - sched_->alpha_bar(t));
        std::vector<double> out(x_t->numel());
        for (size_t i = 0; i < out.size(); ++i) out[i] = (x_t->val[i] - sa * x0_[i]) / sb;
        return constant(x_t->shape, out);
    }
    nn::ParamRegistry& registry() override { return reg_; }

private:
    const NoiseSchedule* sched_;
    std::vector<double> x0_;
    nn::ParamRegistry reg_;
};

// production net scaled down to < 200 parameters for finite differences
inline DenoiserConfig micro_config() {
    DenoiserConfig cfg;
    cfg.residual_layers = 1;
    cfg.blocks = 1;
    cfg.channels = 2;
    cfg.kernel = 3;
    cfg.dilation_cycle = {1};
    cfg.in_dim = 1;
    cfg.cond_dim = 2;
    cfg.step_embed_dim = 4;
    cfg.prompt_dim = 0;
    cfg.encoder_layers = 1;
    cfg.encoder_heads = 1;
    cfg.cond_upsample = 1;
    return cfg;
}

inline DenoiserConfig toy_config() {
    DenoiserConfig cfg;
    cfg.residual_layers = 6;
    cfg.blocks = 2;
    cfg.channels = 16;
    cfg.kernel = 3;
    cfg.dilation_cycle = {1, 2, 4};
    cfg.in_dim = 1;
    cfg.cond_dim = 8;
    cfg.step_embed_dim = 32;
    cfg.prompt_dim = 8;
    cfg.encoder_layers = 2;
    cfg.encoder_heads = 2;
    return cfg;
}

}  // namespace difftts::testing
