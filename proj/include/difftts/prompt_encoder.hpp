#pragma once

#include <vector>

#include "difftts/nn.hpp"
#include "difftts/tensor.hpp"

namespace difftts {

// Diagonal-Gaussian posterior over the prompt embedding. mu and logvar stay
// attached to the encoder graph so sampled prompts backpropagate into it.
struct GaussianPosterior {
    Var mu;      // (1, D)
    Var logvar;  // (1, D)

    int dim() const { return mu->dim(1); }
    std::vector<double> mu_values() const { return mu->val; }
    std::vector<double> sigma_values() const;
};

// KL annealing: weight 0 for warmup_steps (reconstruction-only stage), then
// a linear ramp to 1 over ramp_steps.
struct AnnealConfig {
    int warmup_steps = 40;
    int ramp_steps = 40;
    double delta = 0.1;  // KL margin

    void validate() const;
};

double kl_weight(int step, const AnnealConfig& cfg);

// max(0, KL[N(mu, sigma^2) || N(0, I)] - delta); zero gradient below margin
Var kl_margin_loss(const GaussianPosterior& post, double delta);

// p = mu + sigma (*) phi, phi ~ N(0, I); mean_only gives phi = 0
Var sample_prompt(const GaussianPosterior& post, Rng& rng, bool mean_only = false);

struct PromptEncoderConfig {
    int n_mels = 40;
    int latent_dim = 64;
    std::vector<int> conv_channels = {8, 8, 16, 16, 32, 32};  // 6 conv layers
    int se_reduction = 4;

    void validate() const;
};

// 6-layer 2D conv stack + SE-ResNet block + masked temporal pooling, with
// linear heads for mu and log-variance. Masking zeroes activations past the
// valid frame count after every layer, so trailing zero padding does not
// change the posterior.
class PromptEncoder {
public:
    PromptEncoder(const PromptEncoderConfig& cfg, Rng& rng);

    // mel: frames-major (frames x n_mels); valid_frames <= frames, -1 = all
    GaussianPosterior encode(const std::vector<double>& mel, int frames,
                             int valid_frames = -1) const;

    nn::ParamRegistry& registry() { return reg_; }
    const PromptEncoderConfig& config() const { return cfg_; }

private:
    PromptEncoderConfig cfg_;
    nn::ParamRegistry reg_;
    std::vector<nn::Conv2d> convs_;
    nn::Conv2d res_conv1_, res_conv2_;
    nn::SEBlock se_;
    nn::Linear head_mu_, head_logvar_;
};

}  // namespace difftts
