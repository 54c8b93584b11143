#include "difftts/prompt_encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace difftts {

std::vector<double> GaussianPosterior::sigma_values() const {
    std::vector<double> s(logvar->val.size());
    for (size_t i = 0; i < s.size(); ++i) s[i] = std::exp(0.5 * logvar->val[i]);
    return s;
}

void AnnealConfig::validate() const {
    if (warmup_steps < 0 || ramp_steps < 0 || delta < 0)
        throw std::invalid_argument("AnnealConfig: fields must be non-negative");
}

double kl_weight(int step, const AnnealConfig& cfg) {
    cfg.validate();
    if (step < 0) throw std::invalid_argument("kl_weight: step must be >= 0");
    if (step < cfg.warmup_steps) return 0.0;
    if (cfg.ramp_steps == 0) return 1.0;
    double w = static_cast<double>(step - cfg.warmup_steps) / cfg.ramp_steps;
    return w >= 1.0 ? 1.0 : w;
}

Var kl_margin_loss(const GaussianPosterior& post, double delta) {
    if (delta < 0) throw std::invalid_argument("kl_margin_loss: delta must be >= 0");
    // KL = 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
    Var term = sub(add(square_v(post.mu), exp_v(post.logvar)),
                   add_scalar(post.logvar, 1.0));
    Var kl = scale(sum_all(term), 0.5);
    return relu_v(add_scalar(kl, -delta));
}

Var sample_prompt(const GaussianPosterior& post, Rng& rng, bool mean_only) {
    if (mean_only) return reshape(post.mu, {post.dim()});
    std::vector<double> phi(static_cast<size_t>(post.dim()));
    for (auto& v : phi) v = rng.normal();
    Var sigma = exp_v(scale(post.logvar, 0.5));
    Var noise = constant({1, post.dim()}, phi);
    return reshape(add(post.mu, mul(sigma, noise)), {post.dim()});
}

void PromptEncoderConfig::validate() const {
    if (conv_channels.size() != 6)
        throw std::invalid_argument("PromptEncoderConfig: exactly 6 conv layers expected");
    if (n_mels < 1 || latent_dim < 1 || se_reduction < 1)
        throw std::invalid_argument("PromptEncoderConfig: dimensions must be positive");
}

PromptEncoder::PromptEncoder(const PromptEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int cin = 1;
    for (int i = 0; i < 6; ++i) {
        convs_.emplace_back(reg_, "conv" + std::to_string(i), cin, cfg_.conv_channels[i], 3, 3,
                            rng);
        cin = cfg_.conv_channels[i];
    }
    res_conv1_ = nn::Conv2d(reg_, "res.conv1", cin, cin, 3, 3, rng);
    res_conv2_ = nn::Conv2d(reg_, "res.conv2", cin, cin, 3, 3, rng);
    int reduced = std::max(1, cin / cfg_.se_reduction);
    se_ = nn::SEBlock(reg_, "res.se", cin, reduced, rng);
    head_mu_ = nn::Linear(reg_, "head.mu", cin * cfg_.n_mels, cfg_.latent_dim, rng);
    head_logvar_ = nn::Linear(reg_, "head.logvar", cin * cfg_.n_mels, cfg_.latent_dim, rng);
}

GaussianPosterior PromptEncoder::encode(const std::vector<double>& mel, int frames,
                                        int valid_frames) const {
    if (frames < 1 || mel.size() != static_cast<size_t>(frames) * cfg_.n_mels)
        throw std::invalid_argument("PromptEncoder::encode: empty or misshaped input");
    if (valid_frames < 0) valid_frames = frames;
    if (valid_frames < 1 || valid_frames > frames)
        throw std::invalid_argument("PromptEncoder::encode: bad valid_frames");

    // frames-major input to (1, n_mels, frames)
    std::vector<double> img(static_cast<size_t>(cfg_.n_mels) * frames);
    for (int f = 0; f < frames; ++f)
        for (int b = 0; b < cfg_.n_mels; ++b)
            img[static_cast<size_t>(b) * frames + f] = mel[static_cast<size_t>(f) * cfg_.n_mels + b];
    Var x = constant({1, cfg_.n_mels, frames}, img);
    x = zero_after_w(x, valid_frames);

    for (const auto& conv : convs_) x = zero_after_w(relu_v(conv.forward(x)), valid_frames);

    // SE-ResNet block
    Var h = zero_after_w(relu_v(res_conv1_.forward(x)), valid_frames);
    h = zero_after_w(res_conv2_.forward(h), valid_frames);
    h = se_.forward(h, valid_frames);
    x = relu_v(add(x, h));

    Var pooled = mean_over_w(x, valid_frames);                       // (C, n_mels)
    Var flat = reshape(pooled, {1, x->dim(0) * cfg_.n_mels});        // (1, C*n_mels)
    return GaussianPosterior{head_mu_.forward(flat), head_logvar_.forward(flat)};
}

}  // namespace difftts
