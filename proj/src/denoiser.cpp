#include "difftts/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace difftts {

void DenoiserConfig::validate() const {
    if (residual_layers < 1 || blocks < 1 || residual_layers % blocks != 0)
        throw std::invalid_argument(
            "DenoiserConfig: residual layer count must be a positive multiple of blocks");
    int n = layers_per_block();
    if (static_cast<int>(dilation_cycle.size()) != n)
        throw std::invalid_argument("DenoiserConfig: dilation cycle length must equal N/m");
    for (int i = 0; i < n; ++i)
        if (dilation_cycle[i] != (1 << i))
            throw std::invalid_argument("DenoiserConfig: dilation must double per layer in a block");
    if (kernel < 1 || kernel % 2 == 0)
        throw std::invalid_argument("DenoiserConfig: kernel must be odd");
    if (channels < 1 || in_dim < 1 || cond_dim < 1)
        throw std::invalid_argument("DenoiserConfig: dimensions must be positive");
    if (step_embed_dim % 2 != 0)
        throw std::invalid_argument("DenoiserConfig: step_embed_dim must be even");
    if (cond_upsample < 1) throw std::invalid_argument("DenoiserConfig: cond_upsample >= 1");
}

int DenoiserConfig::receptive_field_radius() const {
    int per_block = 0;
    for (int d : dilation_cycle) per_block += (kernel - 1) / 2 * 2 * d;  // (k-1)*d per layer
    // radius counts one side
    return blocks * per_block / 2;
}

std::vector<double> step_embedding(int t, int dim) {
    if (t < 1) throw std::invalid_argument("step_embedding: t must be >= 1");
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("step_embedding: dim must be even");
    std::vector<double> e(static_cast<size_t>(dim));
    for (int i = 0; i < dim / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / dim);
        e[static_cast<size_t>(2 * i)] = std::sin(t * freq);
        e[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return e;
}

Var length_regulate(const Var& seq, const std::vector<int>& durations) {
    if (seq->ndim() != 2)
        throw std::invalid_argument("length_regulate: sequence must be (L,D)");
    if (seq->dim(0) != static_cast<int>(durations.size()))
        throw std::invalid_argument("length_regulate: durations length mismatch");
    for (int d : durations)
        if (d < 0) throw std::invalid_argument("length_regulate: negative duration");
    return repeat_rows(seq, durations);
}

DilatedDenoiser::DilatedDenoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int C = cfg_.channels;
    input_proj_ = nn::Conv1d(reg_, "input", cfg_.in_dim, C, 1, 1, rng);
    int n = cfg_.layers_per_block();
    for (int l = 0; l < cfg_.residual_layers; ++l) {
        std::string base = "layer" + std::to_string(l);
        Layer layer;
        layer.dilated =
            nn::Conv1d(reg_, base + ".dilated", C, 2 * C, cfg_.kernel, cfg_.dilation_cycle[l % n],
                       rng);
        layer.cond_proj = nn::Conv1d(reg_, base + ".cond", C, 2 * C, 1, 1, rng);
        layer.res_proj = nn::Conv1d(reg_, base + ".res", C, C, 1, 1, rng);
        layer.skip_proj = nn::Conv1d(reg_, base + ".skip", C, C, 1, 1, rng);
        layers_.push_back(std::move(layer));
    }
    step_fc1_ = nn::Linear(reg_, "step.fc1", cfg_.step_embed_dim, C, rng);
    step_fc2_ = nn::Linear(reg_, "step.fc2", C, C, rng);
    if (cfg_.prompt_dim > 0) prompt_proj_ = nn::Linear(reg_, "prompt", cfg_.prompt_dim, C, rng);
    enc_in_ = nn::Linear(reg_, "encoder.in", cfg_.cond_dim, C, rng);
    for (int l = 0; l < cfg_.encoder_layers; ++l)
        enc_blocks_.emplace_back(reg_, "encoder.block" + std::to_string(l), C,
                                 cfg_.encoder_heads, 4 * C, rng);
    out_proj1_ = nn::Conv1d(reg_, "out1", C, C, 1, 1, rng);
    out_proj2_ = nn::Conv1d(reg_, "out2", C, cfg_.in_dim, 1, 1, rng);
}

Var DilatedDenoiser::prepare_context(const Var& context) const {
    if (!context) throw std::invalid_argument("DilatedDenoiser: missing context");
    if (context->ndim() != 2 || context->dim(0) != cfg_.cond_dim)
        throw std::invalid_argument("DilatedDenoiser: context must be (cond_dim, L)");
    int L = context->dim(1);
    Var h = enc_in_.forward(transpose(context));  // (L, C)
    Var pe = constant({L, cfg_.channels}, nn::sinusoid_table(L, cfg_.channels));
    h = add(h, pe);
    for (const auto& block : enc_blocks_) h = block.forward(h, /*causal=*/false);
    if (cfg_.cond_upsample > 1) {
        std::vector<int> counts(static_cast<size_t>(L), cfg_.cond_upsample);
        h = repeat_rows(h, counts);
    }
    return transpose(h);  // (C, L * upsample)
}

Var DilatedDenoiser::forward(const Var& x_t, int t, const Var& prompt, const Var& prepared) const {
    if (x_t->ndim() != 2 || x_t->dim(0) != cfg_.in_dim)
        throw std::invalid_argument("DilatedDenoiser: x_t must be (in_dim, T)");
    if (t < 1) throw std::out_of_range("DilatedDenoiser: step must be >= 1");
    int T = x_t->dim(1);
    if (!prepared || prepared->ndim() != 2 || prepared->dim(1) != T)
        throw std::invalid_argument(
            "DilatedDenoiser: context length after regulation must equal data length");

    int C = cfg_.channels;
    Var se = constant({1, cfg_.step_embed_dim}, step_embedding(t, cfg_.step_embed_dim));
    Var cond_vec = step_fc2_.forward(relu_v(step_fc1_.forward(se)));  // (1, C)
    if (cfg_.prompt_dim > 0) {
        if (!prompt) throw std::invalid_argument("DilatedDenoiser: module expects a prompt");
        Var p2 = prompt->ndim() == 1 ? reshape(prompt, {1, cfg_.prompt_dim}) : prompt;
        if (p2->dim(1) != cfg_.prompt_dim)
            throw std::invalid_argument("DilatedDenoiser: prompt dimension mismatch");
        cond_vec = add(cond_vec, prompt_proj_.forward(p2));
    }
    Var cond_col = reshape(cond_vec, {C});  // broadcast over time below

    Var h = relu_v(input_proj_.forward(x_t));  // (C, T)
    Var skip_sum;
    for (const auto& layer : layers_) {
        Var inp = add_colvec(h, cond_col);
        Var z = add(layer.dilated.forward(inp), layer.cond_proj.forward(prepared));  // (2C, T)
        Var gate = mul(tanh_v(slice_rows(z, 0, C)), sigmoid_v(slice_rows(z, C, 2 * C)));
        h = add(h, layer.res_proj.forward(gate));
        Var skip = layer.skip_proj.forward(gate);
        skip_sum = skip_sum ? add(skip_sum, skip) : skip;
    }
    return out_proj2_.forward(relu_v(out_proj1_.forward(relu_v(skip_sum))));
}

std::unique_ptr<DilatedDenoiser> build_denoiser(const DenoiserConfig& cfg, Rng& rng) {
    return std::make_unique<DilatedDenoiser>(cfg, rng);
}

}  // namespace difftts
