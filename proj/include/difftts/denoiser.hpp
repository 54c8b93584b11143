#pragma once

#include <memory>
#include <vector>

#include "difftts/ddpm.hpp"
#include "difftts/nn.hpp"

namespace difftts {

// Configuration of the dilated-convolution denoiser stack. N residual layers
// in m blocks of n = N/m layers each; dilation doubles per layer inside a
// block.
struct DenoiserConfig {
    int residual_layers = 6;               // N
    int blocks = 2;                        // m
    int channels = 16;                     // C
    int kernel = 3;                        // k
    std::vector<int> dilation_cycle = {1, 2, 4};
    int in_dim = 1;                        // data channels
    int cond_dim = 16;                     // raw context channels
    int step_embed_dim = 64;
    int prompt_dim = 0;                    // 0: module takes no prompt
    int encoder_layers = 2;
    int encoder_heads = 2;
    int cond_upsample = 1;                 // context repeat factor (hop for the wave module)

    int layers_per_block() const { return residual_layers / blocks; }
    void validate() const;
    // closed-form receptive-field radius (one side, in samples) of the
    // convolution stack
    int receptive_field_radius() const;
};

// sinusoidal step encoding at geometric frequencies; deterministic in t
std::vector<double> step_embedding(int t, int dim);

// repeat row i durations[i] times, order preserved; zero drops the element
Var length_regulate(const Var& seq, const std::vector<int>& durations);

// Bidirectional (non-causal) dilated-convolution denoiser with gated
// activations, per-layer context bias, broadcast prompt/step conditioning
// and summed skip connections.
class DilatedDenoiser : public Denoiser {
public:
    DilatedDenoiser(const DenoiserConfig& cfg, Rng& rng);

    Var prepare_context(const Var& context) const override;
    Var forward(const Var& x_t, int t, const Var& prompt, const Var& prepared) const override;
    nn::ParamRegistry& registry() override { return reg_; }
    const DenoiserConfig& config() const { return cfg_; }

private:
    DenoiserConfig cfg_;
    nn::ParamRegistry reg_;

    nn::Conv1d input_proj_;
    struct Layer {
        nn::Conv1d dilated;    // C -> 2C, kernel k, dilated
        nn::Conv1d cond_proj;  // C -> 2C, 1x1
        nn::Conv1d res_proj;   // C -> C, 1x1
        nn::Conv1d skip_proj;  // C -> C, 1x1
    };
    std::vector<Layer> layers_;
    nn::Linear step_fc1_, step_fc2_;
    nn::Linear prompt_proj_;   // only when prompt_dim > 0
    nn::Linear enc_in_;
    std::vector<nn::TransformerBlock> enc_blocks_;
    nn::Conv1d out_proj1_, out_proj2_;
};

std::unique_ptr<DilatedDenoiser> build_denoiser(const DenoiserConfig& cfg, Rng& rng);

}  // namespace difftts
