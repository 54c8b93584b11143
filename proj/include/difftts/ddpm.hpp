#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "difftts/nn.hpp"
#include "difftts/optimizer.hpp"
#include "difftts/schedule.hpp"
#include "difftts/tensor.hpp"

namespace difftts {

// Thrown when a training step or sampling loop produces non-finite values.
struct DivergenceError : std::runtime_error {
    int step = -1;
    explicit DivergenceError(const std::string& what, int at_step = -1)
        : std::runtime_error(what), step(at_step) {}
};

// Noise-prediction network contract. A denoiser maps (x_t, t, prompt,
// context) to a noise estimate of x_t's shape. Conditioning is encoded once
// via prepare_context so the sampling loop does not re-run the context
// encoder T times.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Var prepare_context(const Var& context) const = 0;
    virtual Var forward(const Var& x_t, int t, const Var& prompt, const Var& prepared) const = 0;
    virtual nn::ParamRegistry& registry() = 0;

    Var denoise(const Var& x_t, int t, const Var& prompt, const Var& context) const {
        return forward(x_t, t, prompt, prepare_context(context));
    }
};

namespace ddpm {

// ||eps - d(q_sample(x0, t, eps), t, p, s)||^2, mean over elements.
// x0/eps are raw data; prompt/context may be graph nodes so gradients reach
// an attached prompt encoder or embedding table.
Var diffusion_training_loss(const Denoiser& d, const NoiseSchedule& s,
                            const std::vector<int>& x0_shape, const std::vector<double>& x0,
                            int t, const std::vector<double>& eps, const Var& prompt,
                            const Var& context);

// One batch item, built fresh by the caller each step (graphs are per-step).
struct TrainSample {
    std::vector<int> x0_shape;
    std::vector<double> x0;
    Var context;              // (cond_dim, L)
    Var prompt;               // nullable
    Var aux_loss;             // nullable scalar added to this item's loss (e.g. weighted KL)
};

// Samples t ~ Uniform{1..T} and eps ~ N(0,I) per item, takes one Adam step
// on the mean batch loss over `trainables`, returns the pre-update loss.
double training_step(const Denoiser& d, const NoiseSchedule& s,
                     const std::vector<TrainSample>& batch, Adam& opt,
                     nn::ParamRegistry& trainables, Rng& rng);

// Ancestral sampling, Algorithm-2 loop from t=T down to 1. With
// `deterministic` the per-step noise is zero everywhere (test hook, not part
// of the published procedure).
std::vector<double> sample(const Denoiser& d, const NoiseSchedule& s, const Var& prompt,
                           const Var& context, const std::vector<int>& shape, Rng& rng,
                           bool deterministic);

}  // namespace ddpm
}  // namespace difftts
