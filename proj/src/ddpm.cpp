#include "difftts/ddpm.hpp"

#include <cmath>
#include <string>

namespace difftts {
namespace ddpm {

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

Var diffusion_training_loss(const Denoiser& d, const NoiseSchedule& s,
                            const std::vector<int>& x0_shape, const std::vector<double>& x0,
                            int t, const std::vector<double>& eps, const Var& prompt,
                            const Var& context) {
    auto x_t = constant(x0_shape, s.q_sample(x0, t, eps));
    Var eps_hat = d.denoise(x_t, t, prompt, context);
    if (eps_hat->shape != x_t->shape)
        throw std::invalid_argument("diffusion_training_loss: denoiser output shape mismatch");
    Var target = constant(x0_shape, eps);
    return mean_all(square_v(sub(target, eps_hat)));
}

double training_step(const Denoiser& d, const NoiseSchedule& s,
                     const std::vector<TrainSample>& batch, Adam& opt,
                     nn::ParamRegistry& trainables, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
    trainables.zero_grad();
    Var total;
    for (const auto& item : batch) {
        int t = rng.uniform_int(1, s.steps());
        std::vector<double> eps(item.x0.size());
        for (auto& e : eps) e = rng.normal();
        Var loss =
            diffusion_training_loss(d, s, item.x0_shape, item.x0, t, eps, item.prompt,
                                    item.context);
        if (item.aux_loss) loss = add(loss, item.aux_loss);
        total = total ? add(total, loss) : loss;
    }
    total = scale(total, 1.0 / static_cast<double>(batch.size()));
    double loss_value = total->val[0];
    if (!std::isfinite(loss_value))
        throw DivergenceError("training_step: non-finite loss", static_cast<int>(opt.step_count()));
    backward(total);
    opt.step(trainables);
    return loss_value;
}

std::vector<double> sample(const Denoiser& d, const NoiseSchedule& s, const Var& prompt,
                           const Var& context, const std::vector<int>& shape, Rng& rng,
                           bool deterministic) {
    size_t n = 1;
    for (int dim : shape) n *= static_cast<size_t>(dim);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();

    Var prepared = context ? d.prepare_context(context) : context;
    for (int t = s.steps(); t >= 1; --t) {
        Var x_t = constant(shape, x);
        Var eps_hat = d.forward(x_t, t, prompt, prepared);
        if (eps_hat->shape != x_t->shape)
            throw std::invalid_argument("sample: denoiser output shape mismatch");
        auto [c1, c2] = s.step_coefficients(t);
        double sigma = s.posterior_stddev(t);
        for (size_t i = 0; i < n; ++i) {
            double mu = c1 * (x[i] - c2 * eps_hat->val[i]);
            double psi = (t > 1 && !deterministic) ? rng.normal() : 0.0;
            x[i] = mu + sigma * psi;
        }
        if (!all_finite(x))
            throw DivergenceError("sample: non-finite tensor at step " + std::to_string(t), t);
    }
    return x;
}

}  // namespace ddpm
}  // namespace difftts
