#include "difftts/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace difftts {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw std::invalid_argument("NoiseSchedule: empty beta table");
    alphas_.resize(betas_.size());
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (size_t i = 0; i < betas_.size(); ++i) {
        if (!(betas_[i] > 0.0 && betas_[i] < 1.0))
            throw std::invalid_argument("NoiseSchedule: beta outside (0,1) at step " +
                                        std::to_string(i + 1));
        alphas_[i] = 1.0 - betas_[i];
        prod *= alphas_[i];
        alpha_bars_[i] = prod;
    }
}

int NoiseSchedule::check(int t) const {
    if (t < 1 || t > steps())
        throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps()) + "]");
    return t;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[check(t) - 1];
}

std::vector<double> NoiseSchedule::q_sample(const std::vector<double>& x0, int t,
                                            const std::vector<double>& eps) const {
    check(t);
    if (x0.size() != eps.size())
        throw std::invalid_argument("q_sample: x0/eps shape mismatch");
    double sa = std::sqrt(alpha_bar(t));
    double sb = std::sqrt(1.0 - alpha_bar(t));
    std::vector<double> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = sa * x0[i] + sb * eps[i];
    return out;
}

double NoiseSchedule::posterior_stddev(int t) const {
    check(t);
    double num = 1.0 - alpha_bar(t - 1);
    double den = 1.0 - alpha_bar(t);
    return std::sqrt(num / den * (1.0 - alpha(t)));
}

std::pair<double, double> NoiseSchedule::step_coefficients(int t) const {
    check(t);
    double c1 = 1.0 / std::sqrt(alpha(t));
    double c2 = (1.0 - alpha(t)) / std::sqrt(1.0 - alpha_bar(t));
    return {c1, c2};
}

NoiseSchedule make_linear_schedule(double beta_min, double beta_max, int T) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
    if (!(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max))
        throw std::invalid_argument(
            "make_linear_schedule: need 0 < beta_min <= beta_max < 1");
    std::vector<double> betas(static_cast<size_t>(T));
    if (T == 1) {
        betas[0] = beta_min;
    } else {
        for (int t = 0; t < T; ++t)
            betas[t] = beta_min + static_cast<double>(t) / (T - 1) * (beta_max - beta_min);
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule ScheduleDescriptor::build() const {
    if (kind != "linear")
        throw std::invalid_argument("ScheduleDescriptor: unknown kind '" + kind + "'");
    return make_linear_schedule(beta_min, beta_max, T);
}

}  // namespace difftts
