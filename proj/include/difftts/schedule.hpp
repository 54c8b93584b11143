#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace difftts {

// Precomputed beta/alpha tables for a T-step diffusion process. Immutable
// after construction; all math in doubles. Index convention: step t is
// 1-based (t in [1, T]), alpha_bar(0) == 1.
class NoiseSchedule {
public:
    NoiseSchedule(std::vector<double> betas);

    int steps() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const { return betas_[check(t) - 1]; }
    double alpha(int t) const { return alphas_[check(t) - 1]; }
    // alpha_bar(0) == 1 by convention
    double alpha_bar(int t) const;

    // sqrt(alpha_bar_t)*x0 + sqrt(1-alpha_bar_t)*eps, elementwise
    std::vector<double> q_sample(const std::vector<double>& x0, int t,
                                 const std::vector<double>& eps) const;

    // sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * (1 - alpha_t)); zero at t=1
    double posterior_stddev(int t) const;

    // (1/sqrt(alpha_t), (1-alpha_t)/sqrt(1-alpha_bar_t)) for the posterior mean
    std::pair<double, double> step_coefficients(int t) const;

private:
    int check(int t) const;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

NoiseSchedule make_linear_schedule(double beta_min, double beta_max, int T);

// How a schedule is persisted: endpoints and step count only, tables are
// rebuilt on load.
struct ScheduleDescriptor {
    std::string kind = "linear";
    double beta_min = 1e-4;
    double beta_max = 0.05;
    int T = 200;

    NoiseSchedule build() const;
};

}  // namespace difftts
