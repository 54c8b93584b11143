#pragma once

#include <string>
#include <vector>

#include "difftts/nn.hpp"

namespace difftts {

// Adam over a parameter registry. Moment buffers are keyed by parameter
// name so checkpoints can restore them exactly.
class Adam {
public:
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit Adam(double learning_rate = 2e-4) : lr(learning_rate) {}

    void step(nn::ParamRegistry& reg);

    int64_t step_count() const { return t_; }

    // state access for checkpointing
    struct State {
        int64_t t = 0;
        std::vector<std::pair<std::string, std::vector<double>>> m;
        std::vector<std::pair<std::string, std::vector<double>>> v;
    };
    State export_state() const;
    void import_state(const State& s);

private:
    int64_t t_ = 0;
    std::vector<std::pair<std::string, std::vector<double>>> m_, v_;
    std::vector<double>* find_or_create(
        std::vector<std::pair<std::string, std::vector<double>>>& store, const std::string& name,
        size_t n);
};

}  // namespace difftts
