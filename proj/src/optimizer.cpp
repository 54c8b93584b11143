#include "difftts/optimizer.hpp"

#include <cmath>

namespace difftts {

std::vector<double>* Adam::find_or_create(
    std::vector<std::pair<std::string, std::vector<double>>>& store, const std::string& name,
    size_t n) {
    for (auto& [k, v] : store)
        if (k == name) return &v;
    store.emplace_back(name, std::vector<double>(n, 0.0));
    return &store.back().second;
}

void Adam::step(nn::ParamRegistry& reg) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& [name, p] : reg.params) {
        if (p->grad.size() != p->val.size()) continue;  // no gradient this step
        auto* m = find_or_create(m_, name, p->numel());
        auto* v = find_or_create(v_, name, p->numel());
        for (size_t i = 0; i < p->numel(); ++i) {
            double g = p->grad[i];
            (*m)[i] = beta1 * (*m)[i] + (1.0 - beta1) * g;
            (*v)[i] = beta2 * (*v)[i] + (1.0 - beta2) * g * g;
            double mhat = (*m)[i] / bc1;
            double vhat = (*v)[i] / bc2;
            p->val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

Adam::State Adam::export_state() const { return State{t_, m_, v_}; }

void Adam::import_state(const State& s) {
    t_ = s.t;
    m_ = s.m;
    v_ = s.v;
}

}  // namespace difftts
