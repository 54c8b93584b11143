#pragma once

#include <map>
#include <string>
#include <vector>

#include "difftts/tensor.hpp"

namespace difftts {
namespace nn {

// Named parameter registry. Modules register their trainable tensors (and
// non-trainable buffers such as normalizer stats) under hierarchical names;
// the optimizer and checkpoint code operate on the registry only.
struct ParamRegistry {
    std::vector<std::pair<std::string, Var>> params;
    std::vector<std::pair<std::string, Var>> buffers;

    Var add(const std::string& name, Var v) {
        v->requires_grad = true;
        params.emplace_back(name, v);
        return v;
    }
    Var add_buffer(const std::string& name, Var v) {
        v->requires_grad = false;
        buffers.emplace_back(name, v);
        return v;
    }
    void zero_grad() {
        for (auto& [n, p] : params) p->zero_grad();
    }
    size_t total_params() const {
        size_t n = 0;
        for (auto& [name, p] : params) n += p->numel();
        return n;
    }
    Var find(const std::string& name) const {
        for (auto& [n, p] : params)
            if (n == name) return p;
        for (auto& [n, p] : buffers)
            if (n == name) return p;
        return nullptr;
    }
};

struct Linear {
    Var w;  // (in, out)
    Var b;  // (out)
    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng);
    Var forward(const Var& x) const;  // (n,in) -> (n,out)
};

struct Conv1d {
    Var w;  // (Cout,Cin,K)
    Var b;
    int dilation = 1;
    Conv1d() = default;
    Conv1d(ParamRegistry& reg, const std::string& name, int cin, int cout, int k, int dilation,
           Rng& rng);
    Var forward(const Var& x) const;  // (Cin,T) -> (Cout,T)
};

struct Conv2d {
    Var w;  // (Cout,Cin,Kh,Kw)
    Var b;
    Conv2d() = default;
    Conv2d(ParamRegistry& reg, const std::string& name, int cin, int cout, int kh, int kw,
           Rng& rng);
    Var forward(const Var& x) const;  // (Cin,H,W) -> (Cout,H,W)
};

struct LayerNorm {
    Var gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamRegistry& reg, const std::string& name, int dim);
    Var forward(const Var& x) const;  // rows normalized
};

// Squeeze-and-excitation channel recalibration over (C,H,W) feature maps.
// valid_w restricts the squeeze pooling to the first valid_w time columns so
// trailing padding cannot leak into the gates; pass x->dim(2) when unmasked.
struct SEBlock {
    Linear fc1, fc2;
    SEBlock() = default;
    SEBlock(ParamRegistry& reg, const std::string& name, int channels, int reduced, Rng& rng);
    Var gates(const Var& x, int valid_w) const;    // (C,H,W) -> (C), each in (0,1)
    Var forward(const Var& x, int valid_w) const;  // x * gates(x)
};

// Multi-head self-attention over a (T,D) sequence. causal=true applies a
// lower-triangular mask.
struct SelfAttention {
    int heads = 1;
    int dim = 0;
    Linear wq, wk, wv, wo;
    SelfAttention() = default;
    SelfAttention(ParamRegistry& reg, const std::string& name, int dim, int heads, Rng& rng);
    Var forward(const Var& x, bool causal) const;
};

// Pre-LN transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Linear mlp1, mlp2;
    TransformerBlock() = default;
    TransformerBlock(ParamRegistry& reg, const std::string& name, int dim, int heads,
                     int mlp_hidden, Rng& rng);
    Var forward(const Var& x, bool causal) const;
};

// sinusoidal position encoding rows, (n, dim), dim even
std::vector<double> sinusoid_table(int n, int dim);

}  // namespace nn
}  // namespace difftts
