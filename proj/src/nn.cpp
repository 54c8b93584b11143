#include "difftts/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace difftts {
namespace nn {

Linear::Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng) {
    w = reg.add(name + ".w", randn_leaf({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
    b = reg.add(name + ".b", constant({out}, 0.0));
}

Var Linear::forward(const Var& x) const { return add_rowvec(matmul(x, w), b); }

Conv1d::Conv1d(ParamRegistry& reg, const std::string& name, int cin, int cout, int k, int dil,
               Rng& rng)
    : dilation(dil) {
    double s = 1.0 / std::sqrt(static_cast<double>(cin * k));
    w = reg.add(name + ".w", randn_leaf({cout, cin, k}, rng, s));
    b = reg.add(name + ".b", constant({cout}, 0.0));
}

Var Conv1d::forward(const Var& x) const { return conv1d(x, w, b, dilation); }

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int cin, int cout, int kh, int kw,
               Rng& rng) {
    double s = 1.0 / std::sqrt(static_cast<double>(cin * kh * kw));
    w = reg.add(name + ".w", randn_leaf({cout, cin, kh, kw}, rng, s));
    b = reg.add(name + ".b", constant({cout}, 0.0));
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, w, b); }

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& name, int dim) {
    gain = reg.add(name + ".gain", constant({dim}, 1.0));
    bias = reg.add(name + ".bias", constant({dim}, 0.0));
}

Var LayerNorm::forward(const Var& x) const { return layer_norm_rows(x, gain, bias); }

SEBlock::SEBlock(ParamRegistry& reg, const std::string& name, int channels, int reduced, Rng& rng)
    : fc1(reg, name + ".fc1", channels, reduced, rng),
      fc2(reg, name + ".fc2", reduced, channels, rng) {}

Var SEBlock::gates(const Var& x, int valid_w) const {
    Var pooled = reshape(mean_hw_masked(x, valid_w), {1, x->dim(0)});
    Var h = relu_v(fc1.forward(pooled));
    Var g = sigmoid_v(fc2.forward(h));
    return reshape(g, {x->dim(0)});
}

Var SEBlock::forward(const Var& x, int valid_w) const {
    return mul_channel3(x, gates(x, valid_w));
}

SelfAttention::SelfAttention(ParamRegistry& reg, const std::string& name, int d, int h, Rng& rng)
    : heads(h), dim(d) {
    if (d % h != 0) throw std::invalid_argument("SelfAttention: dim must be divisible by heads");
    wq = Linear(reg, name + ".wq", d, d, rng);
    wk = Linear(reg, name + ".wk", d, d, rng);
    wv = Linear(reg, name + ".wv", d, d, rng);
    wo = Linear(reg, name + ".wo", d, d, rng);
}

Var SelfAttention::forward(const Var& x, bool causal) const {
    int T = x->dim(0);
    int dh = dim / heads;
    Var q = wq.forward(x);
    Var k = wk.forward(x);
    Var v = wv.forward(x);
    Var mask;
    if (causal) {
        std::vector<double> m(static_cast<size_t>(T) * T, 0.0);
        for (int i = 0; i < T; ++i)
            for (int j = i + 1; j < T; ++j) m[static_cast<size_t>(i) * T + j] = -1e9;
        mask = constant({T, T}, m);
    }
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (causal) scores = add(scores, mask);
        Var attn = softmax_rows(scores);
        outs.push_back(matmul(attn, vh));
    }
    return wo.forward(concat_cols(outs));
}

TransformerBlock::TransformerBlock(ParamRegistry& reg, const std::string& name, int dim, int heads,
                                   int mlp_hidden, Rng& rng)
    : ln1(reg, name + ".ln1", dim),
      ln2(reg, name + ".ln2", dim),
      attn(reg, name + ".attn", dim, heads, rng),
      mlp1(reg, name + ".mlp1", dim, mlp_hidden, rng),
      mlp2(reg, name + ".mlp2", mlp_hidden, dim, rng) {}

Var TransformerBlock::forward(const Var& x, bool causal) const {
    Var h = add(x, attn.forward(ln1.forward(x), causal));
    Var m = mlp2.forward(relu_v(mlp1.forward(ln2.forward(h))));
    return add(h, m);
}

std::vector<double> sinusoid_table(int n, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoid_table: dim must be even");
    std::vector<double> t(static_cast<size_t>(n) * dim);
    for (int pos = 0; pos < n; ++pos)
        for (int i = 0; i < dim / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / dim);
            t[static_cast<size_t>(pos) * dim + 2 * i] = std::sin(pos * freq);
            t[static_cast<size_t>(pos) * dim + 2 * i + 1] = std::cos(pos * freq);
        }
    return t;
}

}  // namespace nn
}  // namespace difftts
