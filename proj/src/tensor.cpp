#include "difftts/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace difftts {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= static_cast<size_t>(d);
    }
    return n;
}

Var make_node(std::vector<int> shape, std::vector<Var> parents) {
    auto out = std::make_shared<Tensor>(std::move(shape));
    out->parents = std::move(parents);
    for (const auto& p : out->parents)
        if (p->requires_grad) out->requires_grad = true;
    return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), val(shape_numel(shape), fill) {}

void Tensor::ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(val.size(), 0.0); }

Var constant(std::vector<int> shape, double fill) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}

Var constant(std::vector<int> shape, const std::vector<double>& values) {
    auto t = std::make_shared<Tensor>(std::move(shape));
    if (t->val.size() != values.size())
        throw std::invalid_argument("constant: value count does not match shape");
    t->val = values;
    return t;
}

Var scalar(double v) { return constant({1}, std::vector<double>{v}); }

Var leaf(std::vector<int> shape, const std::vector<double>& values) {
    auto t = constant(std::move(shape), values);
    t->requires_grad = true;
    return t;
}

Var randn_leaf(std::vector<int> shape, Rng& rng, double scale) {
    auto t = std::make_shared<Tensor>(std::move(shape));
    for (auto& v : t->val) v = rng.normal() * scale;
    t->requires_grad = true;
    return t;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    auto out = make_node(a->shape, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] + b->val[i];
    Tensor* o = out.get();
    Tensor* pa = a.get();
    Tensor* pb = b.get();
    out->backprop = [o, pa, pb] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) pa->grad[i] += o->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) pb->grad[i] += o->grad[i];
        }
    };
    return out;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    auto out = make_node(a->shape, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] - b->val[i];
    Tensor* o = out.get();
    Tensor* pa = a.get();
    Tensor* pb = b.get();
    out->backprop = [o, pa, pb] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) pa->grad[i] += o->grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) pb->grad[i] -= o->grad[i];
        }
    };
    return out;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node(a->shape, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] * b->val[i];
    Tensor* o = out.get();
    Tensor* pa = a.get();
    Tensor* pb = b.get();
    out->backprop = [o, pa, pb] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) pa->grad[i] += o->grad[i] * pb->val[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) pb->grad[i] += o->grad[i] * pa->val[i];
        }
    };
    return out;
}

Var scale(const Var& a, double s) {
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] * s;
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, s] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i) pa->grad[i] += o->grad[i] * s;
    };
    return out;
}

Var add_scalar(const Var& a, double s) {
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] + s;
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i) pa->grad[i] += o->grad[i];
    };
    return out;
}

namespace {

template <typename F, typename DF>
Var unary_op(const Var& a, F f, DF dfdx_from_out) {
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->val[i] = f(a->val[i]);
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, dfdx_from_out] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i)
            pa->grad[i] += o->grad[i] * dfdx_from_out(pa->val[i], o->val[i]);
    };
    return out;
}

}  // namespace

Var tanh_v(const Var& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid_v(const Var& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Var relu_v(const Var& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp_v(const Var& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Var log_v(const Var& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var square_v(const Var& a) {
    return unary_op(a, [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// shape / structure
// ---------------------------------------------------------------------------

Var transpose(const Var& a) {
    if (a->ndim() != 2) throw std::invalid_argument("transpose: expects 2D");
    int R = a->dim(0), C = a->dim(1);
    auto out = make_node({C, R}, {a});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out->val[static_cast<size_t>(c) * R + r] = a->val[static_cast<size_t>(r) * C + c];
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, R, C] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                pa->grad[static_cast<size_t>(r) * C + c] +=
                    o->grad[static_cast<size_t>(c) * R + r];
    };
    return out;
}

Var slice_cols(const Var& a, int c0, int c1) {
    if (a->ndim() != 2) throw std::invalid_argument("slice_cols: expects 2D");
    int R = a->dim(0), C = a->dim(1);
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    int W = c1 - c0;
    auto out = make_node({R, W}, {a});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < W; ++c)
            out->val[static_cast<size_t>(r) * W + c] = a->val[static_cast<size_t>(r) * C + c0 + c];
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, R, C, W, c0] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c)
                pa->grad[static_cast<size_t>(r) * C + c0 + c] +=
                    o->grad[static_cast<size_t>(r) * W + c];
    };
    return out;
}

Var slice_rows(const Var& a, int r0, int r1) {
    if (a->ndim() != 2) throw std::invalid_argument("slice_rows: expects 2D");
    int R = a->dim(0), C = a->dim(1);
    if (r0 < 0 || r1 > R || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    int H = r1 - r0;
    auto out = make_node({H, C}, {a});
    std::copy(a->val.begin() + static_cast<size_t>(r0) * C,
              a->val.begin() + static_cast<size_t>(r1) * C, out->val.begin());
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, C, H, r0] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < static_cast<size_t>(H) * C; ++i)
            pa->grad[static_cast<size_t>(r0) * C + i] += o->grad[i];
    };
    return out;
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int R = parts[0]->dim(0);
    int C = 0;
    for (const auto& p : parts) {
        if (p->ndim() != 2 || p->dim(0) != R)
            throw std::invalid_argument("concat_cols: row mismatch");
        C += p->dim(1);
    }
    auto out = make_node({R, C}, parts);
    int off = 0;
    for (const auto& p : parts) {
        int W = p->dim(1);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c)
                out->val[static_cast<size_t>(r) * C + off + c] =
                    p->val[static_cast<size_t>(r) * W + c];
        off += W;
    }
    Tensor* o = out.get();
    std::vector<Tensor*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    out->backprop = [o, raw, R, C] {
        int off2 = 0;
        for (Tensor* p : raw) {
            int W = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < W; ++c)
                        p->grad[static_cast<size_t>(r) * W + c] +=
                            o->grad[static_cast<size_t>(r) * C + off2 + c];
            }
            off2 += W;
        }
    };
    return out;
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int C = parts[0]->dim(1);
    int R = 0;
    for (const auto& p : parts) {
        if (p->ndim() != 2 || p->dim(1) != C)
            throw std::invalid_argument("concat_rows: column mismatch");
        R += p->dim(0);
    }
    auto out = make_node({R, C}, parts);
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->val.begin(), p->val.end(), out->val.begin() + off);
        off += p->numel();
    }
    Tensor* o = out.get();
    std::vector<Tensor*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    out->backprop = [o, raw] {
        size_t off2 = 0;
        for (Tensor* p : raw) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < p->val.size(); ++i) p->grad[i] += o->grad[off2 + i];
            }
            off2 += p->val.size();
        }
    };
    return out;
}

Var reshape(const Var& a, std::vector<int> shape) {
    if (shape_numel(shape) != a->numel())
        throw std::invalid_argument("reshape: numel mismatch");
    auto out = make_node(std::move(shape), {a});
    out->val = a->val;
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i) pa->grad[i] += o->grad[i];
    };
    return out;
}

Var repeat_rows(const Var& a, const std::vector<int>& counts) {
    if (a->ndim() != 2) throw std::invalid_argument("repeat_rows: expects 2D");
    int L = a->dim(0), D = a->dim(1);
    if (static_cast<int>(counts.size()) != L)
        throw std::invalid_argument("repeat_rows: counts length mismatch");
    int total = 0;
    for (int c : counts) {
        if (c < 0) throw std::invalid_argument("repeat_rows: negative count");
        total += c;
    }
    auto out = make_node({total, D}, {a});
    int r = 0;
    for (int i = 0; i < L; ++i)
        for (int k = 0; k < counts[i]; ++k, ++r)
            std::copy(a->val.begin() + static_cast<size_t>(i) * D,
                      a->val.begin() + static_cast<size_t>(i + 1) * D,
                      out->val.begin() + static_cast<size_t>(r) * D);
    Tensor* o = out.get();
    Tensor* pa = a.get();
    auto cc = counts;
    out->backprop = [o, pa, cc, D] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        int r2 = 0;
        for (size_t i = 0; i < cc.size(); ++i)
            for (int k = 0; k < cc[i]; ++k, ++r2)
                for (int d = 0; d < D; ++d)
                    pa->grad[i * D + d] += o->grad[static_cast<size_t>(r2) * D + d];
    };
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->dim(1) != b->dim(0))
        throw std::invalid_argument("matmul: incompatible shapes");
    int M = a->dim(0), K = a->dim(1), N = b->dim(1);
    auto out = make_node({M, N}, {a, b});
    const double* A = a->val.data();
    const double* B = b->val.data();
    double* O = out->val.data();
    for (int m = 0; m < M; ++m) {
        for (int k = 0; k < K; ++k) {
            double av = A[static_cast<size_t>(m) * K + k];
            if (av == 0.0) continue;
            const double* Brow = B + static_cast<size_t>(k) * N;
            double* Orow = O + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) Orow[n] += av * Brow[n];
        }
    }
    Tensor* o = out.get();
    Tensor* pa = a.get();
    Tensor* pb = b.get();
    out->backprop = [o, pa, pb, M, K, N] {
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA = dO * B^T
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n) {
                    double g = o->grad[static_cast<size_t>(m) * N + n];
                    if (g == 0.0) continue;
                    for (int k = 0; k < K; ++k)
                        pa->grad[static_cast<size_t>(m) * K + k] +=
                            g * pb->val[static_cast<size_t>(k) * N + n];
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            // dB = A^T * dO
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k) {
                    double av = pa->val[static_cast<size_t>(m) * K + k];
                    if (av == 0.0) continue;
                    for (int n = 0; n < N; ++n)
                        pb->grad[static_cast<size_t>(k) * N + n] +=
                            av * o->grad[static_cast<size_t>(m) * N + n];
                }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// broadcast adds
// ---------------------------------------------------------------------------

Var add_rowvec(const Var& x, const Var& v) {
    if (x->ndim() != 2 || v->ndim() != 1 || v->dim(0) != x->dim(1))
        throw std::invalid_argument("add_rowvec: shapes");
    int R = x->dim(0), C = x->dim(1);
    auto out = make_node(x->shape, {x, v});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out->val[static_cast<size_t>(r) * C + c] =
                x->val[static_cast<size_t>(r) * C + c] + v->val[c];
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* pv = v.get();
    out->backprop = [o, px, pv, R, C] {
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) px->grad[i] += o->grad[i];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) pv->grad[c] += o->grad[static_cast<size_t>(r) * C + c];
        }
    };
    return out;
}

Var add_colvec(const Var& x, const Var& v) {
    if (x->ndim() != 2 || v->ndim() != 1 || v->dim(0) != x->dim(0))
        throw std::invalid_argument("add_colvec: shapes");
    int R = x->dim(0), C = x->dim(1);
    auto out = make_node(x->shape, {x, v});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out->val[static_cast<size_t>(r) * C + c] =
                x->val[static_cast<size_t>(r) * C + c] + v->val[r];
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* pv = v.get();
    out->backprop = [o, px, pv, R, C] {
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) px->grad[i] += o->grad[i];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) pv->grad[r] += o->grad[static_cast<size_t>(r) * C + c];
        }
    };
    return out;
}

Var mul_colvec(const Var& x, const Var& v) {
    if (x->ndim() != 2 || v->ndim() != 1 || v->dim(0) != x->dim(0))
        throw std::invalid_argument("mul_colvec: shapes");
    int R = x->dim(0), C = x->dim(1);
    auto out = make_node(x->shape, {x, v});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out->val[static_cast<size_t>(r) * C + c] =
                x->val[static_cast<size_t>(r) * C + c] * v->val[r];
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* pv = v.get();
    out->backprop = [o, px, pv, R, C] {
        if (px->requires_grad) {
            px->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    px->grad[static_cast<size_t>(r) * C + c] +=
                        o->grad[static_cast<size_t>(r) * C + c] * pv->val[r];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    pv->grad[r] += o->grad[static_cast<size_t>(r) * C + c] *
                                   px->val[static_cast<size_t>(r) * C + c];
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
    auto out = make_node({1}, {a});
    double s = 0.0;
    for (double v : a->val) s += v;
    out->val[0] = s;
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < pa->val.size(); ++i) pa->grad[i] += o->grad[0];
    };
    return out;
}

Var mean_all(const Var& a) {
    if (a->numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a->numel()));
}

Var mean_cols(const Var& a, int valid_cols) {
    if (a->ndim() != 2) throw std::invalid_argument("mean_cols: expects 2D");
    int R = a->dim(0), C = a->dim(1);
    if (valid_cols < 1 || valid_cols > C) throw std::invalid_argument("mean_cols: bad valid_cols");
    auto out = make_node({R}, {a});
    for (int r = 0; r < R; ++r) {
        double s = 0.0;
        for (int c = 0; c < valid_cols; ++c) s += a->val[static_cast<size_t>(r) * C + c];
        out->val[r] = s / valid_cols;
    }
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, R, C, valid_cols] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < valid_cols; ++c)
                pa->grad[static_cast<size_t>(r) * C + c] += o->grad[r] / valid_cols;
    };
    return out;
}

Var sum_rows_weighted(const Var& a, const std::vector<double>& w) {
    if (a->ndim() != 2 || static_cast<int>(w.size()) != a->dim(0))
        throw std::invalid_argument("sum_rows_weighted: shapes");
    int R = a->dim(0), C = a->dim(1);
    auto out = make_node({C}, {a});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out->val[c] += w[r] * a->val[static_cast<size_t>(r) * C + c];
    Tensor* o = out.get();
    Tensor* pa = a.get();
    auto ww = w;
    out->backprop = [o, pa, ww, R, C] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                pa->grad[static_cast<size_t>(r) * C + c] += ww[r] * o->grad[c];
    };
    return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

Var softmax_rows(const Var& a) {
    if (a->ndim() != 2) throw std::invalid_argument("softmax_rows: expects 2D");
    int R = a->dim(0), C = a->dim(1);
    auto out = make_node(a->shape, {a});
    for (int r = 0; r < R; ++r) {
        const double* x = a->val.data() + static_cast<size_t>(r) * C;
        double* y = out->val.data() + static_cast<size_t>(r) * C;
        double mx = x[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        for (int c = 0; c < C; ++c) y[c] /= z;
    }
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, R, C] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int r = 0; r < R; ++r) {
            const double* y = o->val.data() + static_cast<size_t>(r) * C;
            const double* gy = o->grad.data() + static_cast<size_t>(r) * C;
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += y[c] * gy[c];
            for (int c = 0; c < C; ++c)
                pa->grad[static_cast<size_t>(r) * C + c] += y[c] * (gy[c] - dot);
        }
    };
    return out;
}

Var log_softmax_rows(const Var& a) {
    if (a->ndim() != 2) throw std::invalid_argument("log_softmax_rows: expects 2D");
    int R = a->dim(0), C = a->dim(1);
    auto out = make_node(a->shape, {a});
    for (int r = 0; r < R; ++r) {
        const double* x = a->val.data() + static_cast<size_t>(r) * C;
        double* y = out->val.data() + static_cast<size_t>(r) * C;
        double mx = x[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(x[c] - mx);
        double lz = mx + std::log(z);
        for (int c = 0; c < C; ++c) y[c] = x[c] - lz;
    }
    Tensor* o = out.get();
    Tensor* pa = a.get();
    out->backprop = [o, pa, R, C] {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int r = 0; r < R; ++r) {
            const double* y = o->val.data() + static_cast<size_t>(r) * C;
            const double* gy = o->grad.data() + static_cast<size_t>(r) * C;
            double gsum = 0.0;
            for (int c = 0; c < C; ++c) gsum += gy[c];
            for (int c = 0; c < C; ++c)
                pa->grad[static_cast<size_t>(r) * C + c] += gy[c] - std::exp(y[c]) * gsum;
        }
    };
    return out;
}

Var nll_pick(const Var& logp, const std::vector<int>& targets,
             const std::vector<double>& weights) {
    if (logp->ndim() != 2) throw std::invalid_argument("nll_pick: expects 2D");
    int R = logp->dim(0), C = logp->dim(1);
    if (static_cast<int>(targets.size()) != R || weights.size() != targets.size())
        throw std::invalid_argument("nll_pick: target/weight length mismatch");
    auto out = make_node({1}, {logp});
    double s = 0.0;
    for (int r = 0; r < R; ++r) {
        if (weights[r] == 0.0) continue;
        if (targets[r] < 0 || targets[r] >= C) throw std::invalid_argument("nll_pick: target id out of range");
        s -= weights[r] * logp->val[static_cast<size_t>(r) * C + targets[r]];
    }
    out->val[0] = s;
    Tensor* o = out.get();
    Tensor* pl = logp.get();
    auto tt = targets;
    auto ww = weights;
    out->backprop = [o, pl, tt, ww, C] {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        for (size_t r = 0; r < tt.size(); ++r) {
            if (ww[r] == 0.0) continue;
            pl->grad[r * C + tt[r]] -= ww[r] * o->grad[0];
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
    if (x->ndim() != 2) throw std::invalid_argument("layer_norm_rows: expects 2D");
    int R = x->dim(0), C = x->dim(1);
    if (gain->numel() != static_cast<size_t>(C) || bias->numel() != static_cast<size_t>(C))
        throw std::invalid_argument("layer_norm_rows: gain/bias size");
    auto out = make_node(x->shape, {x, gain, bias});
    std::vector<double> mu(R), inv_std(R);
    for (int r = 0; r < R; ++r) {
        const double* xr = x->val.data() + static_cast<size_t>(r) * C;
        double m = 0.0;
        for (int c = 0; c < C; ++c) m += xr[c];
        m /= C;
        double v = 0.0;
        for (int c = 0; c < C; ++c) v += (xr[c] - m) * (xr[c] - m);
        v /= C;
        mu[r] = m;
        inv_std[r] = 1.0 / std::sqrt(v + eps);
        for (int c = 0; c < C; ++c)
            out->val[static_cast<size_t>(r) * C + c] =
                (xr[c] - m) * inv_std[r] * gain->val[c] + bias->val[c];
    }
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* pg = gain.get();
    Tensor* pb = bias.get();
    out->backprop = [o, px, pg, pb, R, C, mu, inv_std] {
        for (int r = 0; r < R; ++r) {
            const double* xr = px->val.data() + static_cast<size_t>(r) * C;
            const double* go = o->grad.data() + static_cast<size_t>(r) * C;
            // xhat_c = (x_c - mu) * inv_std
            if (pg->requires_grad || pb->requires_grad) {
                if (pg->requires_grad) pg->ensure_grad();
                if (pb->requires_grad) pb->ensure_grad();
                for (int c = 0; c < C; ++c) {
                    double xhat = (xr[c] - mu[r]) * inv_std[r];
                    if (pg->requires_grad) pg->grad[c] += go[c] * xhat;
                    if (pb->requires_grad) pb->grad[c] += go[c];
                }
            }
            if (px->requires_grad) {
                px->ensure_grad();
                double sum_g = 0.0, sum_gx = 0.0;
                for (int c = 0; c < C; ++c) {
                    double gg = go[c] * pg->val[c];
                    double xhat = (xr[c] - mu[r]) * inv_std[r];
                    sum_g += gg;
                    sum_gx += gg * xhat;
                }
                for (int c = 0; c < C; ++c) {
                    double gg = go[c] * pg->val[c];
                    double xhat = (xr[c] - mu[r]) * inv_std[r];
                    px->grad[static_cast<size_t>(r) * C + c] +=
                        inv_std[r] * (gg - sum_g / C - xhat * sum_gx / C);
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

Var embedding(const Var& table, const std::vector<int>& ids) {
    if (table->ndim() != 2) throw std::invalid_argument("embedding: table must be 2D");
    int V = table->dim(0), D = table->dim(1);
    int n = static_cast<int>(ids.size());
    auto out = make_node({n, D}, {table});
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= V) throw std::invalid_argument("embedding: id out of range");
        std::copy(table->val.begin() + static_cast<size_t>(ids[i]) * D,
                  table->val.begin() + static_cast<size_t>(ids[i] + 1) * D,
                  out->val.begin() + static_cast<size_t>(i) * D);
    }
    Tensor* o = out.get();
    Tensor* pt = table.get();
    auto idc = ids;
    out->backprop = [o, pt, idc, D] {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        for (size_t i = 0; i < idc.size(); ++i)
            for (int d = 0; d < D; ++d)
                pt->grad[static_cast<size_t>(idc[i]) * D + d] += o->grad[i * D + d];
    };
    return out;
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

Var conv1d(const Var& x, const Var& w, const Var& b, int dilation) {
    if (x->ndim() != 2 || w->ndim() != 3)
        throw std::invalid_argument("conv1d: x must be (Cin,T), w must be (Cout,Cin,K)");
    int Cin = x->dim(0), T = x->dim(1);
    int Cout = w->dim(0), K = w->dim(2);
    if (w->dim(1) != Cin) throw std::invalid_argument("conv1d: channel mismatch");
    if (K % 2 == 0) throw std::invalid_argument("conv1d: kernel must be odd");
    if (dilation < 1) throw std::invalid_argument("conv1d: dilation must be >= 1");
    if (b->numel() != static_cast<size_t>(Cout)) throw std::invalid_argument("conv1d: bias size");
    int half = K / 2;
    auto out = make_node({Cout, T}, {x, w, b});
    for (int co = 0; co < Cout; ++co) {
        double* orow = out->val.data() + static_cast<size_t>(co) * T;
        for (int t = 0; t < T; ++t) orow[t] = b->val[co];
        for (int ci = 0; ci < Cin; ++ci) {
            const double* xrow = x->val.data() + static_cast<size_t>(ci) * T;
            const double* wk = w->val.data() + (static_cast<size_t>(co) * Cin + ci) * K;
            for (int j = 0; j < K; ++j) {
                double wj = wk[j];
                if (wj == 0.0) continue;
                int shift = (j - half) * dilation;
                int lo = std::max(0, -shift), hi = std::min(T, T - shift);
                for (int t = lo; t < hi; ++t) orow[t] += wj * xrow[t + shift];
            }
        }
    }
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* pw = w.get();
    Tensor* pb = b.get();
    out->backprop = [o, px, pw, pb, Cin, T, Cout, K, half, dilation] {
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int co = 0; co < Cout; ++co) {
                const double* gr = o->grad.data() + static_cast<size_t>(co) * T;
                double s = 0.0;
                for (int t = 0; t < T; ++t) s += gr[t];
                pb->grad[co] += s;
            }
        }
        for (int co = 0; co < Cout; ++co) {
            const double* gr = o->grad.data() + static_cast<size_t>(co) * T;
            for (int ci = 0; ci < Cin; ++ci) {
                const double* xrow = px->val.data() + static_cast<size_t>(ci) * T;
                const double* wk = pw->val.data() + (static_cast<size_t>(co) * Cin + ci) * K;
                double* gw = pw->requires_grad
                                 ? pw->grad.data() + (static_cast<size_t>(co) * Cin + ci) * K
                                 : nullptr;
                double* gx = px->requires_grad ? px->grad.data() + static_cast<size_t>(ci) * T
                                               : nullptr;
                for (int j = 0; j < K; ++j) {
                    int shift = (j - half) * dilation;
                    int lo = std::max(0, -shift), hi = std::min(T, T - shift);
                    if (gw) {
                        double s = 0.0;
                        for (int t = lo; t < hi; ++t) s += gr[t] * xrow[t + shift];
                        gw[j] += s;
                    }
                    if (gx) {
                        double wj = wk[j];
                        if (wj != 0.0)
                            for (int t = lo; t < hi; ++t) gx[t + shift] += wj * gr[t];
                    }
                }
            }
        }
    };
    if (px->requires_grad) px->ensure_grad();
    if (pw->requires_grad) pw->ensure_grad();
    return out;
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
    if (x->ndim() != 3 || w->ndim() != 4)
        throw std::invalid_argument("conv2d: x must be (Cin,H,W), w must be (Cout,Cin,Kh,Kw)");
    int Cin = x->dim(0), H = x->dim(1), W = x->dim(2);
    int Cout = w->dim(0), Kh = w->dim(2), Kw = w->dim(3);
    if (w->dim(1) != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (Kh % 2 == 0 || Kw % 2 == 0) throw std::invalid_argument("conv2d: kernels must be odd");
    if (b->numel() != static_cast<size_t>(Cout)) throw std::invalid_argument("conv2d: bias size");
    int hh = Kh / 2, hw = Kw / 2;
    auto out = make_node({Cout, H, W}, {x, w, b});
    auto xat = [&](int c, int i, int j) -> double {
        if (i < 0 || i >= H || j < 0 || j >= W) return 0.0;
        return x->val[(static_cast<size_t>(c) * H + i) * W + j];
    };
    for (int co = 0; co < Cout; ++co)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double s = b->val[co];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int u = 0; u < Kh; ++u)
                        for (int v = 0; v < Kw; ++v)
                            s += w->val[((static_cast<size_t>(co) * Cin + ci) * Kh + u) * Kw + v] *
                                 xat(ci, i + u - hh, j + v - hw);
                out->val[(static_cast<size_t>(co) * H + i) * W + j] = s;
            }
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* pw = w.get();
    Tensor* pb = b.get();
    out->backprop = [o, px, pw, pb, Cin, H, W, Cout, Kh, Kw, hh, hw] {
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int co = 0; co < Cout; ++co) {
                double s = 0.0;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        s += o->grad[(static_cast<size_t>(co) * H + i) * W + j];
                pb->grad[co] += s;
            }
        }
        if (pw->requires_grad) pw->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (int co = 0; co < Cout; ++co)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double g = o->grad[(static_cast<size_t>(co) * H + i) * W + j];
                    if (g == 0.0) continue;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int u = 0; u < Kh; ++u) {
                            int ii = i + u - hh;
                            if (ii < 0 || ii >= H) continue;
                            for (int v = 0; v < Kw; ++v) {
                                int jj = j + v - hw;
                                if (jj < 0 || jj >= W) continue;
                                size_t widx =
                                    ((static_cast<size_t>(co) * Cin + ci) * Kh + u) * Kw + v;
                                size_t xidx = (static_cast<size_t>(ci) * H + ii) * W + jj;
                                if (pw->requires_grad) pw->grad[widx] += g * px->val[xidx];
                                if (px->requires_grad) px->grad[xidx] += g * pw->val[widx];
                            }
                        }
                }
    };
    return out;
}

// ---------------------------------------------------------------------------
// 3D helpers
// ---------------------------------------------------------------------------

Var mean_over_w(const Var& x, int valid_w) {
    if (x->ndim() != 3) throw std::invalid_argument("mean_over_w: expects 3D");
    int C = x->dim(0), H = x->dim(1), W = x->dim(2);
    if (valid_w < 1 || valid_w > W) throw std::invalid_argument("mean_over_w: bad valid_w");
    auto out = make_node({C, H}, {x});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
            double s = 0.0;
            for (int w = 0; w < valid_w; ++w)
                s += x->val[(static_cast<size_t>(c) * H + h) * W + w];
            out->val[static_cast<size_t>(c) * H + h] = s / valid_w;
        }
    Tensor* o = out.get();
    Tensor* px = x.get();
    out->backprop = [o, px, C, H, W, valid_w] {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h) {
                double g = o->grad[static_cast<size_t>(c) * H + h] / valid_w;
                for (int w = 0; w < valid_w; ++w)
                    px->grad[(static_cast<size_t>(c) * H + h) * W + w] += g;
            }
    };
    return out;
}

Var zero_after_w(const Var& x, int valid_w) {
    if (x->ndim() != 3) throw std::invalid_argument("zero_after_w: expects 3D");
    int C = x->dim(0), H = x->dim(1), W = x->dim(2);
    if (valid_w < 0 || valid_w > W) throw std::invalid_argument("zero_after_w: bad valid_w");
    auto out = make_node(x->shape, {x});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                out->val[(static_cast<size_t>(c) * H + h) * W + w] =
                    w < valid_w ? x->val[(static_cast<size_t>(c) * H + h) * W + w] : 0.0;
    Tensor* o = out.get();
    Tensor* px = x.get();
    out->backprop = [o, px, C, H, W, valid_w] {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < valid_w; ++w)
                    px->grad[(static_cast<size_t>(c) * H + h) * W + w] +=
                        o->grad[(static_cast<size_t>(c) * H + h) * W + w];
    };
    return out;
}

Var mul_channel3(const Var& x, const Var& s) {
    if (x->ndim() != 3 || s->ndim() != 1 || s->dim(0) != x->dim(0))
        throw std::invalid_argument("mul_channel3: shapes");
    int C = x->dim(0), H = x->dim(1), W = x->dim(2);
    auto out = make_node(x->shape, {x, s});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i)
            out->val[static_cast<size_t>(c) * H * W + i] =
                x->val[static_cast<size_t>(c) * H * W + i] * s->val[c];
    Tensor* o = out.get();
    Tensor* px = x.get();
    Tensor* ps = s.get();
    out->backprop = [o, px, ps, C, H, W] {
        if (px->requires_grad) {
            px->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < H * W; ++i)
                    px->grad[static_cast<size_t>(c) * H * W + i] +=
                        o->grad[static_cast<size_t>(c) * H * W + i] * ps->val[c];
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            for (int c = 0; c < C; ++c) {
                double g = 0.0;
                for (int i = 0; i < H * W; ++i)
                    g += o->grad[static_cast<size_t>(c) * H * W + i] *
                         px->val[static_cast<size_t>(c) * H * W + i];
                ps->grad[c] += g;
            }
        }
    };
    return out;
}

Var mean_hw(const Var& x) {
    if (x->ndim() != 3) throw std::invalid_argument("mean_hw: expects 3D");
    int C = x->dim(0), H = x->dim(1), W = x->dim(2);
    auto out = make_node({C}, {x});
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < H * W; ++i) s += x->val[static_cast<size_t>(c) * H * W + i];
        out->val[c] = s / (H * W);
    }
    Tensor* o = out.get();
    Tensor* px = x.get();
    out->backprop = [o, px, C, H, W] {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
            double g = o->grad[c] / (H * W);
            for (int i = 0; i < H * W; ++i) px->grad[static_cast<size_t>(c) * H * W + i] += g;
        }
    };
    return out;
}

Var mean_hw_masked(const Var& x, int valid_w) {
    if (x->ndim() != 3) throw std::invalid_argument("mean_hw_masked: expects 3D");
    int C = x->dim(0), H = x->dim(1), W = x->dim(2);
    if (valid_w < 1 || valid_w > W) throw std::invalid_argument("mean_hw_masked: bad valid_w");
    auto out = make_node({C}, {x});
    double denom = static_cast<double>(H) * valid_w;
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < valid_w; ++w)
                s += x->val[(static_cast<size_t>(c) * H + h) * W + w];
        out->val[c] = s / denom;
    }
    Tensor* o = out.get();
    Tensor* px = x.get();
    out->backprop = [o, px, C, H, W, valid_w, denom] {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int c = 0; c < C; ++c) {
            double g = o->grad[c] / denom;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < valid_w; ++w)
                    px->grad[(static_cast<size_t>(c) * H + h) * W + w] += g;
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Var& root) {
    if (root->numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* n = *it;
        if (n->backprop && n->requires_grad) {
            n->ensure_grad();
            n->backprop();
        }
    }
}

std::vector<double> finite_difference(const std::function<double()>& eval_loss, Var x, double h) {
    std::vector<double> g(x->numel());
    for (size_t i = 0; i < x->numel(); ++i) {
        double orig = x->val[i];
        x->val[i] = orig + h;
        double up = eval_loss();
        x->val[i] = orig - h;
        double dn = eval_loss();
        x->val[i] = orig;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

}  // namespace difftts
