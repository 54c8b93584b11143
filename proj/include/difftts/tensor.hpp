#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "difftts/rng.hpp"

namespace difftts {

// Reverse-mode autodiff over dense double tensors. Graphs are built per
// forward pass; backward() walks the tape in reverse topological order.
// Everything is 64-bit so analytic gradients can be checked against central
// finite differences at tight tolerances.
class Tensor;
using Var = std::shared_ptr<Tensor>;

class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;

    std::vector<Var> parents;
    std::function<void()> backprop;  // accumulate this->grad into parents

    Tensor() = default;
    Tensor(std::vector<int> s, double fill = 0.0);

    size_t numel() const { return val.size(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    void ensure_grad();
    void zero_grad();
};

// ---- construction ----
Var constant(std::vector<int> shape, double fill = 0.0);
Var constant(std::vector<int> shape, const std::vector<double>& values);
Var scalar(double v);
Var leaf(std::vector<int> shape, const std::vector<double>& values);  // requires_grad
Var randn_leaf(std::vector<int> shape, Rng& rng, double scale);

// ---- elementwise ----
Var add(const Var& a, const Var& b);        // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);        // same shape
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var tanh_v(const Var& a);
Var sigmoid_v(const Var& a);
Var relu_v(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var square_v(const Var& a);

// ---- shape / structure ----
Var transpose(const Var& a);                              // (R,C) -> (C,R)
Var slice_cols(const Var& a, int c0, int c1);             // (R,C) -> (R,c1-c0)
Var slice_rows(const Var& a, int r0, int r1);             // (R,C) -> (r1-r0,C)
Var concat_cols(const std::vector<Var>& parts);           // same R
Var concat_rows(const std::vector<Var>& parts);           // same C
Var reshape(const Var& a, std::vector<int> shape);        // same numel

// repeat row i of a (L,D) matrix counts[i] times; sum(counts) rows out
Var repeat_rows(const Var& a, const std::vector<int>& counts);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                   // (M,K)x(K,N)

// ---- broadcast adds (explicit, no silent broadcasting) ----
Var add_rowvec(const Var& x, const Var& v);   // x:(R,C) + v:(C) on every row
Var add_colvec(const Var& x, const Var& v);   // x:(R,C) + v:(R) on every col
Var mul_colvec(const Var& x, const Var& v);   // x:(R,C) * v:(R) per row/channel

// ---- reductions ----
Var sum_all(const Var& a);                    // -> (1)
Var mean_all(const Var& a);                   // -> (1)
Var mean_cols(const Var& a, int valid_cols);  // (R,C) -> (R), mean over first valid_cols
Var sum_rows_weighted(const Var& a, const std::vector<double>& w);  // (R,C)->(C), sum_i w[i]*row_i

// ---- row-wise softmax machinery ----
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// negative log-likelihood of targets[i] per row, weighted; -> (1)
// weights typically 1/num_active for masked mean
Var nll_pick(const Var& logp, const std::vector<int>& targets,
             const std::vector<double>& weights);

// ---- normalization ----
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// ---- lookup ----
Var embedding(const Var& table, const std::vector<int>& ids);  // (V,D),(n) -> (n,D)

// ---- convolutions (channels x time / channels x H x W, symmetric zero pad) ----
Var conv1d(const Var& x, const Var& w, const Var& b, int dilation);
// x:(Cin,T) w:(Cout,Cin,K) b:(Cout) K odd -> (Cout,T)
// pre-activation additive bias over the conv output may be fused by caller with add()

Var conv2d(const Var& x, const Var& w, const Var& b);
// x:(Cin,H,W) w:(Cout,Cin,Kh,Kw) b:(Cout), Kh/Kw odd, stride 1 -> (Cout,H,W)

// ---- 3D helpers for the 2D-conv encoder path ----
Var mean_over_w(const Var& x, int valid_w);      // (C,H,W) -> (C,H)
Var zero_after_w(const Var& x, int valid_w);     // zero out columns w >= valid_w
Var mul_channel3(const Var& x, const Var& s);    // (C,H,W) * s:(C)
Var mean_hw(const Var& x);                       // (C,H,W) -> (C)
Var mean_hw_masked(const Var& x, int valid_w);   // mean over H x [0,valid_w)

// ---- graph ----
void backward(const Var& root);                  // root must be scalar shape (1)

// finite-difference gradient of f at leaf x (central differences, step h)
std::vector<double> finite_difference(const std::function<double()>& eval_loss,
                                      Var x, double h = 1e-5);

}  // namespace difftts
