#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "symlab/tensor.hpp"

namespace symlab::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of a reverse-mode computation graph. Values are immutable
/// once produced; grads are accumulated additively during a single
/// backward() call and must be zeroed explicitly between steps.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // pushes self.grad into parents

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

/// Reverse pass from a scalar (1x1) root. Seeds root grad with 1 and
/// accumulates into every reachable node with requires_grad.
void backward(const Var& root);

// Differentiable ops. Each forwards through the kernels in
// symlab::kernels so that autodiff and plain forwards agree bitwise.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_bias(const Var& x, const Var& bias);
Var softmax_rows(const Var& x);
Var softmax_rows_causal(const Var& x);
Var rmsnorm_rows(const Var& x);
Var layernorm_rows(const Var& x);
Var gelu(const Var& x);
Var embedding(const Var& table, const std::vector<int>& ids);
Var slice_cols(const Var& x, std::size_t start, std::size_t len);
Var concat_cols(const std::vector<Var>& parts);
Var select_rows(const Var& x, const std::vector<std::size_t>& rows);
/// Rotary position code over [seq, d] rows; row i uses angle set for
/// position positions[i].
Var rotary(const Var& x, const std::vector<std::size_t>& positions, double base = 10000.0);
Var sum_squares(const Var& x);
/// Mean cross-entropy with logits, one target id per row. Scalar output.
Var cross_entropy(const Var& logits, const std::vector<int>& targets);

Tensor rotary_forward(const Tensor& x, const std::vector<std::size_t>& positions, double base);

/// Compares reverse-mode gradient of a scalar function against central
/// finite differences. Returns max relative error with denominator
/// max(|a|,|b|,1e-4); the floor keeps round-off noise on near-zero
/// gradients from registering as spurious relative error.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace symlab::ad
