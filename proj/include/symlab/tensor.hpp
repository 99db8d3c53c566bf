#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace symlab {

/// Error type for all shape/domain violations in the numeric core.
class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major tensor of doubles. Shapes are explicit extents;
/// no broadcasting beyond the bias-add kernels below.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, double fill);
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }
  static Tensor identity(std::size_t n);

  /// Throws TensorError if any element is NaN/Inf.
  void check_finite(const char* what) const;
};

std::string shape_str(const std::vector<std::size_t>& s);

namespace kernels {

// Matrix products. The non-suffixed versions are OpenMP-parallel over
// output rows (deterministic: each element is reduced in fixed k-order
// by exactly one thread). matmul_serial is the reference kept for tests
// and the kernel benchmark.
Tensor matmul(const Tensor& a, const Tensor& b);         // [m,k]x[k,n]
Tensor matmul_serial(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);      // [m,k]x[n,k]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);      // [k,m]^T x [k,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// Adds a length-n bias row to every row of an [m,n] matrix.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Row-wise softmax with max-subtraction. Rows sum to 1.
Tensor softmax_rows(const Tensor& x);

/// Softmax over each row restricted to columns [0, row]; columns above
/// the diagonal are exactly 0 (causal mask).
Tensor softmax_rows_causal(const Tensor& x);

/// x / rms(x) per row, no affine term.
Tensor rmsnorm_rows(const Tensor& x, double eps = 1e-8);

/// (x - mean) / std per row, no affine term.
Tensor layernorm_rows(const Tensor& x, double eps = 1e-8);

/// tanh-approximation GELU, elementwise.
Tensor gelu(const Tensor& x);
Tensor gelu_grad(const Tensor& x);

/// Gathers rows of table by id; table is [V,d].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

/// Mean cross-entropy of row-wise logits against integer targets.
double cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets);

/// Row-wise log-softmax.
Tensor log_softmax_rows(const Tensor& x);

}  // namespace kernels
}  // namespace symlab
