#include "symlab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace symlab {

namespace {
std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(product(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(product(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != product(shape))
    throw TensorError("data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw TensorError("rows(): tensor is not 2-d, shape " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw TensorError("cols(): tensor is not 2-d, shape " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
  return t;
}

void Tensor::check_finite(const char* what) const {
  for (double v : data)
    if (!std::isfinite(v)) throw TensorError(std::string(what) + ": non-finite value");
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace kernels {

namespace {
void require_2d(const Tensor& t, const char* name) {
  if (t.rank() != 2) throw TensorError(std::string(name) + ": expected 2-d tensor");
}
void require_same_shape(const Tensor& a, const Tensor& b, const char* name) {
  if (!a.same_shape(b))
    throw TensorError(std::string(name) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k)
    throw TensorError("matmul: inner extents differ, " + shape_str(a.shape) + " x " +
                      shape_str(b.shape));
  Tensor out({m, n});
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = out.data.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    const double* arow = A + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = B + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_serial(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_serial");
  require_2d(b, "matmul_serial");
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k)
    throw TensorError("matmul_serial: inner extents differ, " + shape_str(a.shape) + " x " +
                      shape_str(b.shape));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a.data[i * k + kk];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += av * b.data[kk * n + j];
    }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  if (b.shape[1] != k)
    throw TensorError("matmul_nt: inner extents differ, " + shape_str(a.shape) + " x " +
                      shape_str(b.shape) + "^T");
  Tensor out({m, n});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * k;
    double* crow = out.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data.data() + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_tn");
  require_2d(b, "matmul_tn");
  const std::size_t k = a.shape[0], m = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k)
    throw TensorError("matmul_tn: inner extents differ, " + shape_str(a.shape) + "^T x " +
                      shape_str(b.shape));
  Tensor out({m, n});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a.data[kk * m + i];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  if (bias.size() != x.cols())
    throw TensorError("add_bias: bias length " + std::to_string(bias.size()) +
                      " vs cols " + std::to_string(x.cols()));
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) += bias.data[j];
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = out.data.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return out;
}

Tensor softmax_rows_causal(const Tensor& x) {
  require_2d(x, "softmax_rows_causal");
  if (x.rows() != x.cols()) throw TensorError("softmax_rows_causal: matrix must be square");
  Tensor out({x.rows(), x.cols()});
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* in = x.data.data() + i * n;
    double* row = out.data.data() + i * n;
    double mx = in[0];
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      row[j] = std::exp(in[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j <= i; ++j) row[j] /= sum;
  }
  return out;
}

Tensor rmsnorm_rows(const Tensor& x, double eps) {
  require_2d(x, "rmsnorm_rows");
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = out.data.data() + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += row[j] * row[j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
  return out;
}

Tensor layernorm_rows(const Tensor& x, double eps) {
  require_2d(x, "layernorm_rows");
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = out.data.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) row[j] = (row[j] - mean) * inv;
  }
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) {
    const double u = kGeluC * (v + 0.044715 * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return out;
}

Tensor gelu_grad(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) {
    const double x3 = 0.044715 * v * v * v;
    const double u = kGeluC * (v + x3);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
    v = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_lookup");
  const std::size_t v = table.rows(), d = table.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw TensorError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range " +
                        std::to_string(v));
    const double* src = table.data.data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(src, src + d, out.data.data() + i * d);
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  require_2d(x, "log_softmax_rows");
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = out.data.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) row[j] -= lse;
  }
  return out;
}

double cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets) {
  require_2d(logits, "cross_entropy_logits");
  if (targets.size() != logits.rows())
    throw TensorError("cross_entropy_logits: target count mismatch");
  Tensor ls = log_softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= logits.cols())
      throw TensorError("cross_entropy_logits: target out of range");
    loss -= ls.at(i, static_cast<std::size_t>(targets[i]));
  }
  return loss / static_cast<double>(targets.size());
}

}  // namespace kernels
}  // namespace symlab
