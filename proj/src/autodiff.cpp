#include "symlab/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace symlab::ad {

namespace k = symlab::kernels;

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad = Tensor(n->value.shape);
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->value.check_finite("op result");
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->grad = Tensor(n->value.shape);
    n->backprop = std::move(backprop);
  }
  return n;
}

void topo(const Var& v, std::unordered_set<Node*>& seen, std::vector<Var>& order) {
  if (!v->requires_grad || seen.count(v.get())) return;
  seen.insert(v.get());
  for (const auto& p : v->parents) topo(p, seen, order);
  order.push_back(v);
}

void acc(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

void backward(const Var& root) {
  if (root->value.size() != 1) throw TensorError("backward: root must be scalar");
  if (!root->requires_grad) return;
  std::unordered_set<Node*> seen;
  std::vector<Var> order;
  topo(root, seen, order);
  root->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

Var matmul(const Var& a, const Var& b) {
  Tensor y = k::matmul(a->value, b->value);
  return make_op(std::move(y), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) acc(a->grad, k::matmul_nt(n.grad, b->value));
    if (b->requires_grad) acc(b->grad, k::matmul_tn(a->value, n.grad));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor y = k::matmul_nt(a->value, b->value);
  return make_op(std::move(y), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) acc(a->grad, k::matmul(n.grad, b->value));
    if (b->requires_grad) acc(b->grad, k::matmul_tn(n.grad, a->value));
  });
}

Var add(const Var& a, const Var& b) {
  return make_op(k::add(a->value, b->value), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) acc(a->grad, n.grad);
    if (b->requires_grad) acc(b->grad, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  return make_op(k::sub(a->value, b->value), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) acc(a->grad, n.grad);
    if (b->requires_grad)
      for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad.data[i] -= n.grad.data[i];
  });
}

Var mul(const Var& a, const Var& b) {
  return make_op(k::mul(a->value, b->value), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) acc(a->grad, k::mul(n.grad, b->value));
    if (b->requires_grad) acc(b->grad, k::mul(n.grad, a->value));
  });
}

Var scale(const Var& a, double c) {
  return make_op(k::scale(a->value, c), {a}, [a, c](Node& n) {
    if (a->requires_grad) acc(a->grad, k::scale(n.grad, c));
  });
}

Var add_bias(const Var& x, const Var& bias) {
  return make_op(k::add_bias(x->value, bias->value), {x, bias}, [x, bias](Node& n) {
    if (x->requires_grad) acc(x->grad, n.grad);
    if (bias->requires_grad) {
      const std::size_t m = n.grad.rows(), c = n.grad.cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) bias->grad.data[j] += n.grad.at(i, j);
    }
  });
}

Var softmax_rows(const Var& x) {
  Tensor p = k::softmax_rows(x->value);
  return make_op(p, {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    const std::size_t m = n.value.rows(), c = n.value.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::size_t j = 0; j < c; ++j)
        x->grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

Var softmax_rows_causal(const Var& x) {
  Tensor p = k::softmax_rows_causal(x->value);
  return make_op(p, {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    const std::size_t m = n.value.rows();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::size_t j = 0; j <= i; ++j)
        x->grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

Var rmsnorm_rows(const Var& x) {
  Tensor y = k::rmsnorm_rows(x->value);
  return make_op(y, {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    const std::size_t m = n.value.rows(), c = n.value.cols();
    const double eps = 1e-8;
    for (std::size_t i = 0; i < m; ++i) {
      double ss = 0.0;
      for (std::size_t j = 0; j < c; ++j) ss += x->value.at(i, j) * x->value.at(i, j);
      const double r = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
      double gx = 0.0;
      for (std::size_t j = 0; j < c; ++j) gx += n.grad.at(i, j) * x->value.at(i, j);
      const double coef = r * r * r * gx / static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j)
        x->grad.at(i, j) += r * n.grad.at(i, j) - coef * x->value.at(i, j);
    }
  });
}

Var layernorm_rows(const Var& x) {
  Tensor y = k::layernorm_rows(x->value);
  return make_op(y, {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    const std::size_t m = n.value.rows(), c = n.value.cols();
    const double eps = 1e-8;
    const double nn = static_cast<double>(c);
    for (std::size_t i = 0; i < m; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < c; ++j) mean += x->value.at(i, j);
      mean /= nn;
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j)
        var += (x->value.at(i, j) - mean) * (x->value.at(i, j) - mean);
      var /= nn;
      const double inv = 1.0 / std::sqrt(var + eps);
      double gmean = 0.0, gdot = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        gmean += n.grad.at(i, j);
        gdot += n.grad.at(i, j) * n.value.at(i, j);
      }
      gmean /= nn;
      gdot /= nn;
      for (std::size_t j = 0; j < c; ++j)
        x->grad.at(i, j) += inv * (n.grad.at(i, j) - gmean - n.value.at(i, j) * gdot);
    }
  });
}

Var gelu(const Var& x) {
  Tensor y = k::gelu(x->value);
  return make_op(y, {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    Tensor g = k::gelu_grad(x->value);
    acc(x->grad, k::mul(n.grad, g));
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  Tensor y = k::embedding_lookup(table->value, ids);
  return make_op(y, {table}, [table, ids](Node& n) {
    if (!table->requires_grad) return;
    const std::size_t d = table->value.cols();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        table->grad.data[static_cast<std::size_t>(ids[i]) * d + j] += n.grad.at(i, j);
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t len) {
  const std::size_t m = x->value.rows(), c = x->value.cols();
  if (start + len > c) throw TensorError("slice_cols: out of range");
  Tensor y({m, len});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(x->value.data.data() + i * c + start, x->value.data.data() + i * c + start + len,
              y.data.data() + i * len);
  return make_op(std::move(y), {x}, [x, start, len](Node& n) {
    if (!x->requires_grad) return;
    const std::size_t m = x->value.rows(), c = x->value.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < len; ++j) x->grad.data[i * c + start + j] += n.grad.at(i, j);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw TensorError("concat_cols: empty");
  const std::size_t m = parts[0]->value.rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != m) throw TensorError("concat_cols: row mismatch");
    total += p->value.cols();
  }
  Tensor y({m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p->value.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p->value.data.data() + i * c, p->value.data.data() + (i + 1) * c,
                y.data.data() + i * total + off);
    off += c;
  }
  std::vector<Var> parents = parts;
  return make_op(std::move(y), std::move(parents), [parts, total](Node& n) {
    std::size_t off = 0;
    const std::size_t m = n.value.rows();
    for (const auto& p : parts) {
      const std::size_t c = p->value.cols();
      if (p->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j)
            p->grad.data[i * c + j] += n.grad.data[i * total + off + j];
      off += c;
    }
  });
}

Var select_rows(const Var& x, const std::vector<std::size_t>& rows) {
  const std::size_t c = x->value.cols();
  Tensor y({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x->value.rows()) throw TensorError("select_rows: out of range");
    std::copy(x->value.data.data() + rows[i] * c, x->value.data.data() + (rows[i] + 1) * c,
              y.data.data() + i * c);
  }
  return make_op(std::move(y), {x}, [x, rows](Node& n) {
    if (!x->requires_grad) return;
    const std::size_t c = x->value.cols();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) x->grad.data[rows[i] * c + j] += n.grad.at(i, j);
  });
}

Tensor rotary_forward(const Tensor& x, const std::vector<std::size_t>& positions, double base) {
  const std::size_t m = x.rows(), d = x.cols();
  if (positions.size() != m) throw TensorError("rotary: position count mismatch");
  if (d % 2 != 0) throw TensorError("rotary: odd dimension");
  Tensor y = x;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = static_cast<double>(positions[i]);
    for (std::size_t j = 0; j < d / 2; ++j) {
      const double theta = p * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
      const double c = std::cos(theta), s = std::sin(theta);
      const double x0 = x.at(i, 2 * j), x1 = x.at(i, 2 * j + 1);
      y.at(i, 2 * j) = x0 * c - x1 * s;
      y.at(i, 2 * j + 1) = x0 * s + x1 * c;
    }
  }
  return y;
}

Var rotary(const Var& x, const std::vector<std::size_t>& positions, double base) {
  Tensor y = rotary_forward(x->value, positions, base);
  return make_op(std::move(y), {x}, [x, positions, base](Node& n) {
    if (!x->requires_grad) return;
    // inverse rotation applied to the upstream gradient
    const std::size_t m = n.value.rows(), d = n.value.cols();
    for (std::size_t i = 0; i < m; ++i) {
      const double p = static_cast<double>(positions[i]);
      for (std::size_t j = 0; j < d / 2; ++j) {
        const double theta =
            p * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
        const double c = std::cos(theta), s = std::sin(theta);
        const double g0 = n.grad.at(i, 2 * j), g1 = n.grad.at(i, 2 * j + 1);
        x->grad.at(i, 2 * j) += g0 * c + g1 * s;
        x->grad.at(i, 2 * j + 1) += -g0 * s + g1 * c;
      }
    }
  });
}

Var sum_squares(const Var& x) {
  double v = 0.0;
  for (double e : x->value.data) v += e * e;
  return make_op(Tensor({1, 1}, {v}), {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    const double g = n.grad.data[0];
    for (std::size_t i = 0; i < x->value.size(); ++i)
      x->grad.data[i] += 2.0 * g * x->value.data[i];
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
  const double loss = k::cross_entropy_logits(logits->value, targets);
  return make_op(Tensor({1, 1}, {loss}), {logits}, [logits, targets](Node& n) {
    if (!logits->requires_grad) return;
    Tensor p = k::softmax_rows(logits->value);
    const double g = n.grad.data[0] / static_cast<double>(targets.size());
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) logits->grad.at(i, j) += g * p.at(i, j);
      logits->grad.at(i, static_cast<std::size_t>(targets[i])) -= g;
    }
  });
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps) {
  Var vx = leaf(x);
  Var y = f(vx);
  if (!std::isfinite(y->value.data[0])) throw TensorError("grad_check: non-finite f(x)");
  backward(y);
  Tensor analytic = vx->grad;

  double max_rel = 0.0;
  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp.data[i];
    xp.data[i] = orig + eps;
    const double fp = f(constant(xp))->value.data[0];
    xp.data[i] = orig - eps;
    const double fm = f(constant(xp))->value.data[0];
    xp.data[i] = orig;
    const double num = (fp - fm) / (2.0 * eps);
    const double a = analytic.data[i];
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-4});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace symlab::ad
