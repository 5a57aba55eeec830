#pragma once

// Reverse-mode automatic differentiation over Tensor. A Tape records the op
// graph of one forward pass; creation order is a topological order, so
// backward() walks nodes in reverse. The tape is single-writer: one training
// step owns one tape. Ops are free functions that push a node holding the
// forward value and a closure that scatters the incoming gradient to the
// node's parents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fincast/tensor.hpp"

namespace fincast::ag {

struct Value {
  int id = -1;
  bool ok() const { return id >= 0; }
};

class Tape {
 public:
  // Tracked input (parameter or constant). Gradients of leaves never touched
  // by the loss come back as exact zeros.
  Value leaf(Tensor v) { return push(std::move(v), nullptr); }

  Value push(Tensor v, std::function<void(Tape&, const Tensor&)> back) {
    nodes_.push_back(Node{std::move(v), std::move(back)});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  // For ops whose backward reads their own forward value: push first, then
  // attach a closure capturing the returned handle.
  void set_back(Value v, std::function<void(Tape&, const Tensor&)> back) {
    nodes_.at(check(v)).back = std::move(back);
  }

  const Tensor& val(Value v) const { return nodes_.at(check(v)).value; }
  size_t size() const { return nodes_.size(); }

  void backward(Value loss) {
    const Tensor& l = val(loss);
    if (!l.is_scalar())
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(l.shape));
    grads_.assign(nodes_.size(), Tensor{});
    grads_[loss.id] = Tensor::scalar_of(1.0);
    for (int i = loss.id; i >= 0; --i) {
      if (grads_[static_cast<size_t>(i)].numel() == 0) continue;
      if (nodes_[static_cast<size_t>(i)].back)
        nodes_[static_cast<size_t>(i)].back(*this, grads_[static_cast<size_t>(i)]);
    }
    have_grads_ = true;
  }

  // Gradient of the last backward() with the node's shape; zeros if the node
  // did not influence the loss.
  Tensor grad(Value v) const {
    size_t i = check(v);
    if (!have_grads_) throw std::logic_error("grad: backward() has not run on this tape");
    if (i < grads_.size() && grads_[i].numel() > 0) return grads_[i];
    return Tensor::zeros(nodes_[i].value.shape);
  }

  // Accumulate into a node's gradient buffer (used by op backward closures).
  void accum(Value v, const Tensor& g) {
    size_t i = check(v);
    if (grads_[i].numel() == 0)
      grads_[i] = g;
    else
      grads_[i] += g;
  }
  void accum(Value v, Tensor&& g) {
    size_t i = check(v);
    if (grads_[i].numel() == 0)
      grads_[i] = std::move(g);
    else
      grads_[i] += g;
  }

 private:
  struct Node {
    Tensor value;
    std::function<void(Tape&, const Tensor&)> back;
  };
  size_t check(Value v) const {
    if (!v.ok() || static_cast<size_t>(v.id) >= nodes_.size())
      throw std::logic_error("tape: value handle not on this tape");
    return static_cast<size_t>(v.id);
  }
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool have_grads_ = false;
};

namespace detail {

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D, got " + shape_str(t.shape));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// C += A * B^T  (A: m x n, B: k x n, C: m x k)
inline void gemm_nt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * n;
    double* ci = c + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* bj = b + static_cast<size_t>(j) * n;
      double acc = 0.0;
      for (int l = 0; l < n; ++l) acc += ai[l] * bj[l];
      ci[j] += acc;
    }
  }
}

// C += A^T * B  (A: m x n, B: m x k, C: n x k)
inline void gemm_tn_acc(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * n;
    const double* bi = b + static_cast<size_t>(i) * k;
    for (int l = 0; l < n; ++l) {
      const double al = ai[l];
      if (al == 0.0) continue;
      double* cl = c + static_cast<size_t>(l) * k;
      for (int j = 0; j < k; ++j) cl[j] += al * bi[j];
    }
  }
}

}  // namespace detail

// ---- core ops -------------------------------------------------------------

// (m x k) * (k x n) -> (m x n)
inline Value matmul(Tape& t, Value a, Value b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  detail::require_2d(A, "matmul");
  detail::require_2d(B, "matmul");
  if (A.cols() != B.rows())
    throw std::invalid_argument("matmul: inner dims of " + shape_str(A.shape) + " and " + shape_str(B.shape) +
                                " do not conform");
  const int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  // i-k-j order keeps the inner loop contiguous in B and C.
  for (int i = 0; i < m; ++i) {
    const double* ai = A.data.data() + static_cast<size_t>(i) * k;
    double* ci = C.data.data() + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double al = ai[l];
      if (al == 0.0) continue;
      const double* bl = B.data.data() + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
  return t.push(std::move(C), [a, b, m, k, n](Tape& tp, const Tensor& g) {
    const Tensor& A2 = tp.val(a);
    const Tensor& B2 = tp.val(b);
    Tensor ga({m, k});
    detail::gemm_nt_acc(g.data.data(), B2.data.data(), ga.data.data(), m, n, k);
    tp.accum(a, std::move(ga));
    Tensor gb({k, n});
    detail::gemm_tn_acc(A2.data.data(), g.data.data(), gb.data.data(), m, k, n);
    tp.accum(b, std::move(gb));
  });
}

inline Value transpose(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "transpose");
  const int m = A.rows(), n = A.cols();
  Tensor C({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) C.at(j, i) = A.at(i, j);
  return t.push(std::move(C), [a, m, n](Tape& tp, const Tensor& g) {
    Tensor ga({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.at(i, j) = g.at(j, i);
    tp.accum(a, std::move(ga));
  });
}

inline Value add(Tape& t, Value a, Value b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  detail::require_same_shape(A, B, "add");
  Tensor C = A;
  C += B;
  return t.push(std::move(C), [a, b](Tape& tp, const Tensor& g) {
    tp.accum(a, g);
    tp.accum(b, g);
  });
}

inline Value sub(Tape& t, Value a, Value b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  detail::require_same_shape(A, B, "sub");
  Tensor C = A;
  for (size_t i = 0; i < C.data.size(); ++i) C.data[i] -= B.data[i];
  return t.push(std::move(C), [a, b](Tape& tp, const Tensor& g) {
    tp.accum(a, g);
    Tensor gb = g;
    for (auto& x : gb.data) x = -x;
    tp.accum(b, std::move(gb));
  });
}

inline Value mul(Tape& t, Value a, Value b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  detail::require_same_shape(A, B, "mul");
  Tensor C = A;
  for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
  return t.push(std::move(C), [a, b](Tape& tp, const Tensor& g) {
    const Tensor& A2 = tp.val(a);
    const Tensor& B2 = tp.val(b);
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= B2.data[i];
    tp.accum(a, std::move(ga));
    Tensor gb = g;
    for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= A2.data[i];
    tp.accum(b, std::move(gb));
  });
}

inline Value scale(Tape& t, Value a, double c) {
  Tensor C = t.val(a);
  for (auto& x : C.data) x *= c;
  return t.push(std::move(C), [a, c](Tape& tp, const Tensor& g) {
    Tensor ga = g;
    for (auto& x : ga.data) x *= c;
    tp.accum(a, std::move(ga));
  });
}

// x + k (untracked constant tensor), elementwise
inline Value add_const(Tape& t, Value a, const Tensor& k) {
  const Tensor& A = t.val(a);
  detail::require_same_shape(A, k, "add_const");
  Tensor C = A;
  C += k;
  return t.push(std::move(C), [a](Tape& tp, const Tensor& g) { tp.accum(a, g); });
}

// x ⊙ k (untracked constant tensor), elementwise
inline Value mul_const(Tape& t, Value a, Tensor k) {
  const Tensor& A = t.val(a);
  detail::require_same_shape(A, k, "mul_const");
  Tensor C = A;
  for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= k.data[i];
  return t.push(std::move(C), [a, k = std::move(k)](Tape& tp, const Tensor& g) {
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= k.data[i];
    tp.accum(a, std::move(ga));
  });
}

// (R x C) + v broadcast over rows, v of length C (the bias add)
inline Value add_row_vector(Tape& t, Value m, Value v) {
  const Tensor& M = t.val(m);
  const Tensor& V = t.val(v);
  detail::require_2d(M, "add_row_vector");
  if (V.ndim() != 1 || V.dim(0) != M.cols())
    throw std::invalid_argument("add_row_vector: vector " + shape_str(V.shape) + " vs matrix " +
                                shape_str(M.shape));
  Tensor C = M;
  const int rows = M.rows(), cols = M.cols();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) C.at(i, j) += V.data[static_cast<size_t>(j)];
  return t.push(std::move(C), [m, v, rows, cols](Tape& tp, const Tensor& g) {
    tp.accum(m, g);
    Tensor gv({cols});
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) gv.data[static_cast<size_t>(j)] += g.at(i, j);
    tp.accum(v, std::move(gv));
  });
}

// (R x C) ⊙ v broadcast over rows, v of length C
inline Value mul_row_vector(Tape& t, Value m, Value v) {
  const Tensor& M = t.val(m);
  const Tensor& V = t.val(v);
  detail::require_2d(M, "mul_row_vector");
  if (V.ndim() != 1 || V.dim(0) != M.cols())
    throw std::invalid_argument("mul_row_vector: vector " + shape_str(V.shape) + " vs matrix " +
                                shape_str(M.shape));
  Tensor C = M;
  const int rows = M.rows(), cols = M.cols();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) C.at(i, j) *= V.data[static_cast<size_t>(j)];
  return t.push(std::move(C), [m, v, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& M2 = tp.val(m);
    const Tensor& V2 = tp.val(v);
    Tensor gm = g;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) gm.at(i, j) *= V2.data[static_cast<size_t>(j)];
    tp.accum(m, std::move(gm));
    Tensor gv({cols});
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) gv.data[static_cast<size_t>(j)] += g.at(i, j) * M2.at(i, j);
    tp.accum(v, std::move(gv));
  });
}

// (R x C) with row i scaled by v[i], v of length R
inline Value mul_per_row(Tape& t, Value m, Value v) {
  const Tensor& M = t.val(m);
  const Tensor& V = t.val(v);
  detail::require_2d(M, "mul_per_row");
  if (V.ndim() != 1 || V.dim(0) != M.rows())
    throw std::invalid_argument("mul_per_row: vector " + shape_str(V.shape) + " vs matrix " + shape_str(M.shape));
  Tensor C = M;
  const int rows = M.rows(), cols = M.cols();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) C.at(i, j) *= V.data[static_cast<size_t>(i)];
  return t.push(std::move(C), [m, v, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& M2 = tp.val(m);
    const Tensor& V2 = tp.val(v);
    Tensor gm = g;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) gm.at(i, j) *= V2.data[static_cast<size_t>(i)];
    tp.accum(m, std::move(gm));
    Tensor gv({rows});
    for (int i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += g.at(i, j) * M2.at(i, j);
      gv.data[static_cast<size_t>(i)] = acc;
    }
    tp.accum(v, std::move(gv));
  });
}

// (R x C) with row i divided by v[i], v of length R and strictly nonzero
inline Value div_per_row(Tape& t, Value m, Value v) {
  const Tensor& M = t.val(m);
  const Tensor& V = t.val(v);
  detail::require_2d(M, "div_per_row");
  if (V.ndim() != 1 || V.dim(0) != M.rows())
    throw std::invalid_argument("div_per_row: vector " + shape_str(V.shape) + " vs matrix " + shape_str(M.shape));
  Tensor C = M;
  const int rows = M.rows(), cols = M.cols();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) C.at(i, j) /= V.data[static_cast<size_t>(i)];
  return t.push(std::move(C), [m, v, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& M2 = tp.val(m);
    const Tensor& V2 = tp.val(v);
    Tensor gm = g;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) gm.at(i, j) /= V2.data[static_cast<size_t>(i)];
    tp.accum(m, std::move(gm));
    Tensor gv({rows});
    for (int i = 0; i < rows; ++i) {
      const double vi = V2.data[static_cast<size_t>(i)];
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += g.at(i, j) * M2.at(i, j);
      gv.data[static_cast<size_t>(i)] = -acc / (vi * vi);
    }
    tp.accum(v, std::move(gv));
  });
}

// softmax over the last axis of a 2-D tensor, max-subtracted for stability
inline Value softmax_last(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "softmax_last");
  const int rows = A.rows(), cols = A.cols();
  Tensor C({rows, cols});
  for (int i = 0; i < rows; ++i) {
    double mx = A.at(i, 0);
    for (int j = 1; j < cols; ++j) mx = std::max(mx, A.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double e = std::exp(A.at(i, j) - mx);
      C.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < cols; ++j) C.at(i, j) /= sum;
  }
  Value out = t.push(std::move(C), nullptr);
  // d a = s ⊙ (g - <g, s>) per row
  t.set_back(out, [a, out, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& S = tp.val(out);
    Tensor ga({rows, cols});
    for (int i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += g.at(i, j) * S.at(i, j);
      for (int j = 0; j < cols; ++j) ga.at(i, j) = S.at(i, j) * (g.at(i, j) - dot);
    }
    tp.accum(a, std::move(ga));
  });
  return out;
}

// log(sum(exp(row))) per row, (R x C) -> (R)
inline Value logsumexp_last(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "logsumexp_last");
  const int rows = A.rows(), cols = A.cols();
  Tensor C({rows});
  for (int i = 0; i < rows; ++i) {
    double mx = A.at(i, 0);
    for (int j = 1; j < cols; ++j) mx = std::max(mx, A.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += std::exp(A.at(i, j) - mx);
    C.data[static_cast<size_t>(i)] = mx + std::log(sum);
  }
  return t.push(std::move(C), [a, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& A2 = tp.val(a);
    Tensor ga({rows, cols});
    for (int i = 0; i < rows; ++i) {
      double mx = A2.at(i, 0);
      for (int j = 1; j < cols; ++j) mx = std::max(mx, A2.at(i, j));
      double sum = 0.0;
      for (int j = 0; j < cols; ++j) sum += std::exp(A2.at(i, j) - mx);
      const double gi = g.data[static_cast<size_t>(i)];
      for (int j = 0; j < cols; ++j) ga.at(i, j) = gi * std::exp(A2.at(i, j) - mx) / sum;
    }
    tp.accum(a, std::move(ga));
  });
}

namespace detail {
inline double softplus_val(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid_val(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace detail

inline Value softplus(Tape& t, Value a) {
  Tensor C = t.val(a);
  for (auto& x : C.data) x = detail::softplus_val(x);
  return t.push(std::move(C), [a](Tape& tp, const Tensor& g) {
    const Tensor& A2 = tp.val(a);
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= detail::sigmoid_val(A2.data[i]);
    tp.accum(a, std::move(ga));
  });
}

inline Value silu(Tape& t, Value a) {
  Tensor C = t.val(a);
  for (auto& x : C.data) x = x * detail::sigmoid_val(x);
  return t.push(std::move(C), [a](Tape& tp, const Tensor& g) {
    const Tensor& A2 = tp.val(a);
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) {
      const double s = detail::sigmoid_val(A2.data[i]);
      ga.data[i] *= s * (1.0 + A2.data[i] * (1.0 - s));
    }
    tp.accum(a, std::move(ga));
  });
}

inline Value sqrt_elem(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  Tensor C = A;
  for (auto& x : C.data) {
    if (x < 0.0) throw std::invalid_argument("sqrt: negative input");
    x = std::sqrt(x);
  }
  Value out = t.push(std::move(C), nullptr);
  t.set_back(out, [a, out](Tape& tp, const Tensor& g) {
    const Tensor& S = tp.val(out);
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= 0.5 / S.data[i];
    tp.accum(a, std::move(ga));
  });
  return out;
}

inline Value square(Tape& t, Value a) {
  Tensor C = t.val(a);
  for (auto& x : C.data) x = x * x;
  return t.push(std::move(C), [a](Tape& tp, const Tensor& g) {
    const Tensor& A2 = tp.val(a);
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= 2.0 * A2.data[i];
    tp.accum(a, std::move(ga));
  });
}

inline Value sum_all(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  double s = 0.0;
  for (double x : A.data) s += x;
  const size_t n = A.numel();
  auto shape = A.shape;
  return t.push(Tensor::scalar_of(s), [a, shape, n](Tape& tp, const Tensor& g) {
    tp.accum(a, Tensor::full(shape, g.scalar()));
  });
}

inline Value mean_all(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  if (A.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  for (double x : A.data) s += x;
  const double inv = 1.0 / static_cast<double>(A.numel());
  auto shape = A.shape;
  return t.push(Tensor::scalar_of(s * inv), [a, shape, inv](Tape& tp, const Tensor& g) {
    tp.accum(a, Tensor::full(shape, g.scalar() * inv));
  });
}

// mean over the last axis, (R x C) -> (R)
inline Value mean_last(Tape& t, Value a) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "mean_last");
  const int rows = A.rows(), cols = A.cols();
  if (cols == 0) throw std::invalid_argument("mean_last: zero columns");
  Tensor C({rows});
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += A.at(i, j);
    C.data[static_cast<size_t>(i)] = s / cols;
  }
  return t.push(std::move(C), [a, rows, cols](Tape& tp, const Tensor& g) {
    Tensor ga({rows, cols});
    for (int i = 0; i < rows; ++i) {
      const double gi = g.data[static_cast<size_t>(i)] / cols;
      for (int j = 0; j < cols; ++j) ga.at(i, j) = gi;
    }
    tp.accum(a, std::move(ga));
  });
}

inline Value reshape(Tape& t, Value a, std::vector<int> shape) {
  const Tensor& A = t.val(a);
  if (Tensor::numel_of(shape) != A.numel())
    throw std::invalid_argument("reshape: " + shape_str(A.shape) + " to " + shape_str(shape) +
                                " changes element count");
  auto old_shape = A.shape;
  Tensor C(shape, A.data);
  return t.push(std::move(C), [a, old_shape](Tape& tp, const Tensor& g) {
    tp.accum(a, Tensor(old_shape, g.data));
  });
}

inline Value concat_cols(Tape& t, const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int rows = t.val(parts[0]).rows();
  int cols = 0;
  std::vector<int> widths;
  for (Value p : parts) {
    const Tensor& P = t.val(p);
    detail::require_2d(P, "concat_cols");
    if (P.rows() != rows)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(P.shape) + " vs " +
                                  shape_str(t.val(parts[0]).shape));
    widths.push_back(P.cols());
    cols += P.cols();
  }
  Tensor C({rows, cols});
  int off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& P = t.val(parts[pi]);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < widths[pi]; ++j) C.at(i, off + j) = P.at(i, j);
    off += widths[pi];
  }
  auto ps = parts;
  return t.push(std::move(C), [ps, widths, rows](Tape& tp, const Tensor& g) {
    int off2 = 0;
    for (size_t pi = 0; pi < ps.size(); ++pi) {
      Tensor gp({rows, widths[pi]});
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < widths[pi]; ++j) gp.at(i, j) = g.at(i, off2 + j);
      tp.accum(ps[pi], std::move(gp));
      off2 += widths[pi];
    }
  });
}

inline Value concat_rows(Tape& t, const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int cols = t.val(parts[0]).cols();
  int rows = 0;
  std::vector<int> heights;
  for (Value p : parts) {
    const Tensor& P = t.val(p);
    detail::require_2d(P, "concat_rows");
    if (P.cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(P.shape) + " vs " +
                                  shape_str(t.val(parts[0]).shape));
    heights.push_back(P.rows());
    rows += P.rows();
  }
  Tensor C({rows, cols});
  int off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& P = t.val(parts[pi]);
    std::copy(P.data.begin(), P.data.end(), C.data.begin() + static_cast<size_t>(off) * cols);
    off += heights[pi];
  }
  auto ps = parts;
  return t.push(std::move(C), [ps, heights, cols](Tape& tp, const Tensor& g) {
    int off2 = 0;
    for (size_t pi = 0; pi < ps.size(); ++pi) {
      Tensor gp({heights[pi], cols});
      std::copy(g.data.begin() + static_cast<size_t>(off2) * cols,
                g.data.begin() + static_cast<size_t>(off2 + heights[pi]) * cols, gp.data.begin());
      tp.accum(ps[pi], std::move(gp));
      off2 += heights[pi];
    }
  });
}

inline Value slice_cols(Tape& t, Value a, int c0, int c1) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "slice_cols");
  if (c0 < 0 || c1 > A.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                                shape_str(A.shape));
  const int rows = A.rows(), cols = A.cols(), w = c1 - c0;
  Tensor C({rows, w});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < w; ++j) C.at(i, j) = A.at(i, c0 + j);
  return t.push(std::move(C), [a, rows, cols, c0, w](Tape& tp, const Tensor& g) {
    Tensor ga({rows, cols});
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < w; ++j) ga.at(i, c0 + j) = g.at(i, j);
    tp.accum(a, std::move(ga));
  });
}

inline Value slice_rows(Tape& t, Value a, int r0, int r1) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "slice_rows");
  if (r0 < 0 || r1 > A.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                                shape_str(A.shape));
  const int rows = A.rows(), cols = A.cols(), h = r1 - r0;
  Tensor C({h, cols});
  std::copy(A.data.begin() + static_cast<size_t>(r0) * cols, A.data.begin() + static_cast<size_t>(r1) * cols,
            C.data.begin());
  return t.push(std::move(C), [a, rows, cols, r0, h](Tape& tp, const Tensor& g) {
    Tensor ga({rows, cols});
    std::copy(g.data.begin(), g.data.end(), ga.data.begin() + static_cast<size_t>(r0) * cols);
    tp.accum(a, std::move(ga));
  });
}

// gather rows by index, (R x C) -> (|idx| x C)
inline Value select_rows(Tape& t, Value a, std::vector<int> idx) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "select_rows");
  const int rows = A.rows(), cols = A.cols();
  for (int i : idx)
    if (i < 0 || i >= rows) throw std::invalid_argument("select_rows: index " + std::to_string(i) + " out of range");
  Tensor C({static_cast<int>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(A.data.begin() + static_cast<size_t>(idx[r]) * cols,
              A.data.begin() + static_cast<size_t>(idx[r] + 1) * cols, C.data.begin() + r * cols);
  return t.push(std::move(C), [a, idx = std::move(idx), rows, cols](Tape& tp, const Tensor& g) {
    Tensor ga({rows, cols});
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < cols; ++j) ga.at(idx[r], j) += g.at(static_cast<int>(r), j);
    tp.accum(a, std::move(ga));
  });
}

// place rows at the given indices of a (total_rows x C) zero tensor
inline Value scatter_rows(Tape& t, Value a, std::vector<int> idx, int total_rows) {
  const Tensor& A = t.val(a);
  detail::require_2d(A, "scatter_rows");
  if (static_cast<int>(idx.size()) != A.rows())
    throw std::invalid_argument("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                                shape_str(A.shape));
  const int cols = A.cols();
  for (int i : idx)
    if (i < 0 || i >= total_rows)
      throw std::invalid_argument("scatter_rows: index " + std::to_string(i) + " out of range");
  Tensor C({total_rows, cols});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < cols; ++j) C.at(idx[r], j) += A.at(static_cast<int>(r), j);
  return t.push(std::move(C), [a, idx = std::move(idx), cols](Tape& tp, const Tensor& g) {
    Tensor ga({static_cast<int>(idx.size()), cols});
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < cols; ++j) ga.at(static_cast<int>(r), j) = g.at(idx[r], j);
    tp.accum(a, std::move(ga));
  });
}

// keep elements where mask != 0, flattened in row-major order
inline Value masked_select(Tape& t, Value a, const std::vector<uint8_t>& mask) {
  const Tensor& A = t.val(a);
  if (mask.size() != A.numel())
    throw std::invalid_argument("masked_select: mask of " + std::to_string(mask.size()) + " for " +
                                shape_str(A.shape));
  std::vector<size_t> keep;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) keep.push_back(i);
  Tensor C({static_cast<int>(keep.size())});
  for (size_t i = 0; i < keep.size(); ++i) C.data[i] = A.data[keep[i]];
  auto shape = A.shape;
  return t.push(std::move(C), [a, keep = std::move(keep), shape](Tape& tp, const Tensor& g) {
    Tensor ga(shape);
    for (size_t i = 0; i < keep.size(); ++i) ga.data[keep[i]] = g.data[i];
    tp.accum(a, std::move(ga));
  });
}

}  // namespace fincast::ag
