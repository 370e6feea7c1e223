// src/tensor.cc
//
// Copyright 2026  The cmm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>

namespace cmm {

namespace {

int64_t shape_numel(const std::vector<int> &s) {
  int64_t n = 1;
  for (int d : s) {
    CMM_CHECK(d >= 0, UsageError, "negative dimension " << d);
    n *= d;
  }
  return n;
}

// C += A(m,k) * B(k,n)
void mm_nn_acc(const real *a, const real *b, real *c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real *arow = a + static_cast<size_t>(i) * k;
    real *crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      real av = arow[p];
      const real *brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(m,k) * B(n,k)^T
void mm_nt_acc(const real *a, const real *b, real *c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real *arow = a + static_cast<size_t>(i) * k;
    real *crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const real *brow = b + static_cast<size_t>(j) * k;
      real acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A(m,k)^T * B(m,n); C is (k,n)
void mm_tn_acc(const real *a, const real *b, real *c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real *arow = a + static_cast<size_t>(i) * k;
    const real *brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      real av = arow[p];
      real *crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor::Tensor(std::vector<int> s, std::vector<real> d)
    : shape(std::move(s)), data(std::move(d)) {
  CMM_CHECK(shape_numel(shape) == numel(), UsageError,
            "tensor data size " << data.size() << " does not match shape "
                                << shape_str());
}

Tensor Tensor::zeros(std::vector<int> s) {
  int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<real>(static_cast<size_t>(n), 0));
}

Tensor Tensor::full(std::vector<int> s, real v) {
  int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<real>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(real v) { return Tensor({1}, {v}); }

int Tensor::rows() const {
  CMM_CHECK(rank() == 2, InternalError, "rows() on rank-" << rank());
  return shape[0];
}

int Tensor::cols() const {
  CMM_CHECK(rank() == 2, InternalError, "cols() on rank-" << rank());
  return shape[1];
}

bool Tensor::all_finite() const {
  for (real v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

real log_sum_exp(real a, real b) {
  if (a == -std::numeric_limits<real>::infinity()) return b;
  if (b == -std::numeric_limits<real>::infinity()) return a;
  real hi = std::max(a, b);
  real lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape &, Var)> back, const char *name) {
#ifdef CMM_FINITE_CHECKS
  CMM_CHECK(value.all_finite(), NumericError,
            "non-finite value produced by op '" << name << "'");
#else
  (void)name;
#endif
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

bool Tape::any_requires(std::initializer_list<Var> vs) const {
  for (Var v : vs) {
    if (node(v).requires_grad) return true;
  }
  return false;
}

Var Tape::constant(Tensor value) {
  return push(std::move(value), false, nullptr, "constant");
}

Var Tape::param(Tensor value) {
  return push(std::move(value), true, nullptr, "param");
}

const Tensor &Tape::grad(Var v) const {
  const Node &n = node(v);
  CMM_CHECK(n.grad_alloc, UsageError,
            "grad read before backward() (or var does not require grad)");
  return n.grad;
}

Tensor &Tape::grad_mut(Var v) {
  Node &n = node(v);
  if (!n.grad_alloc) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::accum_grad(Var v, const Tensor &g) {
  Node &n = node(v);
  if (!n.requires_grad) return;
  CMM_CHECK(g.same_shape(n.value), InternalError,
            "grad shape " << g.shape_str() << " vs value "
                          << n.value.shape_str());
  Tensor &acc = grad_mut(v);
  for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

void Tape::backward(Var root) {
  CMM_CHECK(grad_enabled_, UsageError, "backward() on a no-grad tape");
  CMM_CHECK(!backward_done_, UsageError,
            "backward() called twice on the same tape");
  const Node &r = node(root);
  CMM_CHECK(r.value.numel() == 1, UsageError,
            "backward() root must be scalar, got " << r.value.shape_str());
  backward_done_ = true;
  grad_mut(root).data[0] = 1;
  for (int32_t id = root.id; id >= 0; --id) {
    Node &n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || !n.back || !n.grad_alloc) continue;
    n.back(*this, Var{id});
  }
}

// ---------------------------------------------------------------------------
// Primitive ops. Backward lambdas write straight into parent grad buffers
// through grad_mut(); accum_grad() is the checked path for composite ops.

Var Tape::matmul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(),
            UsageError,
            "matmul: incompatible shapes " << ta.shape_str() << " x "
                                           << tb.shape_str());
  int m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out = Tensor::zeros({m, n});
  mm_nn_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  return push(
      std::move(out), any_requires({a, b}),
      [a, b, m, k, n](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(a).requires_grad) {
          mm_nt_acc(g.data.data(), t.val(b).data.data(),
                    t.grad_mut(a).data.data(), m, n, k);
        }
        if (t.node(b).requires_grad) {
          mm_tn_acc(t.val(a).data.data(), g.data.data(),
                    t.grad_mut(b).data.data(), m, k, n);
        }
      },
      "matmul");
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(),
            UsageError,
            "matmul_nt: incompatible shapes " << ta.shape_str() << " x "
                                              << tb.shape_str() << "^T");
  int m = ta.rows(), k = ta.cols(), n = tb.rows();
  Tensor out = Tensor::zeros({m, n});
  mm_nt_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  return push(
      std::move(out), any_requires({a, b}),
      [a, b, m, k, n](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(a).requires_grad) {
          mm_nn_acc(g.data.data(), t.val(b).data.data(),
                    t.grad_mut(a).data.data(), m, n, k);
        }
        if (t.node(b).requires_grad) {
          mm_tn_acc(g.data.data(), t.val(a).data.data(),
                    t.grad_mut(b).data.data(), m, n, k);
        }
      },
      "matmul_nt");
}

Var Tape::add(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.same_shape(tb), UsageError,
            "add: shapes differ " << ta.shape_str() << " vs "
                                  << tb.shape_str());
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  return push(
      std::move(out), any_requires({a, b}),
      [a, b](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        for (Var v : {a, b}) {
          if (!t.node(v).requires_grad) continue;
          Tensor &acc = t.grad_mut(v);
          for (size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += g.data[i];
        }
      },
      "add");
}

Var Tape::sub(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.same_shape(tb), UsageError,
            "sub: shapes differ " << ta.shape_str() << " vs "
                                  << tb.shape_str());
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  return push(
      std::move(out), any_requires({a, b}),
      [a, b](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(a).requires_grad) {
          Tensor &acc = t.grad_mut(a);
          for (size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += g.data[i];
        }
        if (t.node(b).requires_grad) {
          Tensor &acc = t.grad_mut(b);
          for (size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] -= g.data[i];
        }
      },
      "sub");
}

Var Tape::mul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.same_shape(tb), UsageError,
            "mul: shapes differ " << ta.shape_str() << " vs "
                                  << tb.shape_str());
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  return push(
      std::move(out), any_requires({a, b}),
      [a, b](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(a).requires_grad) {
          Tensor &acc = t.grad_mut(a);
          const Tensor &vb = t.val(b);
          for (size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += g.data[i] * vb.data[i];
        }
        if (t.node(b).requires_grad) {
          Tensor &acc = t.grad_mut(b);
          const Tensor &va = t.val(a);
          for (size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += g.data[i] * va.data[i];
        }
      },
      "mul");
}

Var Tape::scale_add(Var a, real alpha, real beta) {
  Tensor out = val(a);
  for (real &v : out.data) v = alpha * v + beta;
  return push(
      std::move(out), any_requires({a}),
      [a, alpha](Tape &t, Var self) {
        if (!t.node(a).requires_grad) return;
        const Tensor &g = t.grad(self);
        Tensor &acc = t.grad_mut(a);
        for (size_t i = 0; i < acc.data.size(); ++i)
          acc.data[i] += alpha * g.data[i];
      },
      "scale_add");
}

Var Tape::add_row(Var m, Var row) {
  const Tensor &tm = val(m), &tr = val(row);
  int d = tm.rank() == 2 ? tm.cols() : static_cast<int>(tm.numel());
  CMM_CHECK(tm.rank() == 2 && static_cast<int>(tr.numel()) == d, UsageError,
            "add_row: shapes " << tm.shape_str() << " + " << tr.shape_str());
  Tensor out = tm;
  int n = tm.rows();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += tr.data[static_cast<size_t>(j)];
  return push(
      std::move(out), any_requires({m, row}),
      [m, row, n, d](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(m).requires_grad) {
          Tensor &acc = t.grad_mut(m);
          for (size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += g.data[i];
        }
        if (t.node(row).requires_grad) {
          Tensor &acc = t.grad_mut(row);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              acc.data[static_cast<size_t>(j)] += g.at(i, j);
        }
      },
      "add_row");
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(),
            UsageError,
            "concat_cols: shapes " << ta.shape_str() << " | "
                                   << tb.shape_str());
  int n = ta.rows(), da = ta.cols(), db = tb.cols();
  Tensor out = Tensor::zeros({n, da + db});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < da; ++j) out.at(i, j) = ta.at(i, j);
    for (int j = 0; j < db; ++j) out.at(i, da + j) = tb.at(i, j);
  }
  return push(
      std::move(out), any_requires({a, b}),
      [a, b, n, da, db](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(a).requires_grad) {
          Tensor &acc = t.grad_mut(a);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < da; ++j) acc.at(i, j) += g.at(i, j);
        }
        if (t.node(b).requires_grad) {
          Tensor &acc = t.grad_mut(b);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < db; ++j) acc.at(i, j) += g.at(i, da + j);
        }
      },
      "concat_cols");
}

Var Tape::slice_cols(Var a, int start, int len) {
  const Tensor &ta = val(a);
  CMM_CHECK(ta.rank() == 2 && start >= 0 && len >= 1 &&
                start + len <= ta.cols(),
            UsageError,
            "slice_cols: [" << start << "," << start + len << ") of "
                            << ta.shape_str());
  int n = ta.rows();
  Tensor out = Tensor::zeros({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = ta.at(i, start + j);
  return push(
      std::move(out), any_requires({a}),
      [a, start, len, n](Tape &t, Var self) {
        if (!t.node(a).requires_grad) return;
        const Tensor &g = t.grad(self);
        Tensor &acc = t.grad_mut(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < len; ++j) acc.at(i, start + j) += g.at(i, j);
      },
      "slice_cols");
}

Var Tape::stack_rows(const std::vector<Var> &rows) {
  CMM_CHECK(!rows.empty(), UsageError, "stack_rows: empty row list");
  int d = static_cast<int>(val(rows[0]).numel());
  int n = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros({n, d});
  bool req = false;
  for (int i = 0; i < n; ++i) {
    const Tensor &r = val(rows[i]);
    CMM_CHECK(static_cast<int>(r.numel()) == d, UsageError,
              "stack_rows: row " << i << " has " << r.numel()
                                 << " elements, expected " << d);
    std::copy(r.data.begin(), r.data.end(),
              out.data.begin() + static_cast<int64_t>(i) * d);
    req = req || node(rows[i]).requires_grad;
  }
  return push(
      std::move(out), req,
      [rows, d](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        for (size_t i = 0; i < rows.size(); ++i) {
          if (!t.node(rows[i]).requires_grad) continue;
          Tensor &acc = t.grad_mut(rows[i]);
          for (int j = 0; j < d; ++j)
            acc.data[static_cast<size_t>(j)] +=
                g.data[i * static_cast<size_t>(d) + j];
        }
      },
      "stack_rows");
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Tensor &tt = val(table);
  CMM_CHECK(tt.rank() == 2, UsageError, "gather_rows: table must be rank-2");
  int v = tt.rows(), d = tt.cols();
  int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    CMM_CHECK(ids[i] >= 0 && ids[i] < v, UsageError,
              "gather_rows: id " << ids[i] << " out of range [0," << v << ")");
    for (int j = 0; j < d; ++j) out.at(i, j) = tt.at(ids[i], j);
  }
  return push(
      std::move(out), any_requires({table}),
      [table, ids = std::move(ids), d](Tape &t, Var self) {
        if (!t.node(table).requires_grad) return;
        const Tensor &g = t.grad(self);
        Tensor &acc = t.grad_mut(table);
        for (size_t i = 0; i < ids.size(); ++i)
          for (int j = 0; j < d; ++j)
            acc.at(ids[i], j) += g.at(static_cast<int>(i), j);
      },
      "gather_rows");
}

Var Tape::pairwise_row_sum(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  CMM_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(),
            UsageError,
            "pairwise_row_sum: shapes " << ta.shape_str() << " + "
                                        << tb.shape_str());
  int m = ta.rows(), n = tb.rows(), d = ta.cols();
  Tensor out = Tensor::zeros({m * n, d});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < d; ++c)
        out.at(i * n + j, c) = ta.at(i, c) + tb.at(j, c);
  return push(
      std::move(out), any_requires({a, b}),
      [a, b, m, n, d](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        if (t.node(a).requires_grad) {
          Tensor &acc = t.grad_mut(a);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              for (int c = 0; c < d; ++c) acc.at(i, c) += g.at(i * n + j, c);
        }
        if (t.node(b).requires_grad) {
          Tensor &acc = t.grad_mut(b);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              for (int c = 0; c < d; ++c) acc.at(j, c) += g.at(i * n + j, c);
        }
      },
      "pairwise_row_sum");
}

Var Tape::tanh(Var a) {
  Tensor out = val(a);
  for (real &v : out.data) v = std::tanh(v);
  return push(
      std::move(out), any_requires({a}),
      [a](Tape &t, Var self) {
        if (!t.node(a).requires_grad) return;
        const Tensor &g = t.grad(self);
        const Tensor &y = t.val(self);
        Tensor &acc = t.grad_mut(a);
        for (size_t i = 0; i < acc.data.size(); ++i)
          acc.data[i] += g.data[i] * (1 - y.data[i] * y.data[i]);
      },
      "tanh");
}

Var Tape::relu(Var a) {
  Tensor out = val(a);
  for (real &v : out.data) v = v > 0 ? v : 0;
  return push(
      std::move(out), any_requires({a}),
      [a](Tape &t, Var self) {
        if (!t.node(a).requires_grad) return;
        const Tensor &g = t.grad(self);
        const Tensor &x = t.val(a);
        Tensor &acc = t.grad_mut(a);
        for (size_t i = 0; i < acc.data.size(); ++i)
          if (x.data[i] > 0) acc.data[i] += g.data[i];
      },
      "relu");
}

Var Tape::sigmoid(Var a) {
  Tensor out = val(a);
  for (real &v : out.data) v = 1 / (1 + std::exp(-v));
  return push(
      std::move(out), any_requires({a}),
      [a](Tape &t, Var self) {
        if (!t.node(a).requires_grad) return;
        const Tensor &g = t.grad(self);
        const Tensor &y = t.val(self);
        Tensor &acc = t.grad_mut(a);
        for (size_t i = 0; i < acc.data.size(); ++i)
          acc.data[i] += g.data[i] * y.data[i] * (1 - y.data[i]);
      },
      "sigmoid");
}

Var Tape::layer_norm(Var x, Var gain, Var bias, real eps) {
  const Tensor &tx = val(x);
  CMM_CHECK(eps > 0, UsageError, "layer_norm: eps must be positive");
  int n = tx.rank() == 2 ? tx.rows() : 1;
  int d = tx.rank() == 2 ? tx.cols() : static_cast<int>(tx.numel());
  CMM_CHECK(d >= 1, UsageError, "layer_norm: empty rows");
  CMM_CHECK(static_cast<int>(val(gain).numel()) == d &&
                static_cast<int>(val(bias).numel()) == d,
            UsageError, "layer_norm: gain/bias must have " << d << " entries");
  const Tensor &tg = val(gain), &tb = val(bias);
  Tensor out = tx;
  // Per row: population variance, then affine.
  std::vector<real> inv_std(static_cast<size_t>(n));
  std::vector<real> means(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const real *row = tx.data.data() + static_cast<size_t>(i) * d;
    real mean = 0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    real var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    real inv = 1 / std::sqrt(var + eps);
    means[static_cast<size_t>(i)] = mean;
    inv_std[static_cast<size_t>(i)] = inv;
    real *orow = out.data.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j)
      orow[j] = (row[j] - mean) * inv * tg.data[static_cast<size_t>(j)] +
                tb.data[static_cast<size_t>(j)];
  }
  return push(
      std::move(out), any_requires({x, gain, bias}),
      [x, gain, bias, n, d, means = std::move(means),
       inv_std = std::move(inv_std)](Tape &t, Var self) {
        const Tensor &g = t.grad(self);
        const Tensor &tx2 = t.val(x);
        const Tensor &tg2 = t.val(gain);
        bool need_x = t.node(x).requires_grad;
        bool need_g = t.node(gain).requires_grad;
        bool need_b = t.node(bias).requires_grad;
        for (int i = 0; i < n; ++i) {
          const real *row = tx2.data.data() + static_cast<size_t>(i) * d;
          const real *grow = g.data.data() + static_cast<size_t>(i) * d;
          real mean = means[static_cast<size_t>(i)];
          real inv = inv_std[static_cast<size_t>(i)];
          if (need_g) {
            Tensor &accg = t.grad_mut(gain);
            for (int j = 0; j < d; ++j)
              accg.data[static_cast<size_t>(j)] +=
                  grow[j] * (row[j] - mean) * inv;
          }
          if (need_b) {
            Tensor &accb = t.grad_mut(bias);
            for (int j = 0; j < d; ++j)
              accb.data[static_cast<size_t>(j)] += grow[j];
          }
          if (need_x) {
            // dxhat = g * gain; dx = inv*(dxhat - mean(dxhat)
            //         - xhat * mean(dxhat*xhat))
            Tensor &accx = t.grad_mut(x);
            real *arow = accx.data.data() + static_cast<size_t>(i) * d;
            real sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (int j = 0; j < d; ++j) {
              real xhat = (row[j] - mean) * inv;
              real dxhat = grow[j] * tg2.data[static_cast<size_t>(j)];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            for (int j = 0; j < d; ++j) {
              real xhat = (row[j] - mean) * inv;
              real dxhat = grow[j] * tg2.data[static_cast<size_t>(j)];
              arow[j] += inv * (dxhat - sum_dxhat / d -
                                xhat * sum_dxhat_xhat / d);
            }
          }
        }
      },
      "layer_norm");
}

Var Tape::softmax_rows(Var x) {
  const Tensor &tx = val(x);
  CMM_CHECK(tx.rank() == 2 || tx.rank() == 1, UsageError,
            "softmax_rows: need rank 1 or 2");
  int n = tx.rank() == 2 ? tx.rows() : 1;
  int d = tx.rank() == 2 ? tx.cols() : static_cast<int>(tx.numel());
  CMM_CHECK(d >= 1, UsageError, "softmax_rows: empty rows");
  Tensor out = tx;
  for (int i = 0; i < n; ++i) {
    real *row = out.data.data() + static_cast<size_t>(i) * d;
    real mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    real sum = 0;
    for (int j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < d; ++j) row[j] /= sum;
  }
  return push(
      std::move(out), any_requires({x}),
      [x, n, d](Tape &t, Var self) {
        if (!t.node(x).requires_grad) return;
        const Tensor &g = t.grad(self);
        const Tensor &y = t.val(self);
        Tensor &acc = t.grad_mut(x);
        for (int i = 0; i < n; ++i) {
          const real *grow = g.data.data() + static_cast<size_t>(i) * d;
          const real *yrow = y.data.data() + static_cast<size_t>(i) * d;
          real *arow = acc.data.data() + static_cast<size_t>(i) * d;
          real dot = 0;
          for (int j = 0; j < d; ++j) dot += grow[j] * yrow[j];
          for (int j = 0; j < d; ++j)
            arow[j] += yrow[j] * (grow[j] - dot);
        }
      },
      "softmax_rows");
}

Var Tape::log_softmax_rows(Var x) {
  const Tensor &tx = val(x);
  CMM_CHECK(tx.rank() == 2 || tx.rank() == 1, UsageError,
            "log_softmax_rows: need rank 1 or 2");
  int n = tx.rank() == 2 ? tx.rows() : 1;
  int d = tx.rank() == 2 ? tx.cols() : static_cast<int>(tx.numel());
  CMM_CHECK(d >= 1, UsageError, "log_softmax_rows: empty rows");
  Tensor out = tx;
  for (int i = 0; i < n; ++i) {
    real *row = out.data.data() + static_cast<size_t>(i) * d;
    real mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    real sum = 0;
    for (int j = 0; j < d; ++j) sum += std::exp(row[j] - mx);
    real lse = mx + std::log(sum);
    for (int j = 0; j < d; ++j) row[j] -= lse;
  }
  return push(
      std::move(out), any_requires({x}),
      [x, n, d](Tape &t, Var self) {
        if (!t.node(x).requires_grad) return;
        const Tensor &g = t.grad(self);
        const Tensor &y = t.val(self);
        Tensor &acc = t.grad_mut(x);
        for (int i = 0; i < n; ++i) {
          const real *grow = g.data.data() + static_cast<size_t>(i) * d;
          const real *yrow = y.data.data() + static_cast<size_t>(i) * d;
          real *arow = acc.data.data() + static_cast<size_t>(i) * d;
          real gsum = 0;
          for (int j = 0; j < d; ++j) gsum += grow[j];
          for (int j = 0; j < d; ++j)
            arow[j] += grow[j] - std::exp(yrow[j]) * gsum;
        }
      },
      "log_softmax_rows");
}

Var Tape::sum(Var a) {
  const Tensor &ta = val(a);
  real s = 0;
  for (real v : ta.data) s += v;
  return push(
      Tensor::scalar(s), any_requires({a}),
      [a](Tape &t, Var self) {
        if (!t.node(a).requires_grad) return;
        real g = t.grad(self).data[0];
        Tensor &acc = t.grad_mut(a);
        for (real &v : acc.data) v += g;
      },
      "sum");
}

Var Tape::rel_pos_bias(Var table, int head, int t_len, int clip) {
  const Tensor &tt = val(table);
  CMM_CHECK(tt.rank() == 2 && tt.cols() == 2 * clip + 1 && head >= 0 &&
                head < tt.rows(),
            UsageError, "rel_pos_bias: bad table shape " << tt.shape_str());
  Tensor out = Tensor::zeros({t_len, t_len});
  for (int i = 0; i < t_len; ++i) {
    for (int j = 0; j < t_len; ++j) {
      int off = std::clamp(j - i, -clip, clip) + clip;
      out.at(i, j) = tt.at(head, off);
    }
  }
  return push(
      std::move(out), any_requires({table}),
      [table, head, t_len, clip](Tape &t, Var self) {
        if (!t.node(table).requires_grad) return;
        const Tensor &g = t.grad(self);
        Tensor &acc = t.grad_mut(table);
        for (int i = 0; i < t_len; ++i) {
          for (int j = 0; j < t_len; ++j) {
            int off = std::clamp(j - i, -clip, clip) + clip;
            acc.at(head, off) += g.at(i, j);
          }
        }
      },
      "rel_pos_bias");
}

Var Tape::custom_op(Tensor value, std::vector<Var> parents,
                    std::function<void(Tape &, Var self)> back,
                    const char *name) {
  bool req = false;
  for (Var p : parents) req = req || node(p).requires_grad;
  return push(std::move(value), req, std::move(back), name);
}

}  // namespace cmm
