// src/tensor.h
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

#ifndef CMM_SRC_TENSOR_H_
#define CMM_SRC_TENSOR_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "common.h"

namespace cmm {

// Dense rank-0/1/2 tensor of `real`. Values are immutable once handed to a
// Tape; shapes are explicit everywhere (the only broadcast in the codebase is
// the bias-add over rows).
struct Tensor {
  std::vector<int> shape;
  std::vector<real> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<real> d);

  static Tensor zeros(std::vector<int> s);
  static Tensor full(std::vector<int> s, real v);
  static Tensor scalar(real v);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;
  bool same_shape(const Tensor &o) const { return shape == o.shape; }
  bool all_finite() const;

  real &at(int i) { return data[static_cast<size_t>(i)]; }
  real at(int i) const { return data[static_cast<size_t>(i)]; }
  real &at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  real at(int i, int j) const {
    return data[static_cast<size_t>(i) * cols() + j];
  }

  std::string shape_str() const;
};

// Handle to a value recorded on a Tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. One tape per forward/backward pass, single-threaded;
// run independent tapes for batch parallelism. With grad disabled the same
// ops work as plain eager evaluation (used at decode time).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

  // Constants participate in the graph without receiving gradients;
  // parameters accumulate gradients during backward().
  Var constant(Tensor value);
  Var param(Tensor value);

  const Tensor &val(Var v) const { return node(v).value; }
  const Tensor &grad(Var v) const;
  // True once backward() has touched this var's gradient buffer.
  bool has_grad(Var v) const { return node(v).grad_alloc; }

  // --- primitives -----------------------------------------------------
  Var matmul(Var a, Var b);     // [m,k]x[k,n] -> [m,n]
  Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T -> [m,n]
  Var add(Var a, Var b);        // same shape
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale_add(Var a, real alpha, real beta);  // alpha*a + beta
  Var add_row(Var m, Var row);  // row bias broadcast over rows
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, int start, int len);
  Var stack_rows(const std::vector<Var> &rows);  // each [1,d] -> [n,d]
  Var gather_rows(Var table, std::vector<int> ids);
  // out[i*n+j, :] = a[i, :] + b[j, :]; the joint-network lattice expansion.
  Var pairwise_row_sum(Var a, Var b);
  Var tanh(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var layer_norm(Var x, Var gain, Var bias, real eps);  // per row
  Var softmax_rows(Var x);
  Var log_softmax_rows(Var x);
  Var sum(Var a);  // scalar
  // T x T matrix of learned relative-position offsets taken from row `head`
  // of `table` ([heads, 2*clip+1]); entry (t,s) = table[head, clamp(s-t)].
  Var rel_pos_bias(Var table, int head, int t_len, int clip);

  // Escape hatch for composite ops with analytic gradients (transducer
  // loss). `back` runs during backward() and pushes into parent grads via
  // accum_grad().
  Var custom_op(Tensor value, std::vector<Var> parents,
                std::function<void(Tape &, Var self)> back,
                const char *name = "custom");

  void accum_grad(Var v, const Tensor &g);
  // Raw accumulation buffer; valid during/after backward().
  Tensor &grad_mut(Var v);

  // Gradients of `root` (a scalar) w.r.t. every param on the tape.
  // Calling twice without a fresh tape is a usage error.
  void backward(Var root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape &, Var)> back;
  };

  Node &node(Var v) {
    CMM_CHECK(v.valid() && v.id < static_cast<int32_t>(nodes_.size()),
              InternalError, "invalid Var id " << v.id);
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node &node(Var v) const {
    return const_cast<Tape *>(this)->node(v);
  }

  Var push(Tensor value, bool requires_grad,
           std::function<void(Tape &, Var)> back, const char *name);
  bool any_requires(std::initializer_list<Var> vs) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// Numerically stable log(exp(a) + exp(b)); -inf neutral.
real log_sum_exp(real a, real b);

}  // namespace cmm

#endif  // CMM_SRC_TENSOR_H_
