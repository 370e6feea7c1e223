// src/loss.cc
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

#include "loss.h"

#include <cmath>
#include <limits>

namespace cmm {

namespace {

constexpr real kNegInf = -std::numeric_limits<real>::infinity();

struct Grid {
  int t_len;
  int u_len;  // number of targets U; lattice has U+1 columns
  int vocab_cols;

  int rows() const { return t_len * (u_len + 1); }
  size_t idx(int t, int u, int k) const {
    return (static_cast<size_t>(t) * (u_len + 1) + u) * vocab_cols + k;
  }
};

Grid make_grid(const Tensor &log_probs, const std::vector<int> &targets,
               int t_len, int blank_id) {
  CMM_CHECK(t_len >= 1, UsageError, "transducer: need T >= 1");
  CMM_CHECK(log_probs.rank() == 2, UsageError,
            "transducer: log_probs must be rank-2");
  Grid g{t_len, static_cast<int>(targets.size()), log_probs.cols()};
  CMM_CHECK(log_probs.rows() == g.rows(), UsageError,
            "transducer: log_probs has " << log_probs.rows()
                                         << " rows, expected " << g.rows());
  CMM_CHECK(blank_id >= 0 && blank_id < g.vocab_cols, UsageError,
            "transducer: blank id " << blank_id << " outside [0,"
                                    << g.vocab_cols << ")");
  for (int y : targets) {
    CMM_CHECK(y >= 0 && y < g.vocab_cols && y != blank_id, UsageError,
              "transducer: target token " << y << " invalid");
  }
  return g;
}

}  // namespace

LossLattice transducer_nll(const Tensor &log_probs,
                           const std::vector<int> &targets, int t_len,
                           int blank_id) {
  Grid g = make_grid(log_probs, targets, t_len, blank_id);
  const real *lp = log_probs.data.data();
  auto blank = [&](int t, int u) { return lp[g.idx(t, u, blank_id)]; };
  auto emit = [&](int t, int u) { return lp[g.idx(t, u, targets[u])]; };

  LossLattice lat;
  lat.alpha = Tensor::full({g.t_len, g.u_len + 1}, kNegInf);
  lat.beta = Tensor::full({g.t_len, g.u_len + 1}, kNegInf);

  lat.alpha.at(0, 0) = 0;
  for (int t = 0; t < g.t_len; ++t) {
    for (int u = 0; u <= g.u_len; ++u) {
      if (t == 0 && u == 0) continue;
      real from_blank =
          t > 0 ? lat.alpha.at(t - 1, u) + blank(t - 1, u) : kNegInf;
      real from_emit =
          u > 0 ? lat.alpha.at(t, u - 1) + emit(t, u - 1) : kNegInf;
      lat.alpha.at(t, u) = log_sum_exp(from_blank, from_emit);
    }
  }
  for (int t = g.t_len - 1; t >= 0; --t) {
    for (int u = g.u_len; u >= 0; --u) {
      // beta includes the transitions leaving (t,u); termination is the
      // final blank at (T-1, U).
      real via_blank;
      if (t + 1 < g.t_len) {
        via_blank = blank(t, u) + lat.beta.at(t + 1, u);
      } else {
        via_blank = u == g.u_len ? blank(t, u) : kNegInf;
      }
      real via_emit =
          u < g.u_len ? emit(t, u) + lat.beta.at(t, u + 1) : kNegInf;
      lat.beta.at(t, u) = log_sum_exp(via_blank, via_emit);
    }
  }
  real log_p = lat.beta.at(0, 0);
  CMM_CHECK(std::isfinite(log_p), NumericError,
            "transducer: zero-probability alignment set (log P = -inf)");
  lat.loss = -log_p;
  return lat;
}

Var transducer_loss(Tape &tape, Var log_probs,
                    const std::vector<int> &targets, int t_len, int blank_id,
                    LossLattice *lattice) {
  const Tensor &lp = tape.val(log_probs);
  LossLattice lat = transducer_nll(lp, targets, t_len, blank_id);
  if (lattice) *lattice = lat;
  Grid g = make_grid(lp, targets, t_len, blank_id);
  real log_p = -lat.loss;

  // d(-logP)/d lp[t,u,k] = -occupancy of the matching transition.
  auto backward = [g, targets, blank_id, lat, log_p,
                   log_probs](Tape &t, Var self) {
    if (!t.requires_grad(log_probs)) return;
    const real up = t.grad(self).data[0];
    const Tensor &lp2 = t.val(log_probs);
    Tensor &acc = t.grad_mut(log_probs);
    for (int tt = 0; tt < g.t_len; ++tt) {
      for (int u = 0; u <= g.u_len; ++u) {
        real a = lat.alpha.at(tt, u);
        if (a == kNegInf) continue;
        // blank transition
        real beta_next;
        if (tt + 1 < g.t_len) {
          beta_next = lat.beta.at(tt + 1, u);
        } else {
          beta_next = u == g.u_len ? 0 : kNegInf;
        }
        if (beta_next != kNegInf) {
          real occ = std::exp(a + lp2.data[g.idx(tt, u, blank_id)] +
                              beta_next - log_p);
          acc.data[g.idx(tt, u, blank_id)] -= up * occ;
        }
        // emit transition
        if (u < g.u_len) {
          real occ = std::exp(a + lp2.data[g.idx(tt, u, targets[u])] +
                              lat.beta.at(tt, u + 1) - log_p);
          acc.data[g.idx(tt, u, targets[u])] -= up * occ;
        }
      }
    }
  };
  return tape.custom_op(Tensor::scalar(lat.loss), {log_probs},
                        std::move(backward), "transducer_loss");
}

real brute_force_nll(const Tensor &log_probs, const std::vector<int> &targets,
                     int t_len, int blank_id, int64_t max_paths) {
  Grid g = make_grid(log_probs, targets, t_len, blank_id);
  // C(T-1+U, U) monotone paths.
  int64_t paths = 1;
  for (int i = 1; i <= g.u_len; ++i) {
    paths = paths * (g.t_len - 1 + i) / i;
    CMM_CHECK(paths <= max_paths, UsageError,
              "brute_force_nll: instance too large (" << paths << "+ paths)");
  }
  const real *lp = log_probs.data.data();
  real total = kNegInf;
  // Depth-first walk over blank/emit decisions.
  struct Frame {
    int t, u;
    real acc;
  };
  std::vector<Frame> stack{{0, 0, 0}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    if (f.t == g.t_len - 1 && f.u == g.u_len) {
      total = log_sum_exp(total, f.acc + lp[g.idx(f.t, f.u, blank_id)]);
      continue;
    }
    if (f.t + 1 < g.t_len)
      stack.push_back({f.t + 1, f.u, f.acc + lp[g.idx(f.t, f.u, blank_id)]});
    if (f.u < g.u_len)
      stack.push_back(
          {f.t, f.u + 1, f.acc + lp[g.idx(f.t, f.u, targets[f.u])]});
  }
  CMM_CHECK(std::isfinite(total), NumericError,
            "brute_force_nll: zero-probability alignment set");
  return -total;
}

real per_utterance_grad(const Utterance &utt, const ChoiceVector &choice,
                        const CmmParams &params, const CmmConfig &cfg,
                        real scale, CmmParams *grad_acc) {
  Tape tape;
  ParamVars pv = register_params(tape, params, true);
  Var log_probs = forward_all_logits(tape, pv, utt, choice, cfg);
  Var loss = transducer_loss(tape, log_probs, utt.targets, utt.t_len(),
                             cfg.blank_id());
  tape.backward(loss);
  accumulate_grads(tape, pv, scale, grad_acc);
  return tape.val(loss).data[0];
}

real per_utterance_loss(const Utterance &utt, const ChoiceVector &choice,
                        const CmmParams &params, const CmmConfig &cfg) {
  Tape tape(false);
  ParamVars pv = register_params(tape, params, false);
  Var log_probs = forward_all_logits(tape, pv, utt, choice, cfg);
  return transducer_nll(tape.val(log_probs), utt.targets, utt.t_len(),
                        cfg.blank_id())
      .loss;
}

}  // namespace cmm
