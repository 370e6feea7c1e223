// src/loss.h
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

#ifndef CMM_SRC_LOSS_H_
#define CMM_SRC_LOSS_H_

#include <vector>

#include "model.h"
#include "tensor.h"

namespace cmm {

// Transducer lattice convention (see docs/FORMATS.md for the diagram):
// nodes (t,u) with t in [0,T), u in [0,U]. A blank at (t,u) consumes frame t
// and moves to (t+1,u); emitting targets[u] moves to (t,u+1). Every complete
// alignment ends with a blank at (T-1, U). log_probs is [T*(U+1), vocab+1]
// row-major with row t*(U+1)+u, blank in the last column.

struct LossLattice {
  Tensor alpha;  // [T, U+1] forward log-probabilities
  Tensor beta;   // [T, U+1] backward log-probabilities (inclusive of (t,u))
  real loss = 0; // -log P(y|x)
};

// Forward-backward dynamic program. Pure function of the log-prob table.
LossLattice transducer_nll(const Tensor &log_probs,
                           const std::vector<int> &targets, int t_len,
                           int blank_id);

// Same loss recorded on the tape with the analytic occupancy gradient,
// so it composes with forward_all_logits. Returns a scalar Var; fills
// *lattice when non-null.
Var transducer_loss(Tape &tape, Var log_probs,
                    const std::vector<int> &targets, int t_len, int blank_id,
                    LossLattice *lattice = nullptr);

// Exhaustive path enumeration; the test oracle for the DP above. Instances
// with more than `max_paths` alignments are refused.
real brute_force_nll(const Tensor &log_probs, const std::vector<int> &targets,
                     int t_len, int blank_id, int64_t max_paths = 1000000);

// Loss plus gradients w.r.t. every parameter for one utterance; gradients are
// scaled by `scale` and accumulated into *grad_acc (pass zeros_like(params)
// for a fresh gradient).
real per_utterance_grad(const Utterance &utt, const ChoiceVector &choice,
                        const CmmParams &params, const CmmConfig &cfg,
                        real scale, CmmParams *grad_acc);

// Loss only (no tape bookkeeping); used by evaluation.
real per_utterance_loss(const Utterance &utt, const ChoiceVector &choice,
                        const CmmParams &params, const CmmConfig &cfg);

}  // namespace cmm

#endif  // CMM_SRC_LOSS_H_
