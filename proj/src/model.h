// src/model.h
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

#ifndef CMM_SRC_MODEL_H_
#define CMM_SRC_MODEL_H_

#include <cstdint>
#include <string>
#include <vector>

#include "common.h"
#include "tensor.h"

namespace cmm {

// ---------------------------------------------------------------------------
// Choice vector: the user's multi-hot language selection and the derived
// combination weights (1/|selection| on selected languages, 0 elsewhere).

struct ChoiceVector {
  std::vector<uint8_t> bits;
  std::vector<real> weights;

  int popcount() const;
  std::vector<int> selected() const;
  bool is_universal() const { return popcount() == 0; }

  // All-zero bits: legal only inside the universal training phase, every
  // other caller must construct a nonempty selection.
  static ChoiceVector universal(int n_languages);
};

ChoiceVector make_choice_vector(const std::vector<int> &selected,
                                int n_languages);

// ---------------------------------------------------------------------------

struct CmmConfig {
  int n_languages = 5;
  int feat_dim = 16;
  int model_dim = 64;
  int ffn_dim = 256;
  int n_layers = 4;
  int n_heads = 4;
  int joint_dim = 64;
  int vocab_size_total = 100;
  std::vector<int> specific_layer_indices = {0, 3};  // bottom and top
  bool causal = true;
  int rel_pos_clip = 16;
  int n_pred_layers = 1;
  bool specific_bias = false;
  // Ablation switches; baked into the model so a trained variant carries
  // its own wiring.
  bool use_specific_embedding = true;
  bool use_encoder_sl = true;
  bool use_prediction_sl = true;

  int blank_id() const { return vocab_size_total; }
  int sos_id() const { return vocab_size_total; }  // row in pred_embed
  void validate() const;
  bool layer_has_specific(int layer_index) const;
};

constexpr real kLayerNormEps = static_cast<real>(1e-5);

// One training/eval example.
struct Utterance {
  Tensor frames;             // [T, feat_dim]
  std::vector<int> targets;  // U token ids in V_total
  int lang_id = 0;

  int t_len() const { return frames.rank() == 2 ? frames.rows() : 0; }
  int u_len() const { return static_cast<int>(targets.size()); }
  void validate(const CmmConfig &cfg) const;
};

// ---------------------------------------------------------------------------
// Parameters. One template so Tensor storage (CmmParams) and tape handles
// (ParamVars) share a single canonical layout and visit order; everything
// that numbers, saves, restores or updates parameters walks this order.

template <typename T>
struct CmmParamsT {
  struct EncLayer {
    T wq, wk, wv, wo;
    T ln1_g, ln1_b;
    T ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    T ln2_g, ln2_b;
  };
  struct Site {
    int layer_index = 0;
    std::vector<int> langs;  // ascending original language ids
    std::vector<T> maps;     // parallel to langs
    std::vector<T> biases;   // empty unless specific_bias
  };
  struct PredLayer {
    T wz, uz, bz, wr, ur, br, wh, uh, bh;
  };

  T input_proj;  // [(feat_dim + N), model_dim]; bit rows start at feat_dim
  T pos_bias;    // [n_heads, 2*clip+1]
  std::vector<EncLayer> encoder;
  std::vector<Site> encoder_specific;  // one per specific layer index
  T pred_embed;                        // [(V+1), model_dim]; last row = sos
  std::vector<PredLayer> pred;
  std::vector<int> pred_specific_langs;
  std::vector<T> pred_specific;  // [model_dim, joint_dim] each
  std::vector<T> pred_specific_bias;
  T joint_u, joint_v, joint_b;
  T output_proj;  // [joint_dim, V+1]; blank is the last column

  // Canonical walk. fn(name, leaf&, is_specific).
  template <typename Fn>
  void visit(Fn &&fn) {
    fn("input_proj", input_proj, false);
    fn("pos_bias", pos_bias, false);
    for (size_t l = 0; l < encoder.size(); ++l) {
      auto &e = encoder[l];
      std::string p = "enc" + std::to_string(l) + ".";
      fn(p + "wq", e.wq, false);
      fn(p + "wk", e.wk, false);
      fn(p + "wv", e.wv, false);
      fn(p + "wo", e.wo, false);
      fn(p + "ln1_g", e.ln1_g, false);
      fn(p + "ln1_b", e.ln1_b, false);
      fn(p + "ffn_w1", e.ffn_w1, false);
      fn(p + "ffn_b1", e.ffn_b1, false);
      fn(p + "ffn_w2", e.ffn_w2, false);
      fn(p + "ffn_b2", e.ffn_b2, false);
      fn(p + "ln2_g", e.ln2_g, false);
      fn(p + "ln2_b", e.ln2_b, false);
    }
    for (auto &site : encoder_specific) {
      std::string p = "spec_enc" + std::to_string(site.layer_index) + ".lang";
      for (size_t k = 0; k < site.maps.size(); ++k) {
        fn(p + std::to_string(site.langs[k]), site.maps[k], true);
        if (!site.biases.empty())
          fn(p + std::to_string(site.langs[k]) + ".bias", site.biases[k],
             true);
      }
    }
    fn("pred_embed", pred_embed, false);
    for (size_t l = 0; l < pred.size(); ++l) {
      auto &r = pred[l];
      std::string p = "pred" + std::to_string(l) + ".";
      fn(p + "wz", r.wz, false);
      fn(p + "uz", r.uz, false);
      fn(p + "bz", r.bz, false);
      fn(p + "wr", r.wr, false);
      fn(p + "ur", r.ur, false);
      fn(p + "br", r.br, false);
      fn(p + "wh", r.wh, false);
      fn(p + "uh", r.uh, false);
      fn(p + "bh", r.bh, false);
    }
    for (size_t k = 0; k < pred_specific.size(); ++k) {
      std::string n = "spec_pred.lang" + std::to_string(pred_specific_langs[k]);
      fn(n, pred_specific[k], true);
      if (!pred_specific_bias.empty())
        fn(n + ".bias", pred_specific_bias[k], true);
    }
    fn("joint_u", joint_u, false);
    fn("joint_v", joint_v, false);
    fn("joint_b", joint_b, false);
    fn("output_proj", output_proj, false);
  }

  template <typename Fn>
  void visit(Fn &&fn) const {
    const_cast<CmmParamsT *>(this)->visit(
        [&fn](const std::string &name, T &leaf, bool spec) {
          fn(name, static_cast<const T &>(leaf), spec);
        });
  }

  std::vector<T *> flatten() {
    std::vector<T *> out;
    visit([&out](const std::string &, T &leaf, bool) { out.push_back(&leaf); });
    return out;
  }
};

using CmmParams = CmmParamsT<Tensor>;
using ParamVars = CmmParamsT<Var>;

// Fresh parameters: scaled-uniform universal weights (gain 1/sqrt(fan_in)),
// zero specific maps and zero choice-bit rows so a new model computes the
// universal function for every choice.
CmmParams init_params(const CmmConfig &cfg, uint64_t seed);

// Shape-compatible all-zero copy (gradient/optimizer accumulators).
CmmParams zeros_like(const CmmParams &p);

struct ParamCounts {
  int64_t universal = 0;
  int64_t specific = 0;
  int64_t total() const { return universal + specific; }
  double overhead() const {
    return universal ? static_cast<double>(specific) / universal : 0.0;
  }
};
ParamCounts count_params(const CmmParams &p);

// ---------------------------------------------------------------------------
// Forward passes. All functions record onto the caller's tape; run with a
// no-grad tape for inference.

// Register every parameter tensor on the tape. `trainable` distinguishes a
// training tape (params accumulate gradients) from pure evaluation.
ParamVars register_params(Tape &tape, const CmmParams &params, bool trainable);

// Gradients for every parameter after tape.backward(), in a CmmParams-shaped
// container, scaled by `scale`.
void accumulate_grads(Tape &tape, ParamVars &vars, real scale,
                      CmmParams *acc);

// Eq. 1: frames with the multi-hot bits appended to every row. Bits, not
// normalized weights, are concatenated.
Var embed_input(Tape &tape, const Tensor &frames, const ChoiceVector &choice,
                const CmmConfig &cfg);

// One encoder layer: post-norm transformer block with the residual language
// adapters applied where configured. `attn_mask` is an additive [T,T] score
// mask (invalid Var for none).
Var encoder_layer_forward(Tape &tape, const ParamVars &pv, Var v_prev,
                          int layer_index, const ChoiceVector &choice,
                          const CmmConfig &cfg, Var attn_mask = {});

// Full encoder stack: [T, model_dim].
Var encode(Tape &tape, const ParamVars &pv, const Tensor &frames,
           const ChoiceVector &choice, const CmmConfig &cfg);

// Prediction network over a target prefix: [U+1, model_dim]; row 0 is the
// start-of-sequence state.
Var predict(Tape &tape, const ParamVars &pv, const std::vector<int> &targets,
            const CmmConfig &cfg);

// Single recurrent step used by decoding; `state` holds one [1,d] Var per
// prediction layer and is advanced in place. Returns the top-layer output.
Var predict_step(Tape &tape, const ParamVars &pv, int token_id,
                 std::vector<Var> *state, const CmmConfig &cfg);
std::vector<Var> predict_initial_state(Tape &tape, const CmmConfig &cfg);

// Joint network logits for every (t,u) pair: [T*(U+1), vocab+1] with blank
// last. Row-major: row t*(U+1)+u.
Var joint_logits(Tape &tape, const ParamVars &pv, Var h_enc, Var h_dec,
                 const ChoiceVector &choice, const CmmConfig &cfg);

// log P(k | t, u) over the full lattice: log-softmax of joint_logits.
Var forward_all_logits(Tape &tape, const ParamVars &pv, const Utterance &utt,
                       const ChoiceVector &choice, const CmmConfig &cfg);

}  // namespace cmm

#endif  // CMM_SRC_MODEL_H_
