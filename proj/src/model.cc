// src/model.cc
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

#include "model.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "rng.h"

namespace cmm {

// ---------------------------------------------------------------------------
// ChoiceVector

int ChoiceVector::popcount() const {
  int c = 0;
  for (uint8_t b : bits) c += b ? 1 : 0;
  return c;
}

std::vector<int> ChoiceVector::selected() const {
  std::vector<int> out;
  for (size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

ChoiceVector ChoiceVector::universal(int n_languages) {
  ChoiceVector c;
  c.bits.assign(static_cast<size_t>(n_languages), 0);
  c.weights.assign(static_cast<size_t>(n_languages), 0);
  return c;
}

ChoiceVector make_choice_vector(const std::vector<int> &selected,
                                int n_languages) {
  CMM_CHECK(n_languages >= 1, UsageError, "choice: need at least one language");
  std::set<int> uniq(selected.begin(), selected.end());
  CMM_CHECK(!uniq.empty(), UsageError, "choice: selection must be nonempty");
  for (int i : uniq) {
    CMM_CHECK(i >= 0 && i < n_languages, UsageError,
              "choice: language index " << i << " outside [0," << n_languages
                                        << ")");
  }
  ChoiceVector c = ChoiceVector::universal(n_languages);
  int k = static_cast<int>(uniq.size());
  real w = static_cast<real>(1) / static_cast<real>(k);
  real running = 0;
  int last = *uniq.rbegin();
  for (int i : uniq) {
    c.bits[static_cast<size_t>(i)] = 1;
    // The last selected weight closes the sum to exactly 1 (1/k rounding can
    // otherwise leave the total one ulp off for some k).
    real wi = (i == last) ? (static_cast<real>(1) - running) : w;
    c.weights[static_cast<size_t>(i)] = wi;
    running += w;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Config / utterance validation

void CmmConfig::validate() const {
  CMM_CHECK(n_languages >= 1, UsageError, "config: n_languages must be >= 1");
  CMM_CHECK(feat_dim >= 1 && model_dim >= 1 && ffn_dim >= 1 && joint_dim >= 1,
            UsageError, "config: dimensions must be positive");
  CMM_CHECK(n_layers >= 1 && n_pred_layers >= 1, UsageError,
            "config: layer counts must be positive");
  CMM_CHECK(model_dim % n_heads == 0, UsageError,
            "config: model_dim " << model_dim << " not divisible by n_heads "
                                 << n_heads);
  CMM_CHECK(vocab_size_total >= 1, UsageError,
            "config: vocab_size_total must be >= 1");
  CMM_CHECK(rel_pos_clip >= 1, UsageError, "config: rel_pos_clip must be >= 1");
  std::set<int> idx(specific_layer_indices.begin(),
                    specific_layer_indices.end());
  CMM_CHECK(idx.size() == specific_layer_indices.size(), UsageError,
            "config: duplicate specific layer index");
  for (int i : specific_layer_indices) {
    CMM_CHECK(i >= 0 && i < n_layers, UsageError,
              "config: specific layer index " << i << " outside [0,"
                                              << n_layers << ")");
  }
}

bool CmmConfig::layer_has_specific(int layer_index) const {
  return std::find(specific_layer_indices.begin(),
                   specific_layer_indices.end(),
                   layer_index) != specific_layer_indices.end();
}

void Utterance::validate(const CmmConfig &cfg) const {
  CMM_CHECK(frames.rank() == 2 && frames.rows() >= 1, UsageError,
            "utterance: need at least one frame");
  CMM_CHECK(frames.cols() == cfg.feat_dim, UsageError,
            "utterance: frame dim " << frames.cols() << " != feat_dim "
                                    << cfg.feat_dim);
  CMM_CHECK(lang_id >= 0 && lang_id < cfg.n_languages, UsageError,
            "utterance: lang_id " << lang_id << " outside [0,"
                                  << cfg.n_languages << ")");
  for (int y : targets) {
    CMM_CHECK(y >= 0 && y < cfg.vocab_size_total, UsageError,
              "utterance: token " << y << " outside [0,"
                                  << cfg.vocab_size_total << ")");
  }
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng &rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  real g = static_cast<real>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (real &v : t.data) v = static_cast<real>(rng.uniform(-g, g));
  return t;
}

}  // namespace

CmmParams init_params(const CmmConfig &cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  int d = cfg.model_dim, f = cfg.ffn_dim, j = cfg.joint_dim;
  int n = cfg.n_languages;
  int vp1 = cfg.vocab_size_total + 1;

  CmmParams p;
  p.input_proj = uniform_init({cfg.feat_dim + n, d}, cfg.feat_dim + n, rng);
  // Choice-bit rows start at zero: a fresh model computes the universal
  // function regardless of the choice vector.
  for (int r = cfg.feat_dim; r < cfg.feat_dim + n; ++r)
    for (int c = 0; c < d; ++c) p.input_proj.at(r, c) = 0;
  p.pos_bias = Tensor::zeros({cfg.n_heads, 2 * cfg.rel_pos_clip + 1});

  p.encoder.resize(static_cast<size_t>(cfg.n_layers));
  for (auto &e : p.encoder) {
    e.wq = uniform_init({d, d}, d, rng);
    e.wk = uniform_init({d, d}, d, rng);
    e.wv = uniform_init({d, d}, d, rng);
    e.wo = uniform_init({d, d}, d, rng);
    e.ln1_g = Tensor::full({d}, 1);
    e.ln1_b = Tensor::zeros({d});
    e.ffn_w1 = uniform_init({d, f}, d, rng);
    e.ffn_b1 = Tensor::zeros({f});
    e.ffn_w2 = uniform_init({f, d}, f, rng);
    e.ffn_b2 = Tensor::zeros({d});
    e.ln2_g = Tensor::full({d}, 1);
    e.ln2_b = Tensor::zeros({d});
  }

  std::vector<int> sites = cfg.specific_layer_indices;
  std::sort(sites.begin(), sites.end());
  for (int li : sites) {
    CmmParams::Site site;
    site.layer_index = li;
    for (int lang = 0; lang < n; ++lang) {
      site.langs.push_back(lang);
      site.maps.push_back(Tensor::zeros({d, d}));
      if (cfg.specific_bias) site.biases.push_back(Tensor::zeros({d}));
    }
    p.encoder_specific.push_back(std::move(site));
  }

  p.pred_embed = uniform_init({vp1, d}, d, rng);
  p.pred.resize(static_cast<size_t>(cfg.n_pred_layers));
  for (auto &r : p.pred) {
    r.wz = uniform_init({d, d}, d, rng);
    r.uz = uniform_init({d, d}, d, rng);
    r.bz = Tensor::zeros({d});
    r.wr = uniform_init({d, d}, d, rng);
    r.ur = uniform_init({d, d}, d, rng);
    r.br = Tensor::zeros({d});
    r.wh = uniform_init({d, d}, d, rng);
    r.uh = uniform_init({d, d}, d, rng);
    r.bh = Tensor::zeros({d});
  }

  for (int lang = 0; lang < n; ++lang) {
    p.pred_specific_langs.push_back(lang);
    p.pred_specific.push_back(Tensor::zeros({d, j}));
    if (cfg.specific_bias) p.pred_specific_bias.push_back(Tensor::zeros({j}));
  }

  p.joint_u = uniform_init({d, j}, d, rng);
  p.joint_v = uniform_init({d, j}, d, rng);
  p.joint_b = Tensor::zeros({j});
  p.output_proj = uniform_init({j, vp1}, j, rng);
  return p;
}

CmmParams zeros_like(const CmmParams &p) {
  CmmParams z = p;
  z.visit([](const std::string &, Tensor &t, bool) {
    std::fill(t.data.begin(), t.data.end(), static_cast<real>(0));
  });
  return z;
}

ParamCounts count_params(const CmmParams &p) {
  ParamCounts c;
  p.visit([&c](const std::string &, const Tensor &t, bool specific) {
    (specific ? c.specific : c.universal) += t.numel();
  });
  return c;
}

// ---------------------------------------------------------------------------
// Forward

ParamVars register_params(Tape &tape, const CmmParams &params,
                          bool trainable) {
  ParamVars pv;
  // Mirror the structure, then fill leaves in canonical order.
  pv.encoder.resize(params.encoder.size());
  pv.encoder_specific.resize(params.encoder_specific.size());
  for (size_t s = 0; s < params.encoder_specific.size(); ++s) {
    pv.encoder_specific[s].layer_index =
        params.encoder_specific[s].layer_index;
    pv.encoder_specific[s].langs = params.encoder_specific[s].langs;
    pv.encoder_specific[s].maps.resize(params.encoder_specific[s].maps.size());
    pv.encoder_specific[s].biases.resize(
        params.encoder_specific[s].biases.size());
  }
  pv.pred.resize(params.pred.size());
  pv.pred_specific_langs = params.pred_specific_langs;
  pv.pred_specific.resize(params.pred_specific.size());
  pv.pred_specific_bias.resize(params.pred_specific_bias.size());

  std::vector<Var *> dst = pv.flatten();
  size_t i = 0;
  params.visit([&](const std::string &, const Tensor &t, bool) {
    *dst[i++] = trainable ? tape.param(t) : tape.constant(t);
  });
  CMM_CHECK(i == dst.size(), InternalError, "register_params: layout mismatch");
  return pv;
}

void accumulate_grads(Tape &tape, ParamVars &vars, real scale,
                      CmmParams *acc) {
  std::vector<Var *> src = vars.flatten();
  std::vector<Tensor *> dst = acc->flatten();
  CMM_CHECK(src.size() == dst.size(), InternalError,
            "accumulate_grads: layout mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    if (!tape.has_grad(*src[i])) continue;  // param not touched by this graph
    const Tensor &g = tape.grad(*src[i]);
    Tensor &out = *dst[i];
    CMM_CHECK(g.same_shape(out), InternalError, "gradient shape mismatch");
    for (size_t k = 0; k < out.data.size(); ++k)
      out.data[k] += scale * g.data[k];
  }
}

Var embed_input(Tape &tape, const Tensor &frames, const ChoiceVector &choice,
                const CmmConfig &cfg) {
  CMM_CHECK(frames.rank() == 2 && frames.rows() >= 1, UsageError,
            "embed_input: need at least one frame");
  CMM_CHECK(frames.cols() == cfg.feat_dim, UsageError,
            "embed_input: frame dim " << frames.cols() << " != feat_dim "
                                      << cfg.feat_dim);
  CMM_CHECK(static_cast<int>(choice.bits.size()) == cfg.n_languages,
            UsageError, "embed_input: choice has " << choice.bits.size()
                                                   << " languages, config "
                                                   << cfg.n_languages);
  int t_len = frames.rows();
  Tensor bits = Tensor::zeros({t_len, cfg.n_languages});
  if (cfg.use_specific_embedding) {
    for (int t = 0; t < t_len; ++t)
      for (int l = 0; l < cfg.n_languages; ++l)
        bits.at(t, l) = choice.bits[static_cast<size_t>(l)] ? 1 : 0;
  }
  return tape.concat_cols(tape.constant(frames), tape.constant(bits));
}

namespace {

// w_i * Linear_i(x) summed over the selected languages, in stored order.
// Returns an invalid Var when nothing is selected.
Var specific_residual(Tape &tape, Var x, const std::vector<int> &langs,
                      const std::vector<Var> &maps,
                      const std::vector<Var> &biases,
                      const ChoiceVector &choice) {
  Var acc{};
  for (size_t k = 0; k < langs.size(); ++k) {
    int lang = langs[k];
    CMM_CHECK(lang >= 0 && lang < static_cast<int>(choice.bits.size()),
              UsageError, "specific map for language " << lang
                                                       << " outside choice");
    if (!choice.bits[static_cast<size_t>(lang)]) continue;
    real w = choice.weights[static_cast<size_t>(lang)];
    Var term = tape.matmul(x, maps[k]);
    if (!biases.empty()) term = tape.add_row(term, biases[k]);
    term = tape.scale_add(term, w, 0);
    acc = acc.valid() ? tape.add(acc, term) : term;
  }
  return acc;
}

}  // namespace

Var encoder_layer_forward(Tape &tape, const ParamVars &pv, Var v_prev,
                          int layer_index, const ChoiceVector &choice,
                          const CmmConfig &cfg, Var attn_mask) {
  CMM_CHECK(layer_index >= 0 &&
                layer_index < static_cast<int>(pv.encoder.size()),
            UsageError, "encoder layer " << layer_index << " out of range");
  const ParamVars::EncLayer &e = pv.encoder[static_cast<size_t>(layer_index)];
  int t_len = tape.val(v_prev).rows();
  int dh = cfg.model_dim / cfg.n_heads;
  real inv_sqrt_dh = static_cast<real>(1.0 / std::sqrt(static_cast<double>(dh)));

  Var q = tape.matmul(v_prev, e.wq);
  Var k = tape.matmul(v_prev, e.wk);
  Var v = tape.matmul(v_prev, e.wv);

  Var heads{};
  for (int h = 0; h < cfg.n_heads; ++h) {
    Var qh = tape.slice_cols(q, h * dh, dh);
    Var kh = tape.slice_cols(k, h * dh, dh);
    Var vh = tape.slice_cols(v, h * dh, dh);
    Var scores = tape.scale_add(tape.matmul_nt(qh, kh), inv_sqrt_dh, 0);
    scores = tape.add(scores,
                      tape.rel_pos_bias(pv.pos_bias, h, t_len,
                                        cfg.rel_pos_clip));
    if (attn_mask.valid()) scores = tape.add(scores, attn_mask);
    Var oh = tape.matmul(tape.softmax_rows(scores), vh);
    heads = heads.valid() ? tape.concat_cols(heads, oh) : oh;
  }
  Var attn_out = tape.matmul(heads, e.wo);
  Var h_att = tape.layer_norm(tape.add(attn_out, v_prev), e.ln1_g, e.ln1_b,
                              kLayerNormEps);

  Var ffn = tape.add_row(
      tape.matmul(tape.relu(tape.add_row(tape.matmul(h_att, e.ffn_w1),
                                         e.ffn_b1)),
                  e.ffn_w2),
      e.ffn_b2);
  Var h_uni = tape.layer_norm(tape.add(ffn, h_att), e.ln2_g, e.ln2_b,
                              kLayerNormEps);

  if (!cfg.use_encoder_sl || !cfg.layer_has_specific(layer_index))
    return h_uni;
  for (const auto &site : pv.encoder_specific) {
    if (site.layer_index != layer_index) continue;
    // Eq. 4 reads the specific maps off h_att, not h_uni.
    Var res = specific_residual(tape, h_att, site.langs, site.maps,
                                site.biases, choice);
    return res.valid() ? tape.add(h_uni, res) : h_uni;
  }
  return h_uni;
}

Var encode(Tape &tape, const ParamVars &pv, const Tensor &frames,
           const ChoiceVector &choice, const CmmConfig &cfg) {
  Var x = tape.matmul(embed_input(tape, frames, choice, cfg), pv.input_proj);
  int t_len = frames.rows();
  Var mask{};
  if (cfg.causal && t_len > 1) {
    Tensor m = Tensor::zeros({t_len, t_len});
    for (int i = 0; i < t_len; ++i)
      for (int s = i + 1; s < t_len; ++s)
        m.at(i, s) = static_cast<real>(-1e9);
    mask = tape.constant(std::move(m));
  }
  for (int l = 0; l < cfg.n_layers; ++l)
    x = encoder_layer_forward(tape, pv, x, l, choice, cfg, mask);
  return x;
}

std::vector<Var> predict_initial_state(Tape &tape, const CmmConfig &cfg) {
  std::vector<Var> state;
  for (int l = 0; l < cfg.n_pred_layers; ++l)
    state.push_back(tape.constant(Tensor::zeros({1, cfg.model_dim})));
  return state;
}

namespace {

Var gru_step(Tape &tape, const ParamVars::PredLayer &r, Var x, Var h) {
  Var z = tape.sigmoid(tape.add_row(
      tape.add(tape.matmul(x, r.wz), tape.matmul(h, r.uz)), r.bz));
  Var rr = tape.sigmoid(tape.add_row(
      tape.add(tape.matmul(x, r.wr), tape.matmul(h, r.ur)), r.br));
  Var cand = tape.tanh(tape.add_row(
      tape.add(tape.matmul(x, r.wh), tape.matmul(tape.mul(rr, h), r.uh)),
      r.bh));
  // h' = (1 - z) * h + z * cand
  return tape.add(tape.mul(tape.scale_add(z, -1, 1), h), tape.mul(z, cand));
}

}  // namespace

Var predict_step(Tape &tape, const ParamVars &pv, int token_id,
                 std::vector<Var> *state, const CmmConfig &cfg) {
  CMM_CHECK(token_id >= 0 && token_id <= cfg.vocab_size_total, UsageError,
            "predict: token id " << token_id << " outside [0,"
                                 << cfg.vocab_size_total << "]");
  CMM_CHECK(state && state->size() == static_cast<size_t>(cfg.n_pred_layers),
            UsageError, "predict: bad recurrent state");
  Var x = tape.gather_rows(pv.pred_embed, {token_id});
  for (size_t l = 0; l < state->size(); ++l) {
    Var h = gru_step(tape, pv.pred[l], x, (*state)[l]);
    (*state)[l] = h;
    x = h;
  }
  return x;
}

Var predict(Tape &tape, const ParamVars &pv, const std::vector<int> &targets,
            const CmmConfig &cfg) {
  std::vector<Var> state = predict_initial_state(tape, cfg);
  std::vector<Var> rows;
  rows.reserve(targets.size() + 1);
  rows.push_back(predict_step(tape, pv, cfg.sos_id(), &state, cfg));
  for (int y : targets) {
    CMM_CHECK(y >= 0 && y < cfg.vocab_size_total, UsageError,
              "predict: target token " << y << " outside [0,"
                                       << cfg.vocab_size_total << ")");
    rows.push_back(predict_step(tape, pv, y, &state, cfg));
  }
  return tape.stack_rows(rows);
}

Var joint_logits(Tape &tape, const ParamVars &pv, Var h_enc, Var h_dec,
                 const ChoiceVector &choice, const CmmConfig &cfg) {
  Var a = tape.matmul(h_enc, pv.joint_u);
  Var b = tape.matmul(h_dec, pv.joint_v);
  if (cfg.use_prediction_sl) {
    Var res = specific_residual(tape, h_dec, pv.pred_specific_langs,
                                pv.pred_specific, pv.pred_specific_bias,
                                choice);
    if (res.valid()) b = tape.add(b, res);
  }
  b = tape.add_row(b, pv.joint_b);
  Var z = tape.tanh(tape.pairwise_row_sum(a, b));
  return tape.matmul(z, pv.output_proj);
}

Var forward_all_logits(Tape &tape, const ParamVars &pv, const Utterance &utt,
                       const ChoiceVector &choice, const CmmConfig &cfg) {
  utt.validate(cfg);
  Var h_enc = encode(tape, pv, utt.frames, choice, cfg);
  Var h_dec = predict(tape, pv, utt.targets, cfg);
  return tape.log_softmax_rows(
      joint_logits(tape, pv, h_enc, h_dec, choice, cfg));
}

}  // namespace cmm
