#pragma once

// The adversarial intervener: one single-head Transformer block run over the
// concatenated rationale and environment rows.

#include <cmath>
#include <string>
#include <vector>

#include "fig/nn.hpp"
#include "fig/regularizer.hpp"
#include "fig/tensor.hpp"

namespace fig {

struct IntervenerParams {
  Linear query, key, value;  // d -> d
  Mlp ffn;                   // d -> d -> d -> d
  bool layer_norm = false;
  Tensor ln_attn_gain, ln_attn_bias, ln_ffn_gain, ln_ffn_bias;

  static IntervenerParams init(std::size_t d, Rng& rng, bool layer_norm = false) {
    IntervenerParams p;
    p.query = Linear::init(d, d, rng);
    p.key = Linear::init(d, d, rng);
    p.value = Linear::init(d, d, rng);
    p.ffn = Mlp::init({d, d, d, d}, rng);
    p.layer_norm = layer_norm;
    p.ln_attn_gain = Tensor(Shape{d}, std::vector<double>(d, 1.0), true);
    p.ln_attn_bias = Tensor::zeros({d}, true);
    p.ln_ffn_gain = Tensor(Shape{d}, std::vector<double>(d, 1.0), true);
    p.ln_ffn_bias = Tensor::zeros({d}, true);
    return p;
  }

  std::size_t dim() const { return query.in(); }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    ffn.visit(prefix + ".ffn", f);
    if (layer_norm) {
      f(prefix + ".ln_attn.gain", ln_attn_gain);
      f(prefix + ".ln_attn.bias", ln_attn_bias);
      f(prefix + ".ln_ffn.gain", ln_ffn_gain);
      f(prefix + ".ln_ffn.bias", ln_ffn_bias);
    }
  }
};

struct AttentionOutput {
  Tensor h;  // P V + H
  Tensor p;  // row-stochastic t x t
};

inline AttentionOutput attention(const Tensor& hcat, const IntervenerParams& p) {
  if (hcat.rank() != 2 || hcat.rows() < 1) throw DimensionError("attention: need at least one row, got " + shape_str(hcat.shape()));
  if (hcat.cols() != p.dim())
    throw DimensionError("attention: width " + std::to_string(hcat.cols()) + " vs " + std::to_string(p.dim()));
  const Tensor x = p.layer_norm ? layer_norm_rows(hcat, p.ln_attn_gain, p.ln_attn_bias) : hcat;
  const Tensor q = p.query(x), k = p.key(x), v = p.value(x);
  const Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(p.dim())));
  Tensor attn = softmax_rows(logits);
  return {add(matmul(attn, v), hcat), attn};
}

/// H + FFN(H), with the FFN input layer-normalized when enabled.
inline Tensor ffn_block(const Tensor& h, const IntervenerParams& p) {
  if (h.cols() != p.dim()) throw DimensionError("ffn_block: width " + std::to_string(h.cols()) + " vs " + std::to_string(p.dim()));
  const Tensor x = p.layer_norm ? layer_norm_rows(h, p.ln_ffn_gain, p.ln_ffn_bias) : h;
  return add(p.ffn(x), h);
}

struct AttentionRecord {
  Tensor p;
  std::vector<double> s;
  std::size_t k = 0;
  Tensor cut;  // differentiable cut_regularizer(P, s)
  double cut_value() const { return cut.item(); }
  std::size_t t() const { return s.size(); }
};

struct Intervention {
  Tensor h_inter;
  AttentionRecord record;
};

inline Intervention intervene(const Tensor& h_ra, const Tensor& h_env, const IntervenerParams& p) {
  if (h_ra.rank() != 2 || h_ra.rows() < 1) throw DimensionError("intervene: rationale must have at least one row");
  const Tensor hcat = concat_rows(h_ra, h_env);
  auto att = attention(hcat, p);
  Intervention out;
  out.h_inter = ffn_block(att.h, p);
  out.record.k = h_ra.rows();
  out.record.s = indicator_vector(h_ra.rows(), hcat.rows());
  out.record.p = att.p;
  out.record.cut = cut_regularizer(att.p, out.record.s);
  return out;
}

/// Graph-level additive intervention: h_ra + h_env.
inline Tensor intervene_graph_add(const Tensor& h_ra, const Tensor& h_env) {
  if (h_ra.size() != h_env.size())
    throw DimensionError("intervene_graph_add: " + shape_str(h_ra.shape()) + " vs " + shape_str(h_env.shape()));
  return add(h_ra, h_env);
}

}  // namespace fig
