#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mrmp/ops.hpp"
#include "mrmp/relgraph.hpp"
#include "mrmp/rng.hpp"
#include "mrmp/tensor.hpp"

namespace mrmp {

struct ModelConfig {
  int d_model = 512;
  int d_inner = 0;  // 0 -> 2 * d_model
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_rel_layers = 2;
  int n_heads = 4;
  double dropout = 0.2;
  int max_seq_len = 500;
  int vocab_size = 0;
  int label_count = 0;
  bool positional_encoding = false;  // on iff the input is sequential
  bool mrmp_enabled = true;
  bool layer_norm = true;            // layer norm after each residual add
  bool relation_relu_every_layer = true;
  bool relation_mean_aggregation = false;  // plain sums by default
  bool decoder_layer_aligned = true;       // decoder layer l attends encoder z^l

  int inner() const { return d_inner > 0 ? d_inner : 2 * d_model; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || vocab_size <= 0 || label_count <= 0 || max_seq_len <= 0 ||
        n_enc_layers <= 0 || n_dec_layers <= 0 || n_rel_layers <= 0) {
      throw config_error("model config: all sizes must be positive");
    }
    if (d_model % n_heads != 0) throw config_error("model config: d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("model config: dropout must lie in [0,1)");
    if (decoder_layer_aligned && n_dec_layers != n_enc_layers) {
      throw config_error("model config: layer-aligned decoding requires equal encoder/decoder depth");
    }
  }
};

// No bias on the key projection: row softmax is invariant to a uniform
// shift of the logits, which makes such a bias exactly gradient-free.
template <typename T>
struct MhaParams {
  Tensor<T> wq, bq, wk, wv, bv, wo, bo;
};

template <typename T>
struct PffParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;
};

template <typename T>
struct EncoderLayerParams {
  MhaParams<T> attn;
  PffParams<T> pff;
  LayerNormParams<T> ln1, ln2;
};

template <typename T>
struct DecoderLayerParams {
  MhaParams<T> attn;  // encoder-decoder attention
  PffParams<T> pff;
  LayerNormParams<T> ln1, ln2;
};

template <typename T>
struct RelationLayerParams {
  Tensor<T> w_plus, w_minus;  // d x d, applied as row-vector @ W
};

template <typename T>
struct RelationParams {
  Tensor<T> label_embed;  // L x d, V^0
  Tensor<T> z_plus;       // 1 x d, initial pulling relation embedding
  std::vector<RelationLayerParams<T>> layers;
  Tensor<T> w_rel;  // d x d, shared relation-embedding update
};

// All trainable state. Linear weights are stored (in x out) and applied as
// x @ W; the math's W v for row vectors is x @ W^T of that, an equivalent
// parameterization.
template <typename T>
struct ModelParams {
  Tensor<T> token_embed;  // vocab x d
  std::vector<EncoderLayerParams<T>> encoder;
  RelationParams<T> relation;
  std::vector<DecoderLayerParams<T>> decoder;

  // Deterministic iteration order; initialization, the optimizer and the
  // checkpoint format all follow it.
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("token_embed", token_embed);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const std::string p = "enc" + std::to_string(l) + ".";
      auto& e = encoder[l];
      fn(p + "attn.wq", e.attn.wq);
      fn(p + "attn.bq", e.attn.bq);
      fn(p + "attn.wk", e.attn.wk);
      fn(p + "attn.wv", e.attn.wv);
      fn(p + "attn.bv", e.attn.bv);
      fn(p + "attn.wo", e.attn.wo);
      fn(p + "attn.bo", e.attn.bo);
      fn(p + "pff.w1", e.pff.w1);
      fn(p + "pff.b1", e.pff.b1);
      fn(p + "pff.w2", e.pff.w2);
      fn(p + "pff.b2", e.pff.b2);
      fn(p + "ln1.gamma", e.ln1.gamma);
      fn(p + "ln1.beta", e.ln1.beta);
      fn(p + "ln2.gamma", e.ln2.gamma);
      fn(p + "ln2.beta", e.ln2.beta);
    }
    fn("rel.label_embed", relation.label_embed);
    fn("rel.z_plus", relation.z_plus);
    for (std::size_t l = 0; l < relation.layers.size(); ++l) {
      const std::string p = "rel.l" + std::to_string(l) + ".";
      fn(p + "w_plus", relation.layers[l].w_plus);
      fn(p + "w_minus", relation.layers[l].w_minus);
    }
    fn("rel.w_rel", relation.w_rel);
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      const std::string p = "dec" + std::to_string(l) + ".";
      auto& d = decoder[l];
      fn(p + "attn.wq", d.attn.wq);
      fn(p + "attn.bq", d.attn.bq);
      fn(p + "attn.wk", d.attn.wk);
      fn(p + "attn.wv", d.attn.wv);
      fn(p + "attn.bv", d.attn.bv);
      fn(p + "attn.wo", d.attn.wo);
      fn(p + "attn.bo", d.attn.bo);
      fn(p + "pff.w1", d.pff.w1);
      fn(p + "pff.b1", d.pff.b1);
      fn(p + "pff.w2", d.pff.w2);
      fn(p + "pff.b2", d.pff.b2);
      fn(p + "ln1.gamma", d.ln1.gamma);
      fn(p + "ln1.beta", d.ln1.beta);
      fn(p + "ln2.gamma", d.ln2.gamma);
      fn(p + "ln2.beta", d.ln2.beta);
    }
  }

  std::vector<Tensor<T>> all() {
    std::vector<Tensor<T>> v;
    visit([&v](const std::string&, Tensor<T>& t) { v.push_back(t); });
    return v;
  }

  std::size_t count() {
    std::size_t n = 0;
    visit([&n](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
  }

  void zero_grads() {
    visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

namespace detail {

template <typename T>
MhaParams<T> make_mha(int d) {
  MhaParams<T> p;
  p.wq = Tensor<T>::zeros({d, d});
  p.bq = Tensor<T>::zeros({d});
  p.wk = Tensor<T>::zeros({d, d});
  p.wv = Tensor<T>::zeros({d, d});
  p.bv = Tensor<T>::zeros({d});
  p.wo = Tensor<T>::zeros({d, d});
  p.bo = Tensor<T>::zeros({d});
  return p;
}

template <typename T>
PffParams<T> make_pff(int d, int inner) {
  PffParams<T> p;
  p.w1 = Tensor<T>::zeros({d, inner});
  p.b1 = Tensor<T>::zeros({inner});
  p.w2 = Tensor<T>::zeros({inner, d});
  p.b2 = Tensor<T>::zeros({d});
  return p;
}

template <typename T>
LayerNormParams<T> make_ln(int d) {
  LayerNormParams<T> p;
  p.gamma = Tensor<T>::zeros({d});
  p.beta = Tensor<T>::zeros({d});
  return p;
}

inline bool name_is_embedding(const std::string& name) {
  return name == "token_embed" || name == "rel.label_embed" || name == "rel.z_plus";
}

inline bool name_is_gain(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
}

}  // namespace detail

// Zero-filled trainable tensors with the right shapes, requires_grad unset.
template <typename T>
ModelParams<T> make_param_skeleton(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  ModelParams<T> params;
  params.token_embed = Tensor<T>::zeros({cfg.vocab_size, d});
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    EncoderLayerParams<T> e;
    e.attn = detail::make_mha<T>(d);
    e.pff = detail::make_pff<T>(d, cfg.inner());
    e.ln1 = detail::make_ln<T>(d);
    e.ln2 = detail::make_ln<T>(d);
    params.encoder.push_back(std::move(e));
  }
  params.relation.label_embed = Tensor<T>::zeros({cfg.label_count, d});
  params.relation.z_plus = Tensor<T>::zeros({1, d});
  for (int l = 0; l < cfg.n_rel_layers; ++l) {
    RelationLayerParams<T> r;
    r.w_plus = Tensor<T>::zeros({d, d});
    r.w_minus = Tensor<T>::zeros({d, d});
    params.relation.layers.push_back(std::move(r));
  }
  params.relation.w_rel = Tensor<T>::zeros({d, d});
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    DecoderLayerParams<T> dec;
    dec.attn = detail::make_mha<T>(d);
    dec.pff = detail::make_pff<T>(d, cfg.inner());
    dec.ln1 = detail::make_ln<T>(d);
    dec.ln2 = detail::make_ln<T>(d);
    params.decoder.push_back(std::move(dec));
  }
  return params;
}

// Glorot-uniform weights, N(0, 1/sqrt(d)) embeddings, zero biases, unit layer
// norm gains. Deterministic per seed; draw order is the visit order.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const int d = cfg.d_model;
  ModelParams<T> params = make_param_skeleton<T>(cfg);
  Rng rng(seed);
  const double embed_sd = 1.0 / std::sqrt(static_cast<double>(d));
  params.visit([&](const std::string& name, Tensor<T>& t) {
    t.set_requires_grad(true);
    if (detail::name_is_embedding(name)) {
      for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, embed_sd));
    } else if (t.rank() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(t.dim(0) + t.dim(1)));
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    } else if (detail::name_is_gain(name)) {
      for (auto& v : t.values()) v = T(1);
    }  // biases and layer-norm shifts stay zero
  });
  return params;
}

// Structural deep copy (fresh storage, same values, requires_grad set).
template <typename T>
ModelParams<T> clone_params(const ModelConfig& cfg, ModelParams<T>& src) {
  ModelParams<T> dst = make_param_skeleton<T>(cfg);
  std::vector<Tensor<T>> from = src.all();
  std::vector<Tensor<T>> to = dst.all();
  if (from.size() != to.size()) throw mismatch_error("clone_params: structure mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].shape() != to[i].shape()) throw mismatch_error("clone_params: shape mismatch");
    to[i].values() = from[i].values();
    to[i].set_requires_grad(true);
  }
  return dst;
}

// Fixed sinusoidal positional encoding, constant (no gradient).
template <typename T>
Tensor<T> positional_encoding(int seq_len, int d) {
  Tensor<T> pe = Tensor<T>::zeros({seq_len, d});
  std::vector<double> inv_freq(static_cast<std::size_t>((d + 1) / 2));
  for (int i = 0; i < d; i += 2) {
    inv_freq[static_cast<std::size_t>(i / 2)] = std::pow(10000.0, -static_cast<double>(i) / d);
  }
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos * inv_freq[static_cast<std::size_t>(i / 2)];
      pe.at(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe.at(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

// Multi-head scaled dot-product attention. `key_mask` marks valid key
// positions (empty means all valid); masked keys receive zero weight.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const std::vector<std::uint8_t>& key_mask, const MhaParams<T>& p,
                               int n_heads) {
  const int d = q_in.dim(1);
  if (d % n_heads != 0) throw config_error("multi_head_attention: d not divisible by heads");
  if (!key_mask.empty()) {
    if (static_cast<int>(key_mask.size()) != k_in.dim(0)) {
      throw shape_error("multi_head_attention: mask length does not match key count");
    }
    bool any = false;
    for (auto m : key_mask) any = any || m != 0;
    if (!any) throw numeric_error("multi_head_attention: all keys masked");
  }
  const int dk = d / n_heads;
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor<T> q = add_rows(matmul(q_in, p.wq), p.bq);
  Tensor<T> k = matmul(k_in, p.wk);
  Tensor<T> v = add_rows(matmul(v_in, p.wv), p.bv);
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor<T> qh = slice_cols(q, h * dk, dk);
    Tensor<T> kh = slice_cols(k, h * dk, dk);
    Tensor<T> vh = slice_cols(v, h * dk, dk);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    if (!key_mask.empty()) scores = masked_fill_cols(scores, key_mask, T(-1e30));
    Tensor<T> attn = softmax_rows(scores);
    heads.push_back(matmul(attn, vh));
  }
  return add_rows(matmul(concat_cols(heads), p.wo), p.bo);
}

// Two linear maps with a ReLU between them.
template <typename T>
Tensor<T> position_wise_ff(const Tensor<T>& x, const PffParams<T>& p) {
  return add_rows(matmul(relu(add_rows(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename T>
struct EncoderOutput {
  std::vector<Tensor<T>> z;  // one S x d representation per layer
};

// Self-attention encoder. Positional encoding is applied only in sequential
// mode; padded positions flow through but are excluded as attention keys.
template <typename T>
EncoderOutput<T> encode(const std::vector<int>& token_ids, const std::vector<std::uint8_t>& mask,
                        ModelParams<T>& params, const ModelConfig& cfg, bool training, Rng& rng) {
  if (static_cast<int>(token_ids.size()) > cfg.max_seq_len) {
    throw config_error("encode: sequence length " + std::to_string(token_ids.size()) +
                       " exceeds max_seq_len " + std::to_string(cfg.max_seq_len) +
                       "; truncate upstream");
  }
  if (token_ids.empty()) throw shape_error("encode: empty token sequence");
  Tensor<T> x = scale(embedding_rows(params.token_embed, token_ids),
                      static_cast<T>(std::sqrt(static_cast<double>(cfg.d_model))));
  if (cfg.positional_encoding) {
    x = add(x, positional_encoding<T>(static_cast<int>(token_ids.size()), cfg.d_model));
  }
  x = dropout(x, cfg.dropout, training, rng);
  EncoderOutput<T> out;
  for (auto& layer : params.encoder) {
    Tensor<T> a = multi_head_attention(x, x, x, mask, layer.attn, cfg.n_heads);
    a = dropout(a, cfg.dropout, training, rng);
    x = add(x, a);
    if (cfg.layer_norm) x = layer_norm_rows(x, layer.ln1.gamma, layer.ln1.beta);
    Tensor<T> f = position_wise_ff(x, layer.pff);
    f = dropout(f, cfg.dropout, training, rng);
    x = add(x, f);
    if (cfg.layer_norm) x = layer_norm_rows(x, layer.ln2.gamma, layer.ln2.beta);
    out.z.push_back(x);
  }
  return out;
}

// Dense constants derived from the relation graph: pulling aggregation matrix
// A+ + I (self loops live on the pulling pathway), pushing matrix A-, and the
// per-node neighborhood sizes that multiply the relation embedding.
template <typename T>
struct GraphTensors {
  bool empty = true;
  Tensor<T> pull;        // L x L
  Tensor<T> push;        // L x L
  Tensor<T> pull_count;  // L x 1
  Tensor<T> push_count;  // L x 1
};

template <typename T>
GraphTensors<T> make_graph_tensors(const RelationGraph& g, bool mean_aggregation = false) {
  GraphTensors<T> t;
  t.empty = g.empty();
  const int l = g.labels;
  t.pull = Tensor<T>::zeros({l, l});
  t.push = Tensor<T>::zeros({l, l});
  t.pull_count = Tensor<T>::zeros({l, 1});
  t.push_count = Tensor<T>::zeros({l, 1});
  for (int i = 0; i < l; ++i) {
    const int dp = g.degree_plus(i) + 1;  // self loop included
    const int dm = g.degree_minus(i);
    const T wp = mean_aggregation ? T(1) / static_cast<T>(dp) : T(1);
    const T wm = mean_aggregation && dm > 0 ? T(1) / static_cast<T>(dm) : T(1);
    t.pull.at(i, i) = wp;
    for (int j = 0; j < l; ++j) {
      if (g.edge_plus(i, j)) t.pull.at(i, j) = wp;
      if (g.edge_minus(i, j)) t.push.at(i, j) = wm;
    }
    t.pull_count.at(i, 0) = mean_aggregation ? T(1) : static_cast<T>(dp);
    t.push_count.at(i, 0) = mean_aggregation ? (dm > 0 ? T(1) : T(0)) : static_cast<T>(dm);
  }
  return t;
}

template <typename T>
struct RelationOutput {
  Tensor<T> v_final;               // L x d label node embeddings V^T
  std::vector<Tensor<T>> z_plus;   // pulling relation embedding per layer (input of each layer)
};

// Compositional message passing over the label graph. Per layer:
//   v_i' = f( sum_{j in N+(i)} (v_j + z+) W+  +  sum_{j in N-(i)} (v_j - z+) W- )
//   z+' = z+ W_rel, with the pushing embedding tied to -z+ throughout.
// The final embeddings are the ReLU of the last layer's output. A graph with
// no edges degenerates to the bypass path: V^T = ReLU(V^0).
template <typename T>
RelationOutput<T> relation_forward(RelationParams<T>& rel, const GraphTensors<T>& graph,
                                   const ModelConfig& cfg) {
  if (graph.pull.dim(0) != rel.label_embed.dim(0)) {
    throw mismatch_error("relation_forward: graph and label embedding sizes disagree");
  }
  RelationOutput<T> out;
  out.z_plus.push_back(rel.z_plus);
  if (!cfg.mrmp_enabled || graph.empty) {
    out.v_final = relu(rel.label_embed);
    return out;
  }
  Tensor<T> v = rel.label_embed;
  Tensor<T> z = rel.z_plus;
  for (std::size_t l = 0; l < rel.layers.size(); ++l) {
    Tensor<T> z_minus = scale(z, T(-1));
    Tensor<T> pull_in = add(matmul(graph.pull, v), matmul(graph.pull_count, z));
    Tensor<T> push_in = add(matmul(graph.push, v), matmul(graph.push_count, z_minus));
    Tensor<T> pre = add(matmul(pull_in, rel.layers[l].w_plus), matmul(push_in, rel.layers[l].w_minus));
    v = cfg.relation_relu_every_layer ? relu(pre) : pre;
    z = matmul(z, rel.w_rel);
    out.z_plus.push_back(z);
  }
  out.v_final = relu(v);
  return out;
}

// Label-feature decoding: u^0 = V^T, then per layer m = u + MHA(u, z^l) and
// u' = m + PFF(m), collecting one U^l per decoder layer.
template <typename T>
std::vector<Tensor<T>> decode_features(const Tensor<T>& v_final, const EncoderOutput<T>& enc,
                                       const std::vector<std::uint8_t>& mask, ModelParams<T>& params,
                                       const ModelConfig& cfg, bool training, Rng& rng) {
  if (cfg.decoder_layer_aligned && enc.z.size() != params.decoder.size()) {
    throw mismatch_error("decode_features: layer-aligned decoding needs one encoder output per decoder layer");
  }
  std::vector<Tensor<T>> u_layers;
  Tensor<T> u = v_final;
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const Tensor<T>& zl = cfg.decoder_layer_aligned ? enc.z[l] : enc.z.back();
    auto& layer = params.decoder[l];
    Tensor<T> a = multi_head_attention(u, zl, zl, mask, layer.attn, cfg.n_heads);
    a = dropout(a, cfg.dropout, training, rng);
    Tensor<T> m = add(u, a);
    if (cfg.layer_norm) m = layer_norm_rows(m, layer.ln1.gamma, layer.ln1.beta);
    Tensor<T> f = position_wise_ff(m, layer.pff);
    f = dropout(f, cfg.dropout, training, rng);
    u = add(m, f);
    if (cfg.layer_norm) u = layer_norm_rows(u, layer.ln2.gamma, layer.ln2.beta);
    u_layers.push_back(u);
  }
  return u_layers;
}

// Voting head: per layer l, f^l_i = <u^l_i, v^T_i>; yhat = sigmoid(sum_l f^l).
template <typename T>
Tensor<T> predict(const std::vector<Tensor<T>>& u_layers, const Tensor<T>& v_final) {
  if (u_layers.empty()) throw shape_error("predict: no decoder outputs");
  Tensor<T> votes = rowwise_dot(u_layers.front(), v_final);
  for (std::size_t l = 1; l < u_layers.size(); ++l) {
    votes = add(votes, rowwise_dot(u_layers[l], v_final));
  }
  return sigmoid(votes);
}

// Single-instance forward pass given precomputed relation-module output.
template <typename T>
Tensor<T> forward_instance(const std::vector<int>& token_ids, const std::vector<std::uint8_t>& mask,
                           ModelParams<T>& params, const RelationOutput<T>& rel,
                           const ModelConfig& cfg, bool training, Rng& rng) {
  EncoderOutput<T> enc = encode(token_ids, mask, params, cfg, training, rng);
  std::vector<Tensor<T>> u = decode_features(rel.v_final, enc, mask, params, cfg, training, rng);
  return predict(u, rel.v_final);
}

}  // namespace mrmp
