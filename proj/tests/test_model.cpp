#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mrmp/model.hpp"
#include "mrmp/rng.hpp"

using namespace mrmp;

namespace {

ModelConfig tiny_config(int d = 8, int heads = 2, int vocab = 12, int labels = 4) {
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.vocab_size = vocab;
  cfg.label_count = labels;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.n_rel_layers = 1;
  cfg.dropout = 0.0;
  return cfg;
}

void set_identity(Tensor<float>& t) {
  std::fill(t.values().begin(), t.values().end(), 0.0f);
  for (int i = 0; i < t.dim(0); ++i) t.at(i, i) = 1.0f;
}

void set_zero(Tensor<float>& t) { std::fill(t.values().begin(), t.values().end(), 0.0f); }

}  // namespace

TEST_CASE("init is deterministic per seed and seed-sensitive") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> a = init_params<float>(cfg, 7);
  ModelParams<float> b = init_params<float>(cfg, 7);
  ModelParams<float> c = init_params<float>(cfg, 8);
  std::vector<Tensor<float>> av = a.all(), bv = b.all(), cv = c.all();
  REQUIRE(av.size() == bv.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < av.size(); ++i) {
    CHECK(av[i].values() == bv[i].values());
    any_diff = any_diff || av[i].values() != cv[i].values();
  }
  CHECK(any_diff);
  CHECK(a.count() == c.count());
}

TEST_CASE("head width follows d_model / n_heads") {
  ModelConfig cfg = tiny_config(512, 4, 100, 10);
  CHECK(cfg.head_dim() == 128);
  ModelConfig bad = tiny_config(10, 4);
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("single head with zero query attends uniformly") {
  // wq = 0 makes every score zero; with wv = wo = I the output is the mean of
  // the unmasked value rows.
  ModelConfig cfg = tiny_config(4, 1);
  ModelParams<float> params = init_params<float>(cfg, 3);
  auto& attn = params.encoder[0].attn;
  set_zero(attn.wq);
  set_zero(attn.bq);
  set_identity(attn.wk);
  set_identity(attn.wv);
  set_zero(attn.bv);
  set_identity(attn.wo);
  set_zero(attn.bo);

  Tensor<float> q = Tensor<float>::from_values({1, 4}, {5.0f, -1.0f, 2.0f, 0.0f});
  Tensor<float> kv = Tensor<float>::from_values(
      {3, 4}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f, 8.0f, 100.0f, 100.0f, 100.0f, 100.0f});
  std::vector<std::uint8_t> mask{1, 1, 0};
  Tensor<float> out = multi_head_attention(q, kv, kv, mask, attn, 1);
  CHECK(out.at(0, 0) == doctest::Approx(3.0f));
  CHECK(out.at(0, 1) == doctest::Approx(4.0f));
  CHECK(out.at(0, 2) == doctest::Approx(5.0f));
  CHECK(out.at(0, 3) == doctest::Approx(6.0f));
}

TEST_CASE("a single key forces attention weight one regardless of the query") {
  ModelConfig cfg = tiny_config(4, 2);
  ModelParams<float> params = init_params<float>(cfg, 5);
  auto& attn = params.encoder[0].attn;
  set_identity(attn.wv);
  set_zero(attn.bv);
  set_identity(attn.wo);
  set_zero(attn.bo);
  Tensor<float> kv = Tensor<float>::from_values({1, 4}, {2.0f, -3.0f, 0.5f, 1.0f});
  for (float qv : {-4.0f, 0.0f, 9.0f}) {
    Tensor<float> q = Tensor<float>::full({2, 4}, qv);
    Tensor<float> out = multi_head_attention(q, kv, kv, {}, attn, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) CHECK(out.at(i, j) == doctest::Approx(kv.at(0, j)));
  }
}

TEST_CASE("attention weights: rows sum to 1 and masked columns get weight 0") {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const int q = 1 + rng.uniform_int(5);
    const int k = 2 + rng.uniform_int(6);
    Tensor<float> scores = Tensor<float>::zeros({q, k});
    for (auto& v : scores.values()) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(k), 0);
    const int keep = 1 + rng.uniform_int(k);
    for (int i = 0; i < keep; ++i) mask[static_cast<std::size_t>(i)] = 1;
    Tensor<float> w = softmax_rows(masked_fill_cols(scores, mask, -1e30f));
    for (int i = 0; i < q; ++i) {
      float sum = 0.0f;
      for (int j = 0; j < k; ++j) {
        sum += w.at(i, j);
        if (!mask[static_cast<std::size_t>(j)]) CHECK(w.at(i, j) == 0.0f);
      }
      CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
    }
  }
}

TEST_CASE("binary-vector encoding is set-equivariant; sequential is not") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params<float>(cfg, 11);
  Rng idle(0);
  std::vector<int> tokens{3, 7, 1, 9};
  std::vector<int> permuted{9, 1, 3, 7};
  const std::vector<int> perm{3, 2, 0, 1};  // permuted[i] = tokens[perm[i]]
  std::vector<std::uint8_t> mask(4, 1);

  cfg.positional_encoding = false;
  EncoderOutput<float> a = encode(tokens, mask, params, cfg, false, idle);
  EncoderOutput<float> b = encode(permuted, mask, params, cfg, false, idle);
  REQUIRE(a.z.size() == 2);
  for (std::size_t l = 0; l < a.z.size(); ++l) {
    CHECK(a.z[l].dim(0) == 4);
    CHECK(a.z[l].dim(1) == cfg.d_model);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < cfg.d_model; ++j)
        CHECK(b.z[l].at(i, j) == doctest::Approx(a.z[l].at(perm[static_cast<std::size_t>(i)], j)).epsilon(1e-6));
  }

  cfg.positional_encoding = true;
  EncoderOutput<float> c = encode(tokens, mask, params, cfg, false, idle);
  EncoderOutput<float> d = encode(permuted, mask, params, cfg, false, idle);
  bool differs = false;
  for (std::size_t i = 0; i < c.z[1].size(); ++i)
    differs = differs || std::abs(c.z[1].values()[i] - d.z[1].values()[i]) > 1e-6f;
  CHECK(differs);
}

TEST_CASE("encoder output is S x 512 per layer at the reference width") {
  ModelConfig cfg = tiny_config(512, 4, 30, 6);
  ModelParams<float> params = init_params<float>(cfg, 2);
  Rng idle(0);
  std::vector<int> tokens{5, 17, 23};
  std::vector<std::uint8_t> mask{1, 1, 1};
  EncoderOutput<float> out = encode(tokens, mask, params, cfg, false, idle);
  REQUIRE(out.z.size() == 2);
  for (const auto& z : out.z) {
    CHECK(z.dim(0) == 3);
    CHECK(z.dim(1) == 512);
  }
}

TEST_CASE("encode rejects sequences beyond max_seq_len") {
  ModelConfig cfg = tiny_config();
  cfg.max_seq_len = 2;
  ModelParams<float> params = init_params<float>(cfg, 1);
  Rng idle(0);
  std::vector<int> tokens{1, 2, 3};
  std::vector<std::uint8_t> mask{1, 1, 1};
  CHECK_THROWS_AS(encode(tokens, mask, params, cfg, false, idle), config_error);
}

TEST_CASE("relation layer: isolated node with identity weights and zero relation embedding") {
  ModelConfig cfg = tiny_config(2, 1, 6, 3);
  cfg.n_rel_layers = 1;
  ModelParams<float> params = init_params<float>(cfg, 9);
  set_identity(params.relation.layers[0].w_plus);
  set_zero(params.relation.layers[0].w_minus);
  set_zero(params.relation.z_plus);
  params.relation.label_embed = Tensor<float>::param({3, 2}, {0.5f, -0.75f, 1.0f, 2.0f, -3.0f, 0.25f});

  // label 2 is isolated; labels 0-1 share a pulling edge
  RelationGraph graph(3, 0.05);
  graph.add_edge(0, 1, Relation::pulling);
  GraphTensors<float> gt = make_graph_tensors<float>(graph, false);
  RelationOutput<float> out = relation_forward(params.relation, gt, cfg);
  // v_2' = ReLU(v_2): only the self loop contributes
  CHECK(out.v_final.at(2, 0) == doctest::Approx(0.0f));
  CHECK(out.v_final.at(2, 1) == doctest::Approx(0.25f));
  // v_0' = ReLU(v_0 + v_1)
  CHECK(out.v_final.at(0, 0) == doctest::Approx(1.5f));
  CHECK(out.v_final.at(0, 1) == doctest::Approx(1.25f));
}

TEST_CASE("relation layer matches a hand-evaluated two-label pulling pair") {
  // One layer, d=2, pulling edge between the two labels.
  // W+ (math convention, applied to column vectors) = [[1, 2], [0, 1]],
  // stored transposed since rows here are row-vectors. W- = 0. z+ = (0.1, -0.2).
  ModelConfig cfg = tiny_config(2, 1, 6, 2);
  cfg.n_rel_layers = 1;
  ModelParams<float> params = init_params<float>(cfg, 1);
  params.relation.layers[0].w_plus = Tensor<float>::param({2, 2}, {1.0f, 0.0f, 2.0f, 1.0f});
  set_zero(params.relation.layers[0].w_minus);
  params.relation.z_plus = Tensor<float>::param({1, 2}, {0.1f, -0.2f});
  params.relation.label_embed = Tensor<float>::param({2, 2}, {1.0f, 2.0f, -0.5f, 0.5f});

  RelationGraph graph(2, 0.05);
  graph.add_edge(0, 1, Relation::pulling);
  GraphTensors<float> gt = make_graph_tensors<float>(graph, false);
  RelationOutput<float> out = relation_forward(params.relation, gt, cfg);

  // Hand evaluation of the update for label 0, neighbors {0 (self), 1}:
  //   sum_j W+ (v_j + z+) = W+ ((1.1, 1.8) + (-0.4, 0.3))
  //   W+ (1.1, 1.8)^T = (1.1 + 3.6, 1.8) = (4.7, 1.8)
  //   W+ (-0.4, 0.3)^T = (-0.4 + 0.6, 0.3) = (0.2, 0.3)
  //   pre_0 = (4.9, 2.1); ReLU keeps both.
  CHECK(out.v_final.at(0, 0) == doctest::Approx(4.9f).epsilon(1e-5));
  CHECK(out.v_final.at(0, 1) == doctest::Approx(2.1f).epsilon(1e-5));
  // label 1 sees the same neighborhood sum: identical update.
  CHECK(out.v_final.at(1, 0) == doctest::Approx(4.9f).epsilon(1e-5));
  CHECK(out.v_final.at(1, 1) == doctest::Approx(2.1f).epsilon(1e-5));
}

TEST_CASE("pushing pathway receives the negated relation embedding") {
  // W+ = 0 (kills the self-loop pathway), W- = I: v_i' = ReLU(v_j - z+).
  ModelConfig cfg = tiny_config(2, 1, 6, 2);
  cfg.n_rel_layers = 1;
  ModelParams<float> params = init_params<float>(cfg, 1);
  set_zero(params.relation.layers[0].w_plus);
  set_identity(params.relation.layers[0].w_minus);
  params.relation.z_plus = Tensor<float>::param({1, 2}, {1.0f, -2.0f});
  params.relation.label_embed = Tensor<float>::param({2, 2}, {3.0f, 1.0f, 2.0f, 0.5f});
  RelationGraph graph(2, 0.05);
  graph.add_edge(0, 1, Relation::pushing);
  GraphTensors<float> gt = make_graph_tensors<float>(graph, false);
  RelationOutput<float> out = relation_forward(params.relation, gt, cfg);
  // v_0' = ReLU(v_1 - z+) = ReLU(1, 2.5)
  CHECK(out.v_final.at(0, 0) == doctest::Approx(1.0f));
  CHECK(out.v_final.at(0, 1) == doctest::Approx(2.5f));
  // v_1' = ReLU(v_0 - z+) = ReLU(2, 3)
  CHECK(out.v_final.at(1, 0) == doctest::Approx(2.0f));
  CHECK(out.v_final.at(1, 1) == doctest::Approx(3.0f));
}

TEST_CASE("ablation path equals the degenerate-graph path") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params<float>(cfg, 6);
  RelationGraph empty(cfg.label_count, 0.05);
  GraphTensors<float> gt = make_graph_tensors<float>(empty, false);

  cfg.mrmp_enabled = false;
  RelationOutput<float> bypass = relation_forward(params.relation, gt, cfg);
  cfg.mrmp_enabled = true;
  RelationOutput<float> degenerate = relation_forward(params.relation, gt, cfg);
  CHECK(bypass.v_final.values() == degenerate.v_final.values());

  // and both equal ReLU(V^0)
  for (std::size_t i = 0; i < bypass.v_final.size(); ++i) {
    const float v0 = params.relation.label_embed.values()[i];
    CHECK(bypass.v_final.values()[i] == std::max(0.0f, v0));
  }
}

TEST_CASE("decoder with zeroed weights is a pure residual pass-through") {
  ModelConfig cfg = tiny_config();
  cfg.layer_norm = false;  // residual identity requires the raw residual path
  ModelParams<float> params = init_params<float>(cfg, 4);
  for (auto& layer : params.decoder) {
    set_zero(layer.attn.wq);
    set_zero(layer.attn.bq);
    set_zero(layer.attn.wk);
    set_zero(layer.attn.wv);
    set_zero(layer.attn.bv);
    set_zero(layer.attn.wo);
    set_zero(layer.attn.bo);
    set_zero(layer.pff.w1);
    set_zero(layer.pff.b1);
    set_zero(layer.pff.w2);
    set_zero(layer.pff.b2);
  }
  Rng idle(0);
  std::vector<int> tokens{1, 2, 3};
  std::vector<std::uint8_t> mask{1, 1, 1};
  EncoderOutput<float> enc = encode(tokens, mask, params, cfg, false, idle);
  RelationGraph graph(cfg.label_count, 0.05);
  graph.add_edge(0, 1, Relation::pulling);
  RelationOutput<float> rel =
      relation_forward(params.relation, make_graph_tensors<float>(graph, false), cfg);
  std::vector<Tensor<float>> u = decode_features(rel.v_final, enc, mask, params, cfg, false, idle);
  REQUIRE(u.size() == 2);
  for (const auto& ul : u) {
    CHECK(ul.dim(0) == cfg.label_count);
    CHECK(ul.dim(1) == cfg.d_model);
    CHECK(ul.values() == rel.v_final.values());
  }
}

TEST_CASE("decoder hand evaluation with a single-token encoder output") {
  // d=2, one head, one decoder layer, layer norm off. With wq=0 the attention
  // over the single encoder position has weight 1, so with wv=wo=I the
  // attention output is z itself: m_i = u_i + z. The identity PFF adds the
  // ReLU of m back: u' = m + ReLU(m).
  ModelConfig cfg = tiny_config(2, 1, 6, 2);
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.layer_norm = false;
  ModelParams<float> params = init_params<float>(cfg, 8);
  auto& dec = params.decoder[0];
  set_zero(dec.attn.wq);
  set_zero(dec.attn.bq);
  set_identity(dec.attn.wk);
  set_identity(dec.attn.wv);
  set_zero(dec.attn.bv);
  set_identity(dec.attn.wo);
  set_zero(dec.attn.bo);
  set_identity(dec.pff.w1);
  set_zero(dec.pff.b1);
  set_identity(dec.pff.w2);
  set_zero(dec.pff.b2);

  EncoderOutput<float> enc;
  enc.z.push_back(Tensor<float>::from_values({1, 2}, {0.5f, -1.0f}));
  Tensor<float> v_final = Tensor<float>::from_values({2, 2}, {1.0f, 2.0f, 0.0f, 3.0f});
  std::vector<std::uint8_t> mask{1};
  Rng idle(0);
  std::vector<Tensor<float>> u = decode_features(v_final, enc, mask, params, cfg, false, idle);
  REQUIRE(u.size() == 1);
  // m_0 = (1,2) + (0.5,-1) = (1.5, 1); u_0' = m + ReLU(m) = (3, 2)
  CHECK(u[0].at(0, 0) == doctest::Approx(3.0f));
  CHECK(u[0].at(0, 1) == doctest::Approx(2.0f));
  // m_1 = (0,3) + (0.5,-1) = (0.5, 2); u_1' = (1, 4)
  CHECK(u[0].at(1, 0) == doctest::Approx(1.0f));
  CHECK(u[0].at(1, 1) == doctest::Approx(4.0f));
}

TEST_CASE("prediction head") {
  SUBCASE("all-zero decoder outputs give probability one half") {
    Tensor<float> v = Tensor<float>::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
    std::vector<Tensor<float>> u{Tensor<float>::zeros({3, 2}), Tensor<float>::zeros({3, 2})};
    Tensor<float> yhat = predict(u, v);
    for (float p : yhat.values()) CHECK(p == doctest::Approx(0.5f));
  }
  SUBCASE("unit vectors give sigmoid(1)") {
    Tensor<float> v = Tensor<float>::from_values({1, 2}, {1.0f, 0.0f});
    std::vector<Tensor<float>> u{v};
    CHECK(predict(u, v).values()[0] == doctest::Approx(1.0f / (1.0f + std::exp(-1.0f))));
  }
  SUBCASE("random case matches the brute-force dot-product oracle") {
    Rng rng(14);
    const int l = 5, d = 4;
    Tensor<float> v = Tensor<float>::zeros({l, d});
    for (auto& x : v.values()) x = static_cast<float>(rng.uniform(-1, 1));
    std::vector<Tensor<float>> u;
    for (int layer = 0; layer < 2; ++layer) {
      Tensor<float> ul = Tensor<float>::zeros({l, d});
      for (auto& x : ul.values()) x = static_cast<float>(rng.uniform(-1, 1));
      u.push_back(ul);
    }
    Tensor<float> yhat = predict(u, v);
    for (int i = 0; i < l; ++i) {
      double s = 0.0;
      for (const auto& ul : u)
        for (int j = 0; j < d; ++j) s += static_cast<double>(ul.at(i, j)) * v.at(i, j);
      CHECK(yhat.values()[static_cast<std::size_t>(i)] ==
            doctest::Approx(1.0 / (1.0 + std::exp(-s))).epsilon(1e-5));
    }
  }
}

TEST_CASE("predictions increase monotonically in each vote component") {
  Tensor<float> v = Tensor<float>::from_values({2, 2}, {1.0f, 0.5f, -0.5f, 1.0f});
  std::vector<Tensor<float>> u{Tensor<float>::from_values({2, 2}, {0.2f, 0.1f, 0.3f, -0.2f})};
  const float base = predict(u, v).values()[0];
  u[0].at(0, 0) += 0.5f;  // raises <u_0, v_0> since v_00 > 0
  CHECK(predict(u, v).values()[0] > base);
}

TEST_CASE("full forward: padding tokens never influence predictions") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params<float>(cfg, 42);
  RelationGraph graph(cfg.label_count, 0.05);
  graph.add_edge(0, 2, Relation::pulling);
  graph.add_edge(1, 3, Relation::pushing);
  RelationOutput<float> rel =
      relation_forward(params.relation, make_graph_tensors<float>(graph, false), cfg);
  Rng idle(0);
  std::vector<int> tokens{4, 9, 0, 0};  // two real tokens, two pads
  std::vector<std::uint8_t> mask{1, 1, 0, 0};
  Tensor<float> a = forward_instance(tokens, mask, params, rel, cfg, false, idle);
  std::vector<int> perturbed{4, 9, 11, 7};
  Tensor<float> b = forward_instance(perturbed, mask, params, rel, cfg, false, idle);
  CHECK(a.values() == b.values());  // bitwise
}

TEST_CASE("full forward in binary-vector mode is invariant to token permutation") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params<float>(cfg, 31);
  RelationGraph graph(cfg.label_count, 0.05);
  graph.add_edge(0, 1, Relation::pulling);
  RelationOutput<float> rel =
      relation_forward(params.relation, make_graph_tensors<float>(graph, false), cfg);
  Rng idle(0);
  std::vector<int> tokens{2, 5, 8, 11};
  std::vector<int> permuted{8, 2, 11, 5};
  std::vector<std::uint8_t> mask(4, 1);
  Tensor<float> a = forward_instance(tokens, mask, params, rel, cfg, false, idle);
  Tensor<float> b = forward_instance(permuted, mask, params, rel, cfg, false, idle);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-5));
}
