#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mrmp/data.hpp"
#include "mrmp/rng.hpp"

namespace mrmp {

// Binary relevance baseline: one logistic regression per label over bag-of-
// token features, trained jointly with mini-batch gradient descent. Used as
// the classical comparison point in evaluations.
struct BaselineConfig {
  int epochs = 40;
  double lr = 0.1;
  double lr_decay = 0.95;  // per epoch
  double l2 = 1e-5;
  int batch_size = 32;
  std::uint64_t seed = 42;
};

struct BinaryRelevanceModel {
  int labels = 0;
  int features = 0;
  std::vector<float> weights;  // L x F row-major
  std::vector<float> bias;     // L

  std::vector<float> score(const std::vector<int>& tokens) const {
    std::vector<float> out(static_cast<std::size_t>(labels));
    for (int j = 0; j < labels; ++j) {
      double z = bias[static_cast<std::size_t>(j)];
      const float* wrow = weights.data() + static_cast<std::size_t>(j) * features;
      for (int t : tokens) z += wrow[t];
      out[static_cast<std::size_t>(j)] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
    }
    return out;
  }
};

inline BinaryRelevanceModel train_binary_relevance(const Dataset& train, const BaselineConfig& cfg) {
  BinaryRelevanceModel model;
  model.labels = train.label_count;
  model.features = train.vocab_size;
  model.weights.assign(static_cast<std::size_t>(model.labels) * model.features, 0.0f);
  model.bias.assign(static_cast<std::size_t>(model.labels), 0.0f);

  const int l = model.labels;
  std::vector<double> grad_b(static_cast<std::size_t>(l));
  double lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Batch> batches = make_batches(train, cfg.batch_size, true, cfg.seed, epoch);
    for (const Batch& batch : batches) {
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      // dense bias grads, sparse weight grads applied in place per instance
      for (int k = 0; k < batch.size; ++k) {
        const Instance& inst = train.items[static_cast<std::size_t>(batch.instance_ids[k])];
        const std::uint8_t* yrow = batch.labels.data() + static_cast<std::size_t>(k) * l;
        for (int j = 0; j < l; ++j) {
          double z = model.bias[static_cast<std::size_t>(j)];
          float* wrow = model.weights.data() + static_cast<std::size_t>(j) * model.features;
          for (int t : inst.tokens) z += wrow[t];
          const double p = 1.0 / (1.0 + std::exp(-z));
          const double err = p - (yrow[j] ? 1.0 : 0.0);
          const double step = lr * err / batch.size;
          grad_b[static_cast<std::size_t>(j)] += err;
          for (int t : inst.tokens) wrow[t] = static_cast<float>(wrow[t] - step);
        }
      }
      for (int j = 0; j < l; ++j) {
        model.bias[static_cast<std::size_t>(j)] =
            static_cast<float>(model.bias[static_cast<std::size_t>(j)] - lr * grad_b[static_cast<std::size_t>(j)] / batch.size);
      }
      if (cfg.l2 > 0.0) {
        const float shrink = static_cast<float>(1.0 - lr * cfg.l2);
        for (auto& w : model.weights) w *= shrink;
      }
    }
    lr *= cfg.lr_decay;
  }
  return model;
}

inline std::vector<float> baseline_scores(const BinaryRelevanceModel& model, const Dataset& ds) {
  std::vector<float> scores(ds.size() * static_cast<std::size_t>(model.labels));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::vector<float> s = model.score(ds.items[i].tokens);
    std::copy(s.begin(), s.end(), scores.begin() + i * static_cast<std::size_t>(model.labels));
  }
  return scores;
}

}  // namespace mrmp
