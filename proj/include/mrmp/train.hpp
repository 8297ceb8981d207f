#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "mrmp/data.hpp"
#include "mrmp/metrics.hpp"
#include "mrmp/model.hpp"
#include "mrmp/objective.hpp"
#include "mrmp/optim.hpp"

namespace mrmp {

struct TrainConfig {
  ModelConfig model;
  LrSchedule schedule;
  double lambda_rel = 1.0;
  int batch_size = 32;
  int epochs = 50;
  int patience = 10;       // early stop on the selection metric; <= 0 disables
  double clip_norm = 5.0;  // global-norm gradient clip; <= 0 disables
  std::uint64_t seed = 42;
  Metric select_metric = Metric::ebf1;
  double eval_threshold = 0.5;  // used for per-epoch validation metrics
};

struct EpochRow {
  int epoch = 0;
  double bce = 0.0;
  double rel = 0.0;
  double total = 0.0;
  double lr = 0.0;
  bool has_val = false;
  EvalScores val;
};

struct TrainResult {
  ModelParams<float> params;  // best-on-validation (final when no validation)
  int best_epoch = -1;
  double best_value = 0.0;
  bool early_stopped = false;
  std::vector<EpochRow> log;
};

// Inference over a whole dataset: M x L score matrix, batched, no tape.
inline std::vector<float> predict_scores(ModelParams<float>& params, const ModelConfig& cfg,
                                         const GraphTensors<float>& graph, const Dataset& ds,
                                         int batch_size = 32) {
  std::vector<float> scores(ds.size() * static_cast<std::size_t>(cfg.label_count));
  Rng idle_rng(0);  // dropout is inactive outside training
  RelationOutput<float> rel = relation_forward(params.relation, graph, cfg);
  for (const Batch& batch : make_batches(ds, batch_size, false, 0, 0)) {
    for (int k = 0; k < batch.size; ++k) {
      std::vector<int> tokens(batch.token_row(k), batch.token_row(k) + batch.seq_len);
      std::vector<std::uint8_t> mask(batch.mask_row(k), batch.mask_row(k) + batch.seq_len);
      Tensor<float> yhat = forward_instance(tokens, mask, params, rel, cfg, false, idle_rng);
      std::copy(yhat.values().begin(), yhat.values().end(),
                scores.begin() + static_cast<std::size_t>(batch.instance_ids[k]) * cfg.label_count);
    }
  }
  return scores;
}

inline std::vector<std::uint8_t> label_matrix(const Dataset& ds) {
  std::vector<std::uint8_t> y(ds.size() * static_cast<std::size_t>(ds.label_count), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (int lab : ds.items[i].labels) y[i * static_cast<std::size_t>(ds.label_count) + lab] = 1;
  }
  return y;
}

// Full training loop: shuffled minibatches, one tape per batch, shared
// relation-module forward per batch, BCE averaged over the batch plus the
// weighted relational loss, clipped Adam updates, per-epoch validation and
// best-checkpoint tracking. Deterministic per (config, seed).
inline TrainResult train_model(const TrainConfig& cfg, const Dataset& train, const Dataset* valid,
                               const RelationGraph& graph, std::ostream* progress = nullptr) {
  cfg.model.validate();
  if (train.label_count != cfg.model.label_count || train.vocab_size != cfg.model.vocab_size) {
    throw mismatch_error("train_model: dataset does not match model dimensions");
  }
  if (graph.labels != cfg.model.label_count) {
    throw mismatch_error("train_model: relation graph label count mismatch");
  }

  ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
  std::vector<Tensor<float>> param_vec = params.all();
  GraphTensors<float> graph_tensors =
      make_graph_tensors<float>(graph, cfg.model.relation_mean_aggregation);
  AdamState<float> adam(param_vec);
  Rng dropout_rng(mix_seed(cfg.seed, 0x647270ull));  // independent of shuffle seeds

  const bool use_rel_loss = cfg.lambda_rel > 0.0 && cfg.model.mrmp_enabled && !graph.empty();
  const float lambda = static_cast<float>(cfg.lambda_rel);

  TrainResult result;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.schedule, epoch);
    double bce_sum = 0.0;
    double rel_sum = 0.0;
    std::size_t steps = 0;
    for (const Batch& batch : make_batches(train, cfg.batch_size, true, cfg.seed, epoch)) {
      params.zero_grads();
      GradTape<float> tape;
      RelationOutput<float> rel = relation_forward(params.relation, graph_tensors, cfg.model);
      Tensor<float> bce_acc = Tensor<float>::scalar(0.0f);
      for (int k = 0; k < batch.size; ++k) {
        std::vector<int> tokens(batch.token_row(k), batch.token_row(k) + batch.seq_len);
        std::vector<std::uint8_t> mask(batch.mask_row(k), batch.mask_row(k) + batch.seq_len);
        Tensor<float> yhat = forward_instance(tokens, mask, params, rel, cfg.model, true, dropout_rng);
        std::vector<std::uint8_t> y(batch.labels.begin() + static_cast<std::size_t>(k) * cfg.model.label_count,
                                    batch.labels.begin() + static_cast<std::size_t>(k + 1) * cfg.model.label_count);
        bce_acc = add(bce_acc, bce_loss(y, yhat));
      }
      Tensor<float> loss = scale(bce_acc, 1.0f / static_cast<float>(batch.size));
      bce_sum += static_cast<double>(loss.item()) * batch.size;
      if (use_rel_loss) {
        Tensor<float> lrel = relational_loss(rel.v_final, graph);
        rel_sum += static_cast<double>(lrel.item());
        loss = add(loss, scale(lrel, lambda));
      }
      tape.backward(loss);
      if (cfg.clip_norm > 0.0) clip_grad_norm(param_vec, cfg.clip_norm);
      adam.step(param_vec, lr);
      ++steps;
    }

    EpochRow row;
    row.epoch = epoch;
    row.bce = bce_sum / static_cast<double>(train.size());
    row.rel = steps > 0 ? rel_sum / static_cast<double>(steps) : 0.0;
    row.total = row.bce + cfg.lambda_rel * row.rel;
    row.lr = lr;
    if (valid != nullptr && valid->size() > 0) {
      const std::vector<float> scores = predict_scores(params, cfg.model, graph_tensors, *valid, cfg.batch_size);
      row.val = evaluate(label_matrix(*valid), binarize(scores, cfg.eval_threshold), valid->size(),
                         static_cast<std::size_t>(cfg.model.label_count));
      row.has_val = true;
    }
    result.log.push_back(row);
    if (progress) {
      (*progress) << "epoch " << epoch << " bce " << row.bce << " rel " << row.rel << " lr " << lr;
      if (row.has_val) (*progress) << " val_" << metric_name(cfg.select_metric) << " "
                                   << row.val.get(cfg.select_metric);
      (*progress) << "\n";
    }

    if (row.has_val) {
      const double value = row.val.get(cfg.select_metric);
      if (result.best_epoch < 0 || value > result.best_value) {
        result.best_value = value;
        result.best_epoch = epoch;
        result.params = clone_params(cfg.model, params);
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  if (result.best_epoch < 0) {
    result.params = clone_params(cfg.model, params);
    result.best_epoch = static_cast<int>(result.log.size()) - 1;
  }
  return result;
}

}  // namespace mrmp
