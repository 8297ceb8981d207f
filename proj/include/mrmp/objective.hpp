#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <vector>

#include "mrmp/ops.hpp"
#include "mrmp/relgraph.hpp"
#include "mrmp/tensor.hpp"

namespace mrmp {

// Mean binary cross entropy over the label vector. Predictions are clamped to
// [eps, 1-eps] before the logs; the clamp passes no gradient outside its range.
template <typename T>
Tensor<T> bce_loss(const std::vector<std::uint8_t>& y, const Tensor<T>& yhat, T eps = T(1e-7)) {
  if (yhat.rank() != 1 || static_cast<std::size_t>(yhat.dim(0)) != y.size()) {
    throw shape_error("bce_loss: prediction/target length mismatch");
  }
  const std::size_t l = y.size();
  const T* p = yhat.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    const double c = std::min(std::max(static_cast<double>(p[i]), static_cast<double>(eps)),
                              1.0 - static_cast<double>(eps));
    sum += y[i] ? -std::log(c) : -std::log(1.0 - c);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(sum / static_cast<double>(l)));
  detail::check_finite(out, "bce_loss");
  if (yhat.requires_grad()) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([y, yhat, out, eps, l]() {
        if (!out.has_grad()) return;
        const T g = out.grad()[0];
        auto& gy = yhat.grad();
        const T* p2 = yhat.data();
        const T inv_l = T(1) / static_cast<T>(l);
        for (std::size_t i = 0; i < l; ++i) {
          if (p2[i] <= eps || p2[i] >= T(1) - eps) continue;  // clamp region: zero slope
          const T c = p2[i];
          const T target = y[i] ? T(1) : T(0);
          gy[i] += g * inv_l * (c - target) / (c * (T(1) - c));
        }
      });
    }
  }
  return out;
}

// Relation-based label embedding distance over final label embeddings: per
// label, minus the mean cosine similarity to pulling neighbors plus the mean
// cosine to pushing neighbors, averaged over labels that have at least one
// non-self neighbor. Self loops are excluded here (their cosine is constant).
// A zero-norm embedding contributes cosine 0 with a warning.
template <typename T>
Tensor<T> relational_loss(const Tensor<T>& v, const RelationGraph& graph) {
  if (v.rank() != 2 || v.dim(0) != graph.labels) {
    throw mismatch_error("relational_loss: embeddings and graph disagree on label count");
  }
  const int l = graph.labels;
  const int d = v.dim(1);
  const T* pv = v.data();

  std::vector<double> norms(static_cast<std::size_t>(l));
  bool warned = false;
  for (int i = 0; i < l; ++i) {
    double s = 0.0;
    const T* row = pv + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) s += static_cast<double>(row[j]) * static_cast<double>(row[j]);
    norms[static_cast<std::size_t>(i)] = std::sqrt(s);
  }

  auto cosine = [&](int i, int j) -> double {
    const double ni = norms[static_cast<std::size_t>(i)];
    const double nj = norms[static_cast<std::size_t>(j)];
    if (ni == 0.0 || nj == 0.0) {
      if (!warned) {
        std::cerr << "warning: zero-norm label embedding in relational loss, cosine treated as 0\n";
        warned = true;
      }
      return 0.0;
    }
    const T* ri = pv + static_cast<std::size_t>(i) * d;
    const T* rj = pv + static_cast<std::size_t>(j) * d;
    double dot = 0.0;
    for (int k = 0; k < d; ++k) dot += static_cast<double>(ri[k]) * static_cast<double>(rj[k]);
    return dot / (ni * nj);
  };

  double total = 0.0;
  int connected = 0;
  for (int i = 0; i < l; ++i) {
    const int dp = graph.degree_plus(i);
    const int dm = graph.degree_minus(i);
    if (dp + dm == 0) continue;
    ++connected;
    double term = 0.0;
    if (dp > 0) {
      double s = 0.0;
      for (int j = 0; j < l; ++j)
        if (graph.edge_plus(i, j)) s += cosine(i, j);
      term -= s / dp;
    }
    if (dm > 0) {
      double s = 0.0;
      for (int j = 0; j < l; ++j)
        if (graph.edge_minus(i, j)) s += cosine(i, j);
      term += s / dm;
    }
    total += term;
  }
  const double value = connected > 0 ? total / connected : 0.0;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(value));
  detail::check_finite(out, "relational_loss");

  if (v.requires_grad() && connected > 0) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([v, out, graph, norms, connected, l, d]() {
        if (!out.has_grad()) return;
        const T g = out.grad()[0];
        auto& gv = v.grad();
        const T* pv2 = v.data();
        // One weighted cosine term touches both endpoint embeddings:
        // d cos(v_i, v_j) / d v_i = v_j/(|v_i||v_j|) - cos * v_i/|v_i|^2, and
        // symmetrically for v_j.
        auto accumulate_pair = [&](int i, int j, double w) {
          const double ni = norms[static_cast<std::size_t>(i)];
          const double nj = norms[static_cast<std::size_t>(j)];
          if (ni == 0.0 || nj == 0.0) return;
          const T* ri = pv2 + static_cast<std::size_t>(i) * d;
          const T* rj = pv2 + static_cast<std::size_t>(j) * d;
          double dot = 0.0;
          for (int k = 0; k < d; ++k) dot += static_cast<double>(ri[k]) * static_cast<double>(rj[k]);
          const double cos = dot / (ni * nj);
          T* gi = gv.data() + static_cast<std::size_t>(i) * d;
          T* gj = gv.data() + static_cast<std::size_t>(j) * d;
          for (int k = 0; k < d; ++k) {
            const double di = static_cast<double>(rj[k]) / (ni * nj) -
                              cos * static_cast<double>(ri[k]) / (ni * ni);
            const double dj = static_cast<double>(ri[k]) / (ni * nj) -
                              cos * static_cast<double>(rj[k]) / (nj * nj);
            gi[k] += static_cast<T>(static_cast<double>(g) * w * di);
            gj[k] += static_cast<T>(static_cast<double>(g) * w * dj);
          }
        };
        for (int i = 0; i < l; ++i) {
          const int dp = graph.degree_plus(i);
          const int dm = graph.degree_minus(i);
          if (dp + dm == 0) continue;
          for (int j = 0; j < l; ++j) {
            if (graph.edge_plus(i, j)) accumulate_pair(i, j, -1.0 / (dp * static_cast<double>(connected)));
            if (graph.edge_minus(i, j)) accumulate_pair(i, j, 1.0 / (dm * static_cast<double>(connected)));
          }
        }
      });
    }
  }
  return out;
}

template <typename T>
struct LossReport {
  T bce = T(0);
  T rel = T(0);
  T lambda_rel = T(0);
  T total = T(0);
};

// total = l_bce + lambda * l_rel, returned as a differentiable scalar plus the
// plain-number report.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& bce, const Tensor<T>& rel, T lambda_rel,
                     LossReport<T>* report = nullptr) {
  if (lambda_rel < T(0)) throw config_error("total_loss: lambda must be non-negative");
  Tensor<T> total = lambda_rel > T(0) ? add(bce, scale(rel, lambda_rel)) : bce;
  if (report) {
    report->bce = bce.item();
    report->rel = rel.item();
    report->lambda_rel = lambda_rel;
    report->total = total.item();
  }
  return total;
}

}  // namespace mrmp
