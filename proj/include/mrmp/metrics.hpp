#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrmp/errors.hpp"

namespace mrmp {

enum class Metric { acc, ebf1, mif1, maf1 };

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::acc: return "ACC";
    case Metric::ebf1: return "ebF1";
    case Metric::mif1: return "miF1";
    case Metric::maf1: return "maF1";
  }
  return "?";
}

struct EvalScores {
  double acc = 0.0;
  double ebf1 = 0.0;
  double mif1 = 0.0;
  double maf1 = 0.0;

  double get(Metric m) const {
    switch (m) {
      case Metric::acc: return acc;
      case Metric::ebf1: return ebf1;
      case Metric::mif1: return mif1;
      case Metric::maf1: return maf1;
    }
    return 0.0;
  }
};

struct ConfusionCounts {
  std::vector<std::int64_t> tp, fp, tn, fn;  // per label
};

// Strict threshold: predicted positive iff score > threshold, so a degenerate
// all-0.5 predictor yields the empty set at the default threshold.
inline std::vector<std::uint8_t> binarize(const std::vector<float>& scores, double threshold) {
  std::vector<std::uint8_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > threshold ? 1 : 0;
  return out;
}

inline ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& y,
                                        const std::vector<std::uint8_t>& yhat, std::size_t m,
                                        std::size_t l) {
  if (y.size() != m * l || yhat.size() != m * l) throw shape_error("confusion_counts: shape mismatch");
  ConfusionCounts c;
  c.tp.assign(l, 0);
  c.fp.assign(l, 0);
  c.tn.assign(l, 0);
  c.fn.assign(l, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t off = i * l;
    for (std::size_t j = 0; j < l; ++j) {
      const bool t = y[off + j] != 0;
      const bool p = yhat[off + j] != 0;
      if (t && p) ++c.tp[j];
      else if (!t && p) ++c.fp[j];
      else if (t && !p) ++c.fn[j];
      else ++c.tn[j];
    }
  }
  return c;
}

// Subset accuracy, example-based F1, micro F1, macro F1. Empty denominators
// score 1: an instance with no true and no predicted labels is a perfect
// match, as is a label with no positives in either truth or prediction.
inline EvalScores evaluate(const std::vector<std::uint8_t>& y, const std::vector<std::uint8_t>& yhat,
                           std::size_t m, std::size_t l) {
  if (y.size() != m * l || yhat.size() != m * l) throw shape_error("evaluate: shape mismatch");
  if (m == 0 || l == 0) throw shape_error("evaluate: empty matrices");
  EvalScores s;
  std::size_t exact = 0;
  double ebf1_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t off = i * l;
    std::int64_t inter = 0, ny = 0, nh = 0;
    bool equal = true;
    for (std::size_t j = 0; j < l; ++j) {
      const bool t = y[off + j] != 0;
      const bool p = yhat[off + j] != 0;
      inter += (t && p) ? 1 : 0;
      ny += t ? 1 : 0;
      nh += p ? 1 : 0;
      equal = equal && (t == p);
    }
    exact += equal ? 1 : 0;
    ebf1_sum += (ny + nh) == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(ny + nh);
  }
  s.acc = static_cast<double>(exact) / static_cast<double>(m);
  s.ebf1 = ebf1_sum / static_cast<double>(m);

  const ConfusionCounts c = confusion_counts(y, yhat, m, l);
  std::int64_t num = 0, den = 0;
  double maf1_sum = 0.0;
  for (std::size_t j = 0; j < l; ++j) {
    num += 2 * c.tp[j];
    den += 2 * c.tp[j] + c.fp[j] + c.fn[j];
    const std::int64_t dj = 2 * c.tp[j] + c.fp[j] + c.fn[j];
    maf1_sum += dj == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp[j]) / static_cast<double>(dj);
  }
  s.mif1 = den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  s.maf1 = maf1_sum / static_cast<double>(l);
  return s;
}

struct AucReport {
  std::vector<double> auc;           // per label; meaningful only where defined
  std::vector<std::uint8_t> defined; // 0 when a label has no positives or no negatives

  double mean_defined() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < auc.size(); ++j) {
      if (defined[j]) {
        s += auc[j];
        ++n;
      }
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }
};

// Per-label ROC AUC as the Mann-Whitney rank statistic; tied scores contribute
// one half. Labels with zero positives or zero negatives are flagged undefined.
inline AucReport auc_per_label(const std::vector<std::uint8_t>& y, const std::vector<float>& scores,
                               std::size_t m, std::size_t l) {
  if (y.size() != m * l || scores.size() != m * l) throw shape_error("auc_per_label: shape mismatch");
  AucReport r;
  r.auc.assign(l, 0.0);
  r.defined.assign(l, 0);
  std::vector<std::pair<float, std::uint8_t>> col(m);
  for (std::size_t j = 0; j < l; ++j) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < m; ++i) {
      col[i] = {scores[i * l + j], y[i * l + j]};
      pos += y[i * l + j] ? 1 : 0;
    }
    const std::size_t neg = m - pos;
    if (pos == 0 || neg == 0) continue;
    std::sort(col.begin(), col.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // average ranks over tie groups
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < m) {
      std::size_t k = i;
      while (k + 1 < m && col[k + 1].first == col[i].first) ++k;
      const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(k + 1));
      for (std::size_t t = i; t <= k; ++t)
        if (col[t].second) rank_sum_pos += avg_rank;
      i = k + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    r.auc[j] = u / (static_cast<double>(pos) * static_cast<double>(neg));
    r.defined[j] = 1;
  }
  return r;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(0.05 * k);
  return g;
}

struct ThresholdChoice {
  double threshold = 0.5;
  double value = 0.0;
};

// Grid search maximizing the named metric on validation data; ties break
// toward 0.5 (then toward the smaller threshold).
inline ThresholdChoice tune_threshold(const std::vector<std::uint8_t>& y_val,
                                      const std::vector<float>& scores_val, std::size_t m,
                                      std::size_t l, Metric metric,
                                      const std::vector<double>& grid = default_threshold_grid()) {
  if (m == 0) throw degenerate_data_error("tune_threshold: empty validation set");
  if (grid.empty()) throw config_error("tune_threshold: empty threshold grid");
  ThresholdChoice best;
  bool first = true;
  for (double t : grid) {
    const EvalScores s = evaluate(y_val, binarize(scores_val, t), m, l);
    const double v = s.get(metric);
    const bool better =
        first || v > best.value + 1e-15 ||
        (std::abs(v - best.value) <= 1e-15 &&
         (std::abs(t - 0.5) < std::abs(best.threshold - 0.5) - 1e-15 ||
          (std::abs(std::abs(t - 0.5) - std::abs(best.threshold - 0.5)) <= 1e-15 && t < best.threshold)));
    if (better) {
      best.threshold = t;
      best.value = v;
      first = false;
    }
  }
  return best;
}

}  // namespace mrmp
