#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrmp/rng.hpp"
#include "mrmp/tensor.hpp"

namespace mrmp {

namespace detail {

template <typename T>
inline bool want_grad(const Tensor<T>& a) {
  return a.requires_grad();
}

template <typename T, typename... Rest>
inline bool want_grad(const Tensor<T>& a, const Rest&... rest) {
  return a.requires_grad() || want_grad(rest...);
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

template <typename T>
inline void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) throw shape_error(std::string(op) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  detail::check_finite(out, "add");
  if (detail::want_grad(a, b)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, b, out]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        if (a.requires_grad()) {
          auto& ga = a.grad();
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
      });
    }
  }
  return out;
}

// mat (n x m) + row (m), broadcast over rows. Used for bias terms.
template <typename T>
Tensor<T> add_rows(const Tensor<T>& mat, const Tensor<T>& row) {
  detail::require_matrix(mat, "add_rows");
  if (row.rank() != 1 || row.dim(0) != mat.dim(1)) {
    throw shape_error("add_rows: row vector " + detail::shape_str(row.shape()) +
                      " does not match matrix " + detail::shape_str(mat.shape()));
  }
  const int n = mat.dim(0), m = mat.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  const T* pm = mat.data();
  const T* pr = row.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) po[i * m + j] = pm[i * m + j] + pr[j];
  detail::check_finite(out, "add_rows");
  if (detail::want_grad(mat, row)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([mat, row, out, n, m]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        if (mat.requires_grad()) {
          auto& gm = mat.grad();
          for (std::size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
        }
        if (row.requires_grad()) {
          auto& gr = row.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) gr[j] += go[static_cast<std::size_t>(i) * m + j];
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  detail::check_finite(out, "scale");
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out, c]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  detail::check_finite(out, "mul");
  if (detail::want_grad(a, b)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, b, out]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        if (a.requires_grad()) {
          auto& ga = a.grad();
          const T* pb2 = b.data();
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * pb2[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          const T* pa2 = a.data();
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * pa2[i];
        }
      });
    }
  }
  return out;
}

namespace detail {

// C (n x m) += A (n x k) * B (k x m). Row-parallel; each output element is
// reduced by a single thread, so results are bitwise deterministic.
template <typename T>
inline void gemm_acc(const T* a, const T* b, T* c, int n, int k, int m) {
  const std::int64_t flops = static_cast<std::int64_t>(n) * k * m;
#pragma omp parallel for schedule(static) if (flops > (1 << 16))
  for (int i = 0; i < n; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * m;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(l) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (n x m) += A (n x k) * B^T where B is (m x k).
template <typename T>
inline void gemm_nt_acc(const T* a, const T* b, T* c, int n, int k, int m) {
  const std::int64_t flops = static_cast<std::int64_t>(n) * k * m;
#pragma omp parallel for schedule(static) if (flops > (1 << 16))
  for (int i = 0; i < n; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T s = T(0);
      for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
      crow[j] += s;
    }
  }
}

// C (n x m) += A^T * B where A is (k x n), B is (k x m).
template <typename T>
inline void gemm_tn_acc(const T* a, const T* b, T* c, int k, int n, int m) {
  const std::int64_t flops = static_cast<std::int64_t>(n) * k * m;
#pragma omp parallel for schedule(static) if (flops > (1 << 16))
  for (int i = 0; i < n; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * m;
    for (int l = 0; l < k; ++l) {
      const T av = a[static_cast<std::size_t>(l) * n + i];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(l) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw shape_error("matmul: inner dimensions disagree " + detail::shape_str(a.shape()) + " * " +
                      detail::shape_str(b.shape()));
  }
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  detail::gemm_acc(a.data(), b.data(), out.data(), n, k, m);
  detail::check_finite(out, "matmul");
  if (detail::want_grad(a, b)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, b, out, n, k, m]() {
        if (!out.has_grad()) return;
        const T* go = out.grad().data();
        if (a.requires_grad()) detail::gemm_nt_acc(go, b.data(), a.grad().data(), n, m, k);
        if (b.requires_grad()) detail::gemm_tn_acc(a.data(), go, b.grad().data(), n, k, m);
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const int n = a.dim(0), m = a.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* pa = a.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) po[static_cast<std::size_t>(j) * n + i] = pa[static_cast<std::size_t>(i) * m + j];
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out, n, m]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j)
            ga[static_cast<std::size_t>(i) * m + j] += go[static_cast<std::size_t>(j) * n + i];
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  detail::check_finite(out, "relu");
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        const T* pa2 = a.data();
        for (std::size_t i = 0; i < go.size(); ++i)
          if (pa2[i] > T(0)) ga[i] += go[i];
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = pa[i];
    po[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : T(1) - T(1) / (T(1) + std::exp(x));
  }
  detail::check_finite(out, "sigmoid");
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        const T* py = out.data();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * py[i] * (T(1) - py[i]);
      });
    }
  }
  return out;
}

// Row softmax of a matrix (a vector is treated as one row).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const int rows = a.rank() == 2 ? a.dim(0) : 1;
  const int cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
  if (a.rank() > 2) throw shape_error("softmax_rows: rank > 2");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int i = 0; i < rows; ++i) {
    const T* row = pa + static_cast<std::size_t>(i) * cols;
    T* orow = po + static_cast<std::size_t>(i) * cols;
    T mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < cols; ++j) orow[j] /= sum;
  }
  detail::check_finite(out, "softmax_rows");
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out, rows, cols]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        const T* py = out.data();
        for (int i = 0; i < rows; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * cols;
          T dot = T(0);
          for (int j = 0; j < cols; ++j) dot += go[off + j] * py[off + j];
          for (int j = 0; j < cols; ++j) ga[off + j] += py[off + j] * (go[off + j] - dot);
        }
      });
    }
  }
  return out;
}

// Replaces entries in columns where keep[j] == 0 with `fill`. The mask spans
// columns (key positions in attention); kept entries pass gradients through.
template <typename T>
Tensor<T> masked_fill_cols(const Tensor<T>& a, const std::vector<std::uint8_t>& keep, T fill) {
  detail::require_matrix(a, "masked_fill_cols");
  const int n = a.dim(0), m = a.dim(1);
  if (static_cast<int>(keep.size()) != m) {
    throw shape_error("masked_fill_cols: mask length " + std::to_string(keep.size()) +
                      " does not match column count " + std::to_string(m));
  }
  Tensor<T> out = Tensor<T>::zeros({n, m});
  const T* pa = a.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * m + j;
      po[idx] = keep[j] ? pa[idx] : fill;
    }
  detail::check_finite(out, "masked_fill_cols");
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out, keep, n, m]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j)
            if (keep[j]) {
              const std::size_t idx = static_cast<std::size_t>(i) * m + j;
              ga[idx] += go[idx];
            }
      });
    }
  }
  return out;
}

// Gathers rows of `table` (V x d) by id; backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  detail::require_matrix(table, "embedding_rows");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw shape_error("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                        std::to_string(v) + ")");
    }
  }
  const int n = static_cast<int>(ids.size());
  Tensor<T> out = Tensor<T>::zeros({n, d});
  const T* pt = table.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i) {
    const T* src = pt + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
    std::copy(src, src + d, po + static_cast<std::size_t>(i) * d);
  }
  detail::check_finite(out, "embedding_rows");
  if (detail::want_grad(table)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([table, out, ids, d]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& gt = table.grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          T* dst = gt.data() + static_cast<std::size_t>(ids[i]) * d;
          const T* src = go.data() + i * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int from, int len) {
  detail::require_matrix(a, "slice_cols");
  const int n = a.dim(0), m = a.dim(1);
  if (from < 0 || len <= 0 || from + len > m) throw shape_error("slice_cols: invalid range");
  Tensor<T> out = Tensor<T>::zeros({n, len});
  const T* pa = a.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i)
    std::copy(pa + static_cast<std::size_t>(i) * m + from, pa + static_cast<std::size_t>(i) * m + from + len,
              po + static_cast<std::size_t>(i) * len);
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out, from, len, n, m]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& ga = a.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < len; ++j)
            ga[static_cast<std::size_t>(i) * m + from + j] += go[static_cast<std::size_t>(i) * len + j];
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw shape_error("concat_cols: no inputs");
  const int n = parts.front().dim(0);
  int total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.dim(0) != n) throw shape_error("concat_cols: row count mismatch");
    total += p.dim(1);
  }
  Tensor<T> out = Tensor<T>::zeros({n, total});
  T* po = out.data();
  int col = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const int m = p.dim(1);
    const T* pp = p.data();
    for (int i = 0; i < n; ++i)
      std::copy(pp + static_cast<std::size_t>(i) * m, pp + static_cast<std::size_t>(i) * m + m,
                po + static_cast<std::size_t>(i) * total + col);
    col += m;
    rg = rg || p.requires_grad();
  }
  if (rg) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([parts, out, n, total]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        int col2 = 0;
        for (auto& p : parts) {
          const int m = p.dim(1);
          if (p.requires_grad()) {
            auto& gp = p.grad();
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < m; ++j)
                gp[static_cast<std::size_t>(i) * m + j] += go[static_cast<std::size_t>(i) * total + col2 + j];
          }
          col2 += m;
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(std::initializer_list<Tensor<T>> parts) {
  return concat_cols(std::vector<Tensor<T>>(parts));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  detail::check_finite(out, "sum_all");
  if (detail::want_grad(a)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, out]() {
        if (!out.has_grad()) return;
        const T g = out.grad()[0];
        auto& ga = a.grad();
        for (auto& v : ga) v += g;
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// Per-row inner product of two (n x d) matrices -> length-n vector.
template <typename T>
Tensor<T> rowwise_dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "rowwise_dot");
  detail::require_matrix(a, "rowwise_dot");
  const int n = a.dim(0), d = a.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i) {
    T s = T(0);
    const std::size_t off = static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) s += pa[off + j] * pb[off + j];
    po[i] = s;
  }
  detail::check_finite(out, "rowwise_dot");
  if (detail::want_grad(a, b)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([a, b, out, n, d]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        for (int i = 0; i < n; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * d;
          if (a.requires_grad()) {
            auto& ga = a.grad();
            const T* pb2 = b.data();
            for (int j = 0; j < d; ++j) ga[off + j] += go[i] * pb2[off + j];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad();
            const T* pa2 = a.data();
            for (int j = 0; j < d; ++j) gb[off + j] += go[i] * pa2[off + j];
          }
        }
      });
    }
  }
  return out;
}

// Row-wise layer normalization with learned gain/shift.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
  detail::require_matrix(x, "layer_norm_rows");
  const int n = x.dim(0), d = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw shape_error("layer_norm_rows: gain/shift must be length-d vectors");
  }
  Tensor<T> out = Tensor<T>::zeros({n, d});
  std::vector<T> xhat(static_cast<std::size_t>(n) * d);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += px[off + j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T c = px[off + j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      xhat[off + j] = (px[off + j] - mean) * is;
      po[off + j] = pg[j] * xhat[off + j] + pb[j];
    }
  }
  detail::check_finite(out, "layer_norm_rows");
  if (detail::want_grad(x, gamma, beta)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
                    d]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        const T* pg2 = gamma.data();
        for (int i = 0; i < n; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * d;
          if (gamma.requires_grad()) {
            auto& gg = gamma.grad();
            for (int j = 0; j < d; ++j) gg[j] += go[off + j] * xhat[off + j];
          }
          if (beta.requires_grad()) {
            auto& gb = beta.grad();
            for (int j = 0; j < d; ++j) gb[j] += go[off + j];
          }
          if (x.requires_grad()) {
            // dxhat = dy * gamma; dx = (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat)) / std
            T m1 = T(0), m2 = T(0);
            for (int j = 0; j < d; ++j) {
              const T dxh = go[off + j] * pg2[j];
              m1 += dxh;
              m2 += dxh * xhat[off + j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            auto& gx = x.grad();
            const T is = inv_std[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j) {
              const T dxh = go[off + j] * pg2[j];
              gx[off + j] += (dxh - m1 - xhat[off + j] * m2) * is;
            }
          }
        }
      });
    }
  }
  return out;
}

// Inverted dropout: kept activations are scaled by 1/(1-p) so inference needs
// no rescaling. Identity when not training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw config_error("dropout: p must lie in [0,1)");
  if (!training || p == 0.0) return x;
  const std::size_t n = x.size();
  std::vector<std::uint8_t> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = rng.uniform() >= p ? 1 : 0;
  const T inv = T(1.0 / (1.0 - p));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = keep[i] ? px[i] * inv : T(0);
  detail::check_finite(out, "dropout");
  if (detail::want_grad(x)) {
    out.set_requires_grad(true);
    if (auto* tape = GradTape<T>::current()) {
      tape->record([x, out, keep = std::move(keep), inv]() {
        if (!out.has_grad()) return;
        const auto& go = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i)
          if (keep[i]) gx[i] += go[i] * inv;
      });
    }
  }
  return out;
}

}  // namespace mrmp
