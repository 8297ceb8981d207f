#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mrmp/errors.hpp"

namespace mrmp {

// 2x2 contingency counts for a label pair (i, j) over M instances.
// n11 = both present, n10 = i only, n01 = j only, n00 = neither.
struct ContingencyTable {
  std::int64_t n11 = 0;
  std::int64_t n10 = 0;
  std::int64_t n01 = 0;
  std::int64_t n00 = 0;

  std::int64_t total() const { return n11 + n10 + n01 + n00; }
};

enum class Relation { none, pulling, pushing };

namespace detail {

// Acklam's rational approximation of the standard normal quantile,
// refined with one Halley step; absolute error well below 1e-12.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw config_error("normal_quantile: p must lie in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement against erfc.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

}  // namespace detail

// Critical value of the chi-squared distribution with one degree of freedom:
// a chi-squared(1) variable is the square of a standard normal.
inline double chi_squared_critical_df1(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("significance level must lie in (0,1)");
  const double z = detail::normal_quantile(1.0 - alpha / 2.0);
  return z * z;
}

// Pearson statistic via the 2x2 shortcut:
// M * (n11*n00 - n10*n01)^2 / ((n11+n10)(n01+n00)(n11+n01)(n10+n00)).
// All four marginals must be positive.
inline double chi_squared_statistic(const ContingencyTable& t) {
  const double r1 = static_cast<double>(t.n11 + t.n10);
  const double r0 = static_cast<double>(t.n01 + t.n00);
  const double c1 = static_cast<double>(t.n11 + t.n01);
  const double c0 = static_cast<double>(t.n10 + t.n00);
  if (r1 <= 0 || r0 <= 0 || c1 <= 0 || c0 <= 0) {
    throw degenerate_data_error("chi_squared_statistic: zero marginal");
  }
  const double det =
      static_cast<double>(t.n11) * static_cast<double>(t.n00) - static_cast<double>(t.n10) * static_cast<double>(t.n01);
  return static_cast<double>(t.total()) * det * det / (r1 * r0 * c1 * c0);
}

struct ChiSquaredOptions {
  double alpha = 0.05;
  bool yates_correction = false;  // plain Pearson statistic by default
};

inline double chi_squared_statistic(const ContingencyTable& t, const ChiSquaredOptions& opt) {
  if (!opt.yates_correction) return chi_squared_statistic(t);
  const double r1 = static_cast<double>(t.n11 + t.n10);
  const double r0 = static_cast<double>(t.n01 + t.n00);
  const double c1 = static_cast<double>(t.n11 + t.n01);
  const double c0 = static_cast<double>(t.n10 + t.n00);
  if (r1 <= 0 || r0 <= 0 || c1 <= 0 || c0 <= 0) {
    throw degenerate_data_error("chi_squared_statistic: zero marginal");
  }
  const double det = std::abs(static_cast<double>(t.n11) * static_cast<double>(t.n00) -
                              static_cast<double>(t.n10) * static_cast<double>(t.n01));
  const double adj = std::max(0.0, det - 0.5 * static_cast<double>(t.total()));
  return static_cast<double>(t.total()) * adj * adj / (r1 * r0 * c1 * c0);
}

// Dependence test followed by direction: pulling when P(Lj=1 | Li=1) > P(Lj=1),
// pushing otherwise. Pairs with a zero marginal carry no pairwise information
// and get no edge.
inline Relation classify_relation(const ContingencyTable& t, double alpha = 0.05,
                                  const ChiSquaredOptions* opt = nullptr) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("classify_relation: alpha outside (0,1)");
  const std::int64_t r1 = t.n11 + t.n10;
  const std::int64_t r0 = t.n01 + t.n00;
  const std::int64_t c1 = t.n11 + t.n01;
  const std::int64_t c0 = t.n10 + t.n00;
  if (r1 == 0 || r0 == 0 || c1 == 0 || c0 == 0) return Relation::none;
  ChiSquaredOptions o;
  if (opt) o = *opt;
  const double stat = chi_squared_statistic(t, o);
  if (stat <= chi_squared_critical_df1(alpha)) return Relation::none;
  // P(Lj=1 | Li=1) > P(Lj=1)  <=>  n11 * M > (n11+n10) * (n11+n01)
  const double lhs = static_cast<double>(t.n11) * static_cast<double>(t.total());
  const double rhs = static_cast<double>(r1) * static_cast<double>(c1);
  return lhs > rhs ? Relation::pulling : Relation::pushing;
}

// Binary label occurrence bitsets: one M-bit row per label.
class LabelBitsets {
 public:
  LabelBitsets(int label_count, int instance_count)
      : labels_(label_count),
        instances_(instance_count),
        words_((instance_count + 63) / 64),
        bits_(static_cast<std::size_t>(label_count) * static_cast<std::size_t>((instance_count + 63) / 64), 0) {}

  int labels() const { return labels_; }
  int instances() const { return instances_; }

  void set(int label, int instance) {
    bits_[static_cast<std::size_t>(label) * words_ + static_cast<std::size_t>(instance) / 64] |=
        (1ull << (instance % 64));
  }

  std::int64_t count(int label) const {
    const std::uint64_t* w = row(label);
    std::int64_t c = 0;
    for (std::size_t k = 0; k < words_; ++k) c += __builtin_popcountll(w[k]);
    return c;
  }

  std::int64_t count_both(int a, int b) const {
    const std::uint64_t* wa = row(a);
    const std::uint64_t* wb = row(b);
    std::int64_t c = 0;
    for (std::size_t k = 0; k < words_; ++k) c += __builtin_popcountll(wa[k] & wb[k]);
    return c;
  }

 private:
  const std::uint64_t* row(int label) const { return bits_.data() + static_cast<std::size_t>(label) * words_; }

  int labels_;
  int instances_;
  std::size_t words_;
  std::vector<std::uint64_t> bits_;
};

inline ContingencyTable build_contingency(const LabelBitsets& y, int i, int j) {
  if (i == j) throw config_error("build_contingency: i == j");
  if (i < 0 || j < 0 || i >= y.labels() || j >= y.labels()) {
    throw config_error("build_contingency: label index out of range");
  }
  if (y.instances() == 0) throw degenerate_data_error("build_contingency: empty dataset");
  ContingencyTable t;
  t.n11 = y.count_both(i, j);
  t.n10 = y.count(i) - t.n11;
  t.n01 = y.count(j) - t.n11;
  t.n00 = static_cast<std::int64_t>(y.instances()) - t.n11 - t.n10 - t.n01;
  return t;
}

// Pulling/pushing adjacency over L labels. Both matrices are symmetric,
// zero-diagonal and elementwise disjoint. Self loops and inverse edges are a
// property of the neighborhoods the model derives, not of the storage.
struct RelationGraph {
  int labels = 0;
  double alpha = 0.05;
  std::vector<std::uint8_t> a_plus;   // L*L row-major
  std::vector<std::uint8_t> a_minus;  // L*L row-major

  explicit RelationGraph(int label_count = 0, double a = 0.05)
      : labels(label_count),
        alpha(a),
        a_plus(static_cast<std::size_t>(label_count) * label_count, 0),
        a_minus(static_cast<std::size_t>(label_count) * label_count, 0) {}

  bool edge_plus(int i, int j) const { return a_plus[static_cast<std::size_t>(i) * labels + j] != 0; }
  bool edge_minus(int i, int j) const { return a_minus[static_cast<std::size_t>(i) * labels + j] != 0; }

  void add_edge(int i, int j, Relation r) {
    if (i == j) throw config_error("relation graph: self edge not allowed");
    auto& m = r == Relation::pulling ? a_plus : a_minus;
    m[static_cast<std::size_t>(i) * labels + j] = 1;
    m[static_cast<std::size_t>(j) * labels + i] = 1;
  }

  int degree_plus(int i) const {
    int d = 0;
    for (int j = 0; j < labels; ++j) d += a_plus[static_cast<std::size_t>(i) * labels + j];
    return d;
  }

  int degree_minus(int i) const {
    int d = 0;
    for (int j = 0; j < labels; ++j) d += a_minus[static_cast<std::size_t>(i) * labels + j];
    return d;
  }

  std::int64_t edge_count_plus() const {
    std::int64_t c = 0;
    for (auto v : a_plus) c += v;
    return c / 2;
  }

  std::int64_t edge_count_minus() const {
    std::int64_t c = 0;
    for (auto v : a_minus) c += v;
    return c / 2;
  }

  bool empty() const { return edge_count_plus() == 0 && edge_count_minus() == 0; }
};

struct RelationGraphBuild {
  RelationGraph graph;
  std::int64_t pairs_tested = 0;
  std::int64_t zero_marginal_pairs = 0;
};

inline RelationGraphBuild build_relation_graphs(const LabelBitsets& y, double alpha = 0.05,
                                                const ChiSquaredOptions* opt = nullptr) {
  if (y.labels() < 2) throw config_error("build_relation_graphs: need at least 2 labels");
  if (y.instances() < 1) throw degenerate_data_error("build_relation_graphs: empty dataset");
  RelationGraphBuild out{RelationGraph(y.labels(), alpha), 0, 0};
  for (int i = 0; i < y.labels(); ++i) {
    for (int j = i + 1; j < y.labels(); ++j) {
      ++out.pairs_tested;
      const ContingencyTable t = build_contingency(y, i, j);
      const std::int64_t m = t.total();
      if (t.n11 + t.n10 == 0 || t.n11 + t.n10 == m || t.n11 + t.n01 == 0 || t.n11 + t.n01 == m) {
        ++out.zero_marginal_pairs;
        continue;
      }
      const Relation r = classify_relation(t, alpha, opt);
      if (r != Relation::none) out.graph.add_edge(i, j, r);
    }
  }
  if (out.zero_marginal_pairs == out.pairs_tested) {
    std::cerr << "warning: no label pair had both labels varying; all dependence tests skipped\n";
  }
  return out;
}

// Degree grouping for the per-group AUC-delta analysis: degree-0 labels form
// group 0; positive-degree labels are split by degree quantiles into the
// remaining n_groups-1 buckets (upper-inclusive cuts).
struct DegreeGroups {
  int n_groups = 0;
  std::vector<int> group_of_label;     // size L
  std::vector<int> min_degree;         // per group, -1 when the group is empty
  std::vector<int> max_degree;
  std::vector<int> counts;
};

inline DegreeGroups node_degree_groups(const std::vector<int>& degrees, int n_groups = 4) {
  if (n_groups < 1) throw config_error("node_degree_groups: n_groups must be >= 1");
  const int l = static_cast<int>(degrees.size());
  DegreeGroups g;
  g.n_groups = n_groups;
  g.group_of_label.assign(static_cast<std::size_t>(l), 0);
  g.min_degree.assign(static_cast<std::size_t>(n_groups), -1);
  g.max_degree.assign(static_cast<std::size_t>(n_groups), -1);
  g.counts.assign(static_cast<std::size_t>(n_groups), 0);

  std::vector<int> positive;
  for (int d : degrees)
    if (d > 0) positive.push_back(d);
  std::sort(positive.begin(), positive.end());

  // Quantile cut values over the positive-degree multiset: cut k is the value
  // at the end of the k-th of `buckets` near-equal chunks, ceil(n*k/buckets)-1.
  const int buckets = n_groups - 1;
  std::vector<int> cuts;  // upper bound (inclusive) of buckets 1..buckets-1
  for (int k = 1; k < buckets; ++k) {
    if (positive.empty()) break;
    const std::size_t n = positive.size();
    std::size_t idx = (n * static_cast<std::size_t>(k) + static_cast<std::size_t>(buckets) - 1) /
                      static_cast<std::size_t>(buckets);
    idx = idx == 0 ? 0 : idx - 1;
    if (idx >= n) idx = n - 1;
    cuts.push_back(positive[idx]);
  }

  for (int i = 0; i < l; ++i) {
    int grp = 0;
    if (degrees[static_cast<std::size_t>(i)] > 0) {
      grp = buckets;  // last bucket unless a cut catches it
      for (std::size_t k = 0; k < cuts.size(); ++k) {
        if (degrees[static_cast<std::size_t>(i)] <= cuts[k]) {
          grp = static_cast<int>(k) + 1;
          break;
        }
      }
      if (buckets == 0) grp = 0;
    }
    g.group_of_label[static_cast<std::size_t>(i)] = grp;
    ++g.counts[static_cast<std::size_t>(grp)];
    int& mn = g.min_degree[static_cast<std::size_t>(grp)];
    int& mx = g.max_degree[static_cast<std::size_t>(grp)];
    const int d = degrees[static_cast<std::size_t>(i)];
    if (mn < 0 || d < mn) mn = d;
    if (mx < 0 || d > mx) mx = d;
  }
  return g;
}

// --- edge-list export/import -------------------------------------------------
// Header `labels=<L> alpha=<a>`, then one `<i> <j> <+|->` line per edge, i < j.

inline void write_edge_list(const RelationGraph& g, std::ostream& os) {
  os << "labels=" << g.labels << " alpha=" << g.alpha << "\n";
  for (int i = 0; i < g.labels; ++i) {
    for (int j = i + 1; j < g.labels; ++j) {
      if (g.edge_plus(i, j)) os << i << " " << j << " +\n";
      else if (g.edge_minus(i, j)) os << i << " " << j << " -\n";
    }
  }
}

inline void write_edge_list(const RelationGraph& g, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open graph file for writing: " + path);
  write_edge_list(g, os);
}

inline RelationGraph read_edge_list(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw parse_error("graph file: missing header");
  int labels = -1;
  double alpha = 0.05;
  {
    std::istringstream hs(header);
    std::string field;
    while (hs >> field) {
      if (field.rfind("labels=", 0) == 0) labels = std::stoi(field.substr(7));
      else if (field.rfind("alpha=", 0) == 0) alpha = std::stod(field.substr(6));
    }
  }
  if (labels <= 0) throw parse_error("graph file: header must declare labels=<L>");
  RelationGraph g(labels, alpha);
  std::string line;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int i, j;
    std::string rel;
    if (!(ls >> i >> j >> rel) || (rel != "+" && rel != "-")) {
      throw parse_error("graph file line " + std::to_string(line_no) + ": expected `<i> <j> <+|->`");
    }
    if (i < 0 || j < 0 || i >= labels || j >= labels || i == j) {
      throw parse_error("graph file line " + std::to_string(line_no) + ": bad label pair");
    }
    g.add_edge(i, j, rel == "+" ? Relation::pulling : Relation::pushing);
  }
  return g;
}

inline RelationGraph read_edge_list(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open graph file: " + path);
  return read_edge_list(is);
}

}  // namespace mrmp
