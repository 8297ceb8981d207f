#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrmp/errors.hpp"
#include "mrmp/relgraph.hpp"
#include "mrmp/rng.hpp"

namespace mrmp {

enum class InputType { binary_vector, sequential };

struct Instance {
  std::vector<int> tokens;  // ordered token ids (sequential) or sorted feature ids (binary vector)
  std::vector<int> labels;  // sorted active label indices
};

struct Dataset {
  InputType input_type = InputType::binary_vector;
  int label_count = 0;
  int vocab_size = 0;
  std::vector<Instance> items;

  std::size_t size() const { return items.size(); }
};

struct DatasetStats {
  std::size_t instances = 0;
  int labels = 0;
  int features = 0;
  double cardinality = 0.0;  // mean positive labels per instance
};

inline DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats s;
  s.instances = ds.items.size();
  s.labels = ds.label_count;
  s.features = ds.vocab_size;
  std::size_t total = 0;
  for (const auto& it : ds.items) total += it.labels.size();
  s.cardinality = ds.items.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(ds.items.size());
  return s;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<int> parse_label_field(const std::string& field, int label_count, int line_no) {
  std::vector<int> labels;
  if (detail::trim(field).empty()) return labels;  // empty label set is legal
  std::stringstream ss(field);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    int v;
    try {
      v = std::stoi(tok);
    } catch (const std::exception&) {
      throw parse_error("line " + std::to_string(line_no) + ": bad label index `" + tok + "`");
    }
    if (v < 0 || (label_count > 0 && v >= label_count)) {
      throw parse_error("line " + std::to_string(line_no) + ": label index " + std::to_string(v) +
                        " out of declared range");
    }
    labels.push_back(v);
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

}  // namespace detail

// Sparse format used by the public extreme-classification distributions:
// header `M F L`, then one line per instance,
// `label,label,...<space>feature:value feature:value ...`.
// Feature values are accepted but only presence is used.
inline Dataset parse_sparse_dataset(std::istream& is, int max_seq_len = 500) {
  Dataset ds;
  ds.input_type = InputType::binary_vector;
  std::string line;
  if (!std::getline(is, line)) throw parse_error("sparse dataset: missing header");
  std::int64_t m, f, l;
  {
    std::istringstream hs(line);
    if (!(hs >> m >> f >> l) || m < 0 || f <= 0 || l <= 0) {
      throw parse_error("sparse dataset: malformed header, expected `M F L`");
    }
  }
  ds.vocab_size = static_cast<int>(f);
  ds.label_count = static_cast<int>(l);
  ds.items.reserve(static_cast<std::size_t>(m));
  std::int64_t dup_features = 0;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty() && static_cast<std::int64_t>(ds.items.size()) == m) continue;
    Instance inst;
    const std::size_t sp = line.find(' ');
    const std::string label_field = sp == std::string::npos ? line : line.substr(0, sp);
    inst.labels = detail::parse_label_field(label_field, ds.label_count, line_no);
    if (sp != std::string::npos) {
      std::istringstream fs(line.substr(sp + 1));
      std::string pair;
      while (fs >> pair) {
        const std::size_t colon = pair.find(':');
        const std::string id_str = colon == std::string::npos ? pair : pair.substr(0, colon);
        int fid;
        try {
          fid = std::stoi(id_str);
        } catch (const std::exception&) {
          throw parse_error("line " + std::to_string(line_no) + ": bad feature `" + pair + "`");
        }
        if (fid < 0 || fid >= ds.vocab_size) {
          throw parse_error("line " + std::to_string(line_no) + ": feature index " + std::to_string(fid) +
                            " out of declared range [0," + std::to_string(ds.vocab_size) + ")");
        }
        inst.tokens.push_back(fid);
      }
    }
    std::sort(inst.tokens.begin(), inst.tokens.end());
    const auto before = inst.tokens.size();
    inst.tokens.erase(std::unique(inst.tokens.begin(), inst.tokens.end()), inst.tokens.end());
    dup_features += static_cast<std::int64_t>(before - inst.tokens.size());
    if (static_cast<int>(inst.tokens.size()) > max_seq_len) inst.tokens.resize(static_cast<std::size_t>(max_seq_len));
    ds.items.push_back(std::move(inst));
  }
  if (static_cast<std::int64_t>(ds.items.size()) != m) {
    throw parse_error("sparse dataset: header declares " + std::to_string(m) + " instances, found " +
                      std::to_string(ds.items.size()));
  }
  if (dup_features > 0) {
    std::cerr << "warning: deduplicated " << dup_features << " repeated feature id(s)\n";
  }
  return ds;
}

inline Dataset parse_sparse_dataset(const std::string& path, int max_seq_len = 500) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open dataset: " + path);
  return parse_sparse_dataset(is, max_seq_len);
}

inline void serialize_sparse_dataset(const Dataset& ds, std::ostream& os) {
  os << ds.items.size() << " " << ds.vocab_size << " " << ds.label_count << "\n";
  for (const auto& it : ds.items) {
    for (std::size_t k = 0; k < it.labels.size(); ++k) {
      if (k) os << ",";
      os << it.labels[k];
    }
    for (int t : it.tokens) os << " " << t << ":1";
    os << "\n";
  }
}

inline void serialize_sparse_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open dataset for writing: " + path);
  serialize_sparse_dataset(ds, os);
}

// Token vocabulary for sequential datasets. Ids 0 and 1 are reserved for
// padding and unknown tokens; file line k (0-based) maps to id k + 2.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> tokens;  // index = id - 2
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()) + 2; }

  int id_of(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
  }
};

inline Vocab load_vocab(std::istream& is) {
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    v.index.emplace(line, static_cast<int>(v.tokens.size()) + 2);
    v.tokens.push_back(line);
  }
  return v;
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open vocabulary: " + path);
  Vocab v = load_vocab(is);
  if (v.tokens.empty()) throw parse_error("vocabulary file is empty: " + path);
  return v;
}

// Sequential format: one instance per line, `label,label<TAB>tok tok tok ...`.
// Out-of-vocabulary tokens map to UNK; sequences keep their prefix up to
// max_seq_len. label_count 0 means infer from the largest index seen.
inline Dataset parse_sequence_dataset(std::istream& is, const Vocab& vocab, int max_seq_len = 500,
                                      int label_count = 0) {
  Dataset ds;
  ds.input_type = InputType::sequential;
  ds.vocab_size = vocab.size();
  ds.label_count = label_count;
  std::string line;
  int line_no = 0;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) throw parse_error("line " + std::to_string(line_no) + ": empty line");
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw parse_error("line " + std::to_string(line_no) + ": expected `labels<TAB>tokens`");
    }
    Instance inst;
    inst.labels = detail::parse_label_field(line.substr(0, tab), label_count, line_no);
    for (int lab : inst.labels) max_label = std::max(max_label, lab);
    std::istringstream ts(line.substr(tab + 1));
    std::string tok;
    while (ts >> tok) {
      if (static_cast<int>(inst.tokens.size()) >= max_seq_len) break;
      inst.tokens.push_back(vocab.id_of(tok));
    }
    ds.items.push_back(std::move(inst));
  }
  if (ds.label_count == 0) ds.label_count = max_label + 1;
  return ds;
}

inline Dataset parse_sequence_dataset(const std::string& path, const std::string& vocab_path,
                                      int max_seq_len = 500, int label_count = 0) {
  Vocab v = load_vocab(vocab_path);
  std::ifstream is(path);
  if (!is) throw io_error("cannot open dataset: " + path);
  return parse_sequence_dataset(is, v, max_seq_len, label_count);
}

// Padded minibatch. mask is 1 exactly on real tokens.
struct Batch {
  int size = 0;     // B
  int seq_len = 0;  // S, longest real length in the batch
  std::vector<int> tokens;          // B*S, padded with 0
  std::vector<std::uint8_t> mask;   // B*S
  std::vector<std::uint8_t> labels; // B*L
  std::vector<int> instance_ids;    // position in the dataset

  const int* token_row(int b) const { return tokens.data() + static_cast<std::size_t>(b) * seq_len; }
  const std::uint8_t* mask_row(int b) const { return mask.data() + static_cast<std::size_t>(b) * seq_len; }
  const std::uint8_t* label_row(int b, int l) const { return labels.data() + static_cast<std::size_t>(b) * l; }
};

// Every instance appears exactly once per epoch; order is deterministic per
// (seed, epoch) when shuffling.
inline std::vector<Batch> make_batches(const Dataset& ds, int batch_size, bool shuffle,
                                       std::uint64_t seed, int epoch) {
  if (ds.items.empty()) throw degenerate_data_error("make_batches: empty dataset");
  if (batch_size < 1) throw config_error("make_batches: batch size must be positive");
  std::vector<int> order(ds.items.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
  }
  std::vector<Batch> batches;
  const int l = ds.label_count;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const int b = static_cast<int>(std::min<std::size_t>(batch_size, order.size() - start));
    Batch batch;
    batch.size = b;
    int s_max = 1;
    for (int k = 0; k < b; ++k) {
      s_max = std::max(s_max, static_cast<int>(ds.items[static_cast<std::size_t>(order[start + k])].tokens.size()));
    }
    batch.seq_len = s_max;
    batch.tokens.assign(static_cast<std::size_t>(b) * s_max, 0);
    batch.mask.assign(static_cast<std::size_t>(b) * s_max, 0);
    batch.labels.assign(static_cast<std::size_t>(b) * l, 0);
    batch.instance_ids.resize(static_cast<std::size_t>(b));
    for (int k = 0; k < b; ++k) {
      const int idx = order[start + k];
      batch.instance_ids[static_cast<std::size_t>(k)] = idx;
      const Instance& inst = ds.items[static_cast<std::size_t>(idx)];
      for (std::size_t t = 0; t < inst.tokens.size(); ++t) {
        batch.tokens[static_cast<std::size_t>(k) * s_max + t] = inst.tokens[t];
        batch.mask[static_cast<std::size_t>(k) * s_max + t] = 1;
      }
      for (int lab : inst.labels) batch.labels[static_cast<std::size_t>(k) * l + lab] = 1;
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

inline LabelBitsets label_bitsets(const Dataset& ds) {
  LabelBitsets y(ds.label_count, static_cast<int>(ds.items.size()));
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    for (int lab : ds.items[i].labels) y.set(lab, static_cast<int>(i));
  }
  return y;
}

// Seeded instance-level split into train/valid/test.
inline std::vector<Dataset> split_dataset(const Dataset& ds, double train_frac, double valid_frac,
                                          std::uint64_t seed) {
  if (train_frac < 0 || valid_frac < 0 || train_frac + valid_frac > 1.0) {
    throw config_error("split_dataset: fractions must be non-negative and sum to at most 1");
  }
  std::vector<int> order(ds.items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(order.size()));
  const std::size_t n_valid = static_cast<std::size_t>(valid_frac * static_cast<double>(order.size()));
  std::vector<Dataset> out(3);
  for (auto& d : out) {
    d.input_type = ds.input_type;
    d.label_count = ds.label_count;
    d.vocab_size = ds.vocab_size;
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Instance& inst = ds.items[static_cast<std::size_t>(order[k])];
    if (k < n_train) out[0].items.push_back(inst);
    else if (k < n_train + n_valid) out[1].items.push_back(inst);
    else out[2].items.push_back(inst);
  }
  return out;
}

}  // namespace mrmp
