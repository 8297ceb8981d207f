#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrmp/errors.hpp"
#include "mrmp/model.hpp"

namespace mrmp {

// Checkpoint layout: a directory holding manifest.json plus one params.bin
// blob of little-endian float32 arrays in manifest order. Round-trips are
// bitwise lossless; every manifest entry is validated against the blob before
// any tensor is handed back.

inline constexpr const char* kCheckpointFormat = "mrmp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"d_inner", c.d_inner},
                     {"n_enc_layers", c.n_enc_layers},
                     {"n_dec_layers", c.n_dec_layers},
                     {"n_rel_layers", c.n_rel_layers},
                     {"n_heads", c.n_heads},
                     {"dropout", c.dropout},
                     {"max_seq_len", c.max_seq_len},
                     {"vocab_size", c.vocab_size},
                     {"label_count", c.label_count},
                     {"positional_encoding", c.positional_encoding},
                     {"mrmp_enabled", c.mrmp_enabled},
                     {"layer_norm", c.layer_norm},
                     {"relation_relu_every_layer", c.relation_relu_every_layer},
                     {"relation_mean_aggregation", c.relation_mean_aggregation},
                     {"decoder_layer_aligned", c.decoder_layer_aligned}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("d_inner").get_to(c.d_inner);
  j.at("n_enc_layers").get_to(c.n_enc_layers);
  j.at("n_dec_layers").get_to(c.n_dec_layers);
  j.at("n_rel_layers").get_to(c.n_rel_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("dropout").get_to(c.dropout);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("label_count").get_to(c.label_count);
  j.at("positional_encoding").get_to(c.positional_encoding);
  j.at("mrmp_enabled").get_to(c.mrmp_enabled);
  j.at("layer_norm").get_to(c.layer_norm);
  j.at("relation_relu_every_layer").get_to(c.relation_relu_every_layer);
  j.at("relation_mean_aggregation").get_to(c.relation_mean_aggregation);
  j.at("decoder_layer_aligned").get_to(c.decoder_layer_aligned);
}

namespace detail {

inline std::uint32_t to_le_bits(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xFF000000u) >> 24) | ((bits & 0x00FF0000u) >> 8) |
           ((bits & 0x0000FF00u) << 8) | ((bits & 0x000000FFu) << 24);
  }
  return bits;
}

inline float from_le_bits(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xFF000000u) >> 24) | ((bits & 0x00FF0000u) >> 8) |
           ((bits & 0x0000FF00u) << 8) | ((bits & 0x000000FFu) << 24);
  }
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

struct CheckpointMeta {
  int epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json run = nlohmann::json::object();  // free-form provenance
};

// The relation graph is part of the model function (it shapes V^T), so it is
// stored in the manifest and restored on load.
inline nlohmann::json graph_to_json(const RelationGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (int i = 0; i < g.labels; ++i) {
    for (int j = i + 1; j < g.labels; ++j) {
      if (g.edge_plus(i, j)) edges.push_back({i, j, "+"});
      else if (g.edge_minus(i, j)) edges.push_back({i, j, "-"});
    }
  }
  return nlohmann::json{{"labels", g.labels}, {"alpha", g.alpha}, {"edges", std::move(edges)}};
}

inline RelationGraph graph_from_json(const nlohmann::json& j) {
  RelationGraph g(j.at("labels").get<int>(), j.value("alpha", 0.05));
  for (const auto& e : j.at("edges")) {
    g.add_edge(e.at(0).get<int>(), e.at(1).get<int>(),
               e.at(2).get<std::string>() == "+" ? Relation::pulling : Relation::pushing);
  }
  return g;
}

inline void save_checkpoint(ModelParams<float>& params, const ModelConfig& cfg,
                            const CheckpointMeta& meta, const std::string& dir,
                            const RelationGraph* graph = nullptr) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create checkpoint directory: " + dir);

  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["epoch"] = meta.epoch;
  manifest["metrics"] = meta.metrics;
  manifest["run"] = meta.run;
  manifest["config"] = cfg;
  if (graph) manifest["graph"] = graph_to_json(*graph);

  std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw io_error("cannot write checkpoint blob in " + dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  params.visit([&](const std::string& name, Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    for (float v : t.values()) {
      const std::uint32_t bits = detail::to_le_bits(v);
      blob.write(reinterpret_cast<const char*>(&bits), 4);
    }
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  });
  manifest["tensors"] = std::move(tensors);
  blob.close();
  if (!blob) throw io_error("checkpoint blob write failed in " + dir);

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw io_error("cannot write checkpoint manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  CheckpointMeta meta;
  RelationGraph graph;  // empty (label_count, alpha 0.05) when none was stored

  GraphTensors<float> graph_tensors() const {
    return make_graph_tensors<float>(graph, config.relation_mean_aggregation);
  }
};

inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw io_error("cannot open checkpoint manifest in " + dir);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  Checkpoint ckpt;
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat) {
      throw mismatch_error("not an mrmp checkpoint: " + dir);
    }
    if (manifest.at("version").get<int>() != kCheckpointVersion) {
      throw mismatch_error("unsupported checkpoint version " +
                           std::to_string(manifest.at("version").get<int>()));
    }
    ckpt.config = manifest.at("config").get<ModelConfig>();
    ckpt.meta.epoch = manifest.at("epoch").get<int>();
    ckpt.meta.metrics = manifest.value("metrics", nlohmann::json::object());
    ckpt.meta.run = manifest.value("run", nlohmann::json::object());
    if (manifest.contains("graph")) {
      ckpt.graph = graph_from_json(manifest.at("graph"));
      if (ckpt.graph.labels != ckpt.config.label_count) {
        throw mismatch_error("checkpoint graph and model disagree on label count");
      }
    } else {
      ckpt.graph = RelationGraph(ckpt.config.label_count, 0.05);
    }
  } catch (const nlohmann::json::exception& e) {
    throw parse_error("checkpoint manifest missing fields: " + std::string(e.what()));
  }

  ckpt.params = make_param_skeleton<float>(ckpt.config);
  std::vector<std::pair<std::string, Tensor<float>>> expected;
  ckpt.params.visit([&](const std::string& name, Tensor<float>& t) { expected.emplace_back(name, t); });

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != expected.size()) {
    throw mismatch_error("checkpoint tensor count does not match the declared architecture");
  }

  const fs::path blob_path = fs::path(dir) / "params.bin";
  std::error_code ec;
  const std::uint64_t blob_size = fs::file_size(blob_path, ec);
  if (ec) throw io_error("cannot stat checkpoint blob in " + dir);

  // Validate the whole manifest against the architecture and the blob before
  // reading any tensor data.
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& entry = tensors.at(i);
    if (entry.at("name").get<std::string>() != expected[i].first) {
      throw mismatch_error("checkpoint tensor name mismatch at index " + std::to_string(i) + ": " +
                           entry.at("name").get<std::string>() + " vs " + expected[i].first);
    }
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (shape != expected[i].second.shape()) {
      throw mismatch_error("checkpoint shape mismatch for tensor " + expected[i].first);
    }
    if (entry.at("offset").get<std::uint64_t>() != expected_offset) {
      throw mismatch_error("checkpoint offset mismatch for tensor " + expected[i].first);
    }
    if (entry.at("count").get<std::uint64_t>() != expected[i].second.size()) {
      throw mismatch_error("checkpoint element count mismatch for tensor " + expected[i].first);
    }
    expected_offset += static_cast<std::uint64_t>(expected[i].second.size()) * 4;
  }
  if (expected_offset != blob_size) {
    throw mismatch_error("checkpoint blob holds " + std::to_string(blob_size) + " bytes, manifest accounts for " +
                         std::to_string(expected_offset));
  }

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw io_error("cannot open checkpoint blob in " + dir);
  for (auto& [name, tensor] : expected) {
    for (float& v : tensor.values()) {
      std::uint32_t bits;
      blob.read(reinterpret_cast<char*>(&bits), 4);
      v = detail::from_le_bits(bits);
    }
    tensor.set_requires_grad(true);
  }
  if (!blob) throw io_error("checkpoint blob truncated mid-read in " + dir);
  return ckpt;
}

}  // namespace mrmp
