#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "dmba/graph.hpp"

namespace dmba {

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
  std::string name;
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::string edges_file = "edges.csv";
  std::string features_file = "features.csv";
  std::string labels_file = "labels.csv";
  std::string splits_file = "splits.json";
  std::optional<std::uint64_t> active_split;
  int version = kDatasetFormatVersion;
};

// Reads manifest.json and the files it names. Edges are symmetrized and
// deduplicated; the active split (or the lowest seed) becomes graph.masks.
Graph load_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

// Writes the directory layout read by load_dataset. Refuses to replace an
// existing dataset unless `overwrite` is set.
DatasetManifest save_dataset(const Graph& graph, const std::filesystem::path& dir,
                             bool overwrite = false);

struct SbmSpec {
  std::size_t n_nodes = 200;
  std::size_t blocks = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  std::size_t feat_dim = 8;
  double feat_sigma = 0.5;
  std::uint64_t seed = 0;
  // Subtract the column means of the features after sampling.
  bool center_features = false;
  // Resample (up to 10 seeds) until the graph is connected.
  bool require_connected = true;
};

// Equal-size blocks (remainder to the first blocks) placed on a random node
// order. Features are e_block + N(0, sigma²) with e_b the b-th unit vector.
Graph generate_sbm(const SbmSpec& spec);

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
  bool stratified = true;
};

Masks make_splits(const Graph& graph, const SplitSpec& spec);

// Writes `content` to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace dmba
