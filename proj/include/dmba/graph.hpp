#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmba/autodiff.hpp"
#include "dmba/tensor.hpp"

namespace dmba {

// Compressed sparse rows with sorted column indices inside each row.
struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> values;

  std::size_t nnz() const { return cols.size(); }
  double at(std::size_t i, std::size_t j) const;
  Tensor to_dense() const;
};

struct Masks {
  std::vector<bool> train;
  std::vector<bool> val;
  std::vector<bool> test;

  bool empty() const { return train.empty() && val.empty() && test.empty(); }
  friend bool operator==(const Masks&, const Masks&) = default;
};

std::size_t count(const std::vector<bool>& mask);

// Undirected, unweighted graph with node data. `adjacency` stores A without
// self-loops; each undirected edge appears as (i,j) and (j,i).
struct Graph {
  std::string name = "graph";
  std::size_t n_nodes = 0;
  CsrMatrix adjacency;
  Tensor features;          // N x d
  std::vector<int> labels;  // N class ids
  Masks masks;              // active split
  std::map<std::uint64_t, Masks> splits;

  std::size_t n_edges() const { return adjacency.nnz() / 2; }
  std::size_t n_features() const { return features.cols(); }
  std::size_t n_classes() const;
  std::size_t degree(std::size_t i) const { return adjacency.row_ptr[i + 1] - adjacency.row_ptr[i]; }

  // Builds the CSR pattern from an edge list, symmetrizing, dropping
  // self-loops and merging duplicates.
  static Graph from_edges(std::size_t n_nodes, std::span<const std::pair<std::size_t, std::size_t>> edges,
                          Tensor features, std::vector<int> labels);

  // Throws ValidationError describing the first broken invariant.
  void validate() const;
  // Makes splits[seed] the active masks.
  void use_split(std::uint64_t seed);

  friend bool operator==(const Graph&, const Graph&);
};

bool is_connected(const Graph& g);

// New graph in which old node i becomes node perm[i].
Graph relabel(const Graph& g, std::span<const std::size_t> perm);

// D̃^{-1/2}(A+I)D̃^{-1/2} with d̃_i = 1 + deg(i). Immutable once built; the
// matrix is shared so tape closures can keep it alive.
class NormalizedPropagator {
 public:
  explicit NormalizedPropagator(const Graph& g);

  std::size_t n() const { return matrix_->n; }
  const CsrMatrix& matrix() const { return *matrix_; }
  const std::vector<double>& degrees() const { return degrees_; }

 private:
  std::shared_ptr<const CsrMatrix> matrix_;
  std::vector<double> degrees_;
  friend Var propagate(const NormalizedPropagator&, Var);
};

NormalizedPropagator normalize(const Graph& g);

Tensor propagate(const NormalizedPropagator& prop, const Tensor& x);
Var propagate(const NormalizedPropagator& prop, Var x);

struct LayerSequence {
  std::vector<Tensor> per_hop;  // X^(0) .. X^(L)

  std::size_t depth() const { return per_hop.empty() ? 0 : per_hop.size() - 1; }
};

LayerSequence build_layer_sequence(const NormalizedPropagator& prop, const Tensor& x0,
                                   std::size_t depth);
// Tape-recorded variant used inside the model.
std::vector<Var> build_layer_sequence(const NormalizedPropagator& prop, Var x0,
                                      std::size_t depth);

inline constexpr std::size_t kExactMetricLimit = 2000;
inline constexpr std::size_t kDefaultMetricPairs = 100000;

// Mean Euclidean distance between node representations. Exact over all
// unordered pairs unless `sample_pairs` is given or N exceeds
// kExactMetricLimit, in which case uniformly drawn pairs (i != j) are used.
double oversmoothing_metric(const Tensor& h, std::optional<std::size_t> sample_pairs = std::nullopt,
                            std::uint64_t seed = 0);

}  // namespace dmba
