#include "dmba/graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "dmba/errors.hpp"

namespace dmba {

double CsrMatrix::at(std::size_t i, std::size_t j) const {
  const auto begin = cols.begin() + static_cast<std::ptrdiff_t>(row_ptr[i]);
  const auto end = cols.begin() + static_cast<std::ptrdiff_t>(row_ptr[i + 1]);
  const auto it = std::lower_bound(begin, end, j);
  if (it == end || *it != j) return 0.0;
  return values.empty() ? 1.0 : values[static_cast<std::size_t>(it - cols.begin())];
}

Tensor CsrMatrix::to_dense() const {
  Tensor d({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      d(i, cols[k]) = values.empty() ? 1.0 : values[k];
  return d;
}

std::size_t count(const std::vector<bool>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::size_t Graph::n_classes() const {
  int m = -1;
  for (int l : labels) m = std::max(m, l);
  return static_cast<std::size_t>(m + 1);
}

Graph Graph::from_edges(std::size_t n_nodes,
                        std::span<const std::pair<std::size_t, std::size_t>> edges,
                        Tensor features, std::vector<int> labels) {
  std::vector<std::vector<std::size_t>> nbrs(n_nodes);
  for (const auto& [a, b] : edges) {
    if (a >= n_nodes || b >= n_nodes) {
      throw ValidationError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                            ") references a node outside [0, " + std::to_string(n_nodes) + ")");
    }
    if (a == b) continue;
    nbrs[a].push_back(b);
    nbrs[b].push_back(a);
  }
  Graph g;
  g.n_nodes = n_nodes;
  g.adjacency.n = n_nodes;
  g.adjacency.row_ptr.assign(1, 0);
  for (auto& row : nbrs) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    g.adjacency.cols.insert(g.adjacency.cols.end(), row.begin(), row.end());
    g.adjacency.row_ptr.push_back(g.adjacency.cols.size());
  }
  g.features = std::move(features);
  g.labels = std::move(labels);
  return g;
}

void Graph::validate() const {
  const auto& a = adjacency;
  if (a.n != n_nodes || a.row_ptr.size() != n_nodes + 1) {
    throw ValidationError("adjacency size does not match n_nodes = " + std::to_string(n_nodes));
  }
  for (std::size_t i = 0; i < n_nodes; ++i) {
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const std::size_t j = a.cols[k];
      if (j >= n_nodes) throw ValidationError("adjacency column out of range in row " + std::to_string(i));
      if (j == i) throw ValidationError("self-loop stored at node " + std::to_string(i));
      if (k > a.row_ptr[i] && a.cols[k - 1] >= j) {
        throw ValidationError("adjacency row " + std::to_string(i) + " unsorted or duplicated");
      }
      if (a.at(j, i) == 0.0) {
        throw ValidationError("adjacency not symmetric: (" + std::to_string(i) + ", " +
                              std::to_string(j) + ") has no reverse edge");
      }
    }
  }
  if (features.rows() != n_nodes) {
    throw ValidationError("features have " + std::to_string(features.rows()) + " rows, expected " +
                          std::to_string(n_nodes));
  }
  if (labels.size() != n_nodes) {
    throw ValidationError("labels have " + std::to_string(labels.size()) + " entries, expected " +
                          std::to_string(n_nodes));
  }
  for (int l : labels) {
    if (l < 0) throw ValidationError("negative class label " + std::to_string(l));
  }
  auto check_masks = [&](const Masks& m) {
    if (m.empty()) return;
    if (m.train.size() != n_nodes || m.val.size() != n_nodes || m.test.size() != n_nodes) {
      throw ValidationError("split masks must each have n_nodes entries");
    }
    for (std::size_t i = 0; i < n_nodes; ++i) {
      if (int(m.train[i]) + int(m.val[i]) + int(m.test[i]) > 1) {
        throw ValidationError("node " + std::to_string(i) + " is in more than one split");
      }
    }
  };
  check_masks(masks);
  for (const auto& [seed, m] : splits) check_masks(m);
}

void Graph::use_split(std::uint64_t seed) {
  const auto it = splits.find(seed);
  if (it == splits.end()) throw ValidationError("no split stored for seed " + std::to_string(seed));
  masks = it->second;
}

bool operator==(const Graph& a, const Graph& b) {
  return a.name == b.name && a.n_nodes == b.n_nodes && a.adjacency.row_ptr == b.adjacency.row_ptr &&
         a.adjacency.cols == b.adjacency.cols && a.features == b.features && a.labels == b.labels &&
         a.masks == b.masks && a.splits == b.splits;
}

bool is_connected(const Graph& g) {
  if (g.n_nodes == 0) return true;
  std::vector<bool> seen(g.n_nodes, false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop();
    for (std::size_t k = g.adjacency.row_ptr[i]; k < g.adjacency.row_ptr[i + 1]; ++k) {
      const std::size_t j = g.adjacency.cols[k];
      if (!seen[j]) {
        seen[j] = true;
        ++reached;
        q.push(j);
      }
    }
  }
  return reached == g.n_nodes;
}

Graph relabel(const Graph& g, std::span<const std::size_t> perm) {
  if (perm.size() != g.n_nodes) throw DimensionError("relabel: permutation length != n_nodes");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    for (std::size_t k = g.adjacency.row_ptr[i]; k < g.adjacency.row_ptr[i + 1]; ++k)
      if (i < g.adjacency.cols[k]) edges.emplace_back(perm[i], perm[g.adjacency.cols[k]]);
  Tensor feats(g.features.shape());
  std::vector<int> labels(g.labels.size());
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    std::copy(g.features.row(i).begin(), g.features.row(i).end(), feats.row(perm[i]).begin());
    if (!g.labels.empty()) labels[perm[i]] = g.labels[i];
  }
  Graph out = Graph::from_edges(g.n_nodes, edges, std::move(feats), std::move(labels));
  out.name = g.name;
  auto permute = [&](const Masks& m) {
    if (m.empty()) return m;
    Masks r{std::vector<bool>(g.n_nodes), std::vector<bool>(g.n_nodes), std::vector<bool>(g.n_nodes)};
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
      r.train[perm[i]] = m.train[i];
      r.val[perm[i]] = m.val[i];
      r.test[perm[i]] = m.test[i];
    }
    return r;
  };
  out.masks = permute(g.masks);
  for (const auto& [seed, m] : g.splits) out.splits[seed] = permute(m);
  return out;
}

NormalizedPropagator::NormalizedPropagator(const Graph& g) {
  if (g.n_nodes == 0) throw ValidationError("normalize: graph has no nodes");
  const CsrMatrix& a = g.adjacency;
  if (a.n != g.n_nodes || a.row_ptr.size() != g.n_nodes + 1) {
    throw ValidationError("normalize: adjacency size does not match n_nodes");
  }
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      if (a.at(a.cols[k], i) == 0.0) {
        throw ValidationError("normalize: adjacency not symmetric at (" + std::to_string(i) + ", " +
                              std::to_string(a.cols[k]) + ")");
      }
    }
  }
  const std::size_t n = g.n_nodes;
  degrees_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t d = 1;
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) d += a.cols[k] != i;
    degrees_[i] = static_cast<double>(d);
  }
  auto m = std::make_shared<CsrMatrix>();
  m->n = n;
  m->row_ptr.assign(1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    auto emit = [&](std::size_t j) {
      m->cols.push_back(j);
      m->values.push_back(1.0 / std::sqrt(degrees_[i] * degrees_[j]));
    };
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const std::size_t j = a.cols[k];
      if (j == i) continue;
      if (!diag_done && j > i) {
        emit(i);
        diag_done = true;
      }
      emit(j);
    }
    if (!diag_done) emit(i);
    m->row_ptr.push_back(m->cols.size());
  }
  matrix_ = std::move(m);
}

NormalizedPropagator normalize(const Graph& g) { return NormalizedPropagator(g); }

namespace {

void spmm(const CsrMatrix& m, const Tensor& x, Tensor& out) {
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < m.n; ++i) {
    double* dst = out.data().data() + i * c;
    for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) {
      const double v = m.values[k];
      const double* src = x.data().data() + m.cols[k] * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += v * src[j];
    }
  }
}

void check_rows(const NormalizedPropagator& prop, const Tensor& x) {
  if (x.rows() != prop.n()) {
    throw DimensionError("propagate: input has " + std::to_string(x.rows()) + " rows, graph has " +
                         std::to_string(prop.n()) + " nodes");
  }
}

}  // namespace

Tensor propagate(const NormalizedPropagator& prop, const Tensor& x) {
  check_rows(prop, x);
  Tensor out({x.rows(), x.cols()});
  spmm(prop.matrix(), x, out);
  return out;
}

Var propagate(const NormalizedPropagator& prop, Var x) {
  check_rows(prop, x.value());
  Tensor out({x.rows(), x.cols()});
  spmm(prop.matrix(), x.value(), out);
  std::shared_ptr<const CsrMatrix> m = prop.matrix_;
  return x.tape->record(std::move(out), {x}, [x, m](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    // dX = Mᵀ·dY, written as a scatter so it does not lean on symmetry.
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_mut(x.id);
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < m->n; ++i) {
      const double* src = g.data().data() + i * c;
      for (std::size_t k = m->row_ptr[i]; k < m->row_ptr[i + 1]; ++k) {
        const double v = m->values[k];
        double* dst = gx.data().data() + m->cols[k] * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += v * src[j];
      }
    }
  });
}

LayerSequence build_layer_sequence(const NormalizedPropagator& prop, const Tensor& x0,
                                   std::size_t depth) {
  check_rows(prop, x0);
  LayerSequence seq;
  seq.per_hop.reserve(depth + 1);
  seq.per_hop.push_back(x0);
  for (std::size_t l = 1; l <= depth; ++l) seq.per_hop.push_back(propagate(prop, seq.per_hop.back()));
  return seq;
}

std::vector<Var> build_layer_sequence(const NormalizedPropagator& prop, Var x0, std::size_t depth) {
  std::vector<Var> hops{x0};
  hops.reserve(depth + 1);
  for (std::size_t l = 1; l <= depth; ++l) hops.push_back(propagate(prop, hops.back()));
  return hops;
}

namespace {

double row_distance(const Tensor& h, std::size_t i, std::size_t j) {
  const auto a = h.row(i);
  const auto b = h.row(j);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double oversmoothing_metric(const Tensor& h, std::optional<std::size_t> sample_pairs,
                            std::uint64_t seed) {
  const std::size_t n = h.rows();
  if (n < 2) throw ContractError("oversmoothing_metric needs at least 2 nodes, got " + std::to_string(n));
  if (!sample_pairs && n > kExactMetricLimit) sample_pairs = kDefaultMetricPairs;

  if (!sample_pairs) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) total += row_distance(h, i, j);
    return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
  }
  if (*sample_pairs == 0) throw ContractError("oversmoothing_metric: sample_pairs must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> first(0, n - 1), second(0, n - 2);
  double total = 0.0;
  for (std::size_t s = 0; s < *sample_pairs; ++s) {
    const std::size_t i = first(rng);
    std::size_t j = second(rng);
    if (j >= i) ++j;
    total += row_distance(h, i, j);
  }
  return total / static_cast<double>(*sample_pairs);
}

}  // namespace dmba
