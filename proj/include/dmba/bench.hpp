#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dmba/gcamba.hpp"
#include "dmba/tensor.hpp"

namespace dmba {

struct BenchOptions {
  std::size_t in_features = 16;
  std::size_t d_model = 16;
  std::size_t d_state = 16;
  std::uint64_t seed = 0;
  // The dense reference stores an N x N score matrix; sizes whose matrix
  // would exceed this many bytes are timed scan-only.
  std::size_t dense_memory_guard = std::size_t{1} << 30;
  // Each timing repeats until at least this much wall time has passed and
  // reports the median repeat.
  double min_total_ms = 200.0;
  int min_repeats = 3;
};

struct BenchRow {
  std::size_t n_nodes = 0;
  double gcamba_ms = 0.0;
  std::optional<double> dense_attention_ms;
  std::size_t peak_mem_estimate = 0;  // GCAMba forward tape bytes
  std::size_t dense_peak_mem_estimate = 0;
};

// softmax(F·Fᵀ/√d)·F over all node pairs: the quadratic global aggregator
// GCAMba is compared against.
Tensor dense_attention(const Tensor& f);

std::vector<BenchRow> run_bench(std::span<const std::size_t> sizes, const BenchOptions& options = {});

}  // namespace dmba
