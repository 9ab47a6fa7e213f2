#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "dmba/autodiff.hpp"
#include "dmba/graph.hpp"
#include "dmba/ssm.hpp"

namespace dmba {

// Global context: one selective block scans the node sequence F in both
// directions and the result is mixed with F through the residual weight β.
struct GcambaLayer {
  Parameter input_proj;  // d x d_model
  SsmBlock block;
  // Separate weights for the reverse direction; empty means both
  // directions share `block`.
  std::optional<SsmBlock> reverse_block;
  double beta = 0.5;
  // false keeps only the forward direction (ablation).
  bool bidirectional = true;

  std::size_t d_model() const { return block.d_model; }
  std::vector<Parameter*> parameters();
};

GcambaLayer make_gcamba(std::size_t in_features, std::size_t d_model, std::size_t d_state,
                        double beta, std::uint64_t seed, bool untied_directions = false);

// F: projected initial representations in canonical node order.
Var build_node_sequence(Tape& tape, GcambaLayer& layer, const Tensor& features);

// (1-β)·(f(F) + Re(f(Re F))) + β·F over node rows given by `features`.
Var gcamba_forward(Tape& tape, GcambaLayer& layer, const Tensor& features);
Var gcamba_forward(Tape& tape, GcambaLayer& layer, const Graph& graph);

// Checks Ŷ(Re F) == Re Ŷ(F) elementwise within `tolerance`.
bool reversal_equivariance_check(GcambaLayer& layer, const Graph& graph, double tolerance = 1e-10);

}  // namespace dmba
