#pragma once

#include <cstddef>
#include <cstdint>

#include "dmba/autodiff.hpp"
#include "dmba/gradcheck.hpp"
#include "dmba/graph.hpp"
#include "dmba/ssm.hpp"

namespace dmba {

// Local state evolution: each node's representations at hops 0..L form a
// sequence that one shared selective block scans; the last-step output is
// the node's local representation.
struct LsembaLayer {
  Parameter input_proj;  // d x d_model
  SsmBlock block;
  std::size_t depth = 1;
  ScanHooks hooks;

  std::size_t d_model() const { return block.d_model; }
  std::vector<Parameter*> parameters();
};

LsembaLayer make_lsemba(std::size_t in_features, std::size_t d_model, std::size_t d_state,
                        std::size_t depth, std::uint64_t seed);

// N x d_model local representations.
Var lsemba_forward(Tape& tape, LsembaLayer& layer, const Graph& graph,
                   const NormalizedPropagator& prop);

// Finite-difference check of every LSEMba parameter under a fixed random
// linear read-out of the layer output. Limited to small problems.
GradCheckReport lsemba_gradcheck(LsembaLayer& layer, const Graph& graph,
                                 const GradCheckOptions& options = {});

}  // namespace dmba
