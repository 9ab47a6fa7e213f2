#include "dmba/lsemba.hpp"

#include <cmath>
#include <random>

#include "dmba/errors.hpp"

namespace dmba {

std::vector<Parameter*> LsembaLayer::parameters() {
  std::vector<Parameter*> ps{&input_proj};
  for (Parameter* p : block.parameters()) ps.push_back(p);
  return ps;
}

LsembaLayer make_lsemba(std::size_t in_features, std::size_t d_model, std::size_t d_state,
                        std::size_t depth, std::uint64_t seed) {
  if (depth == 0) throw ValidationError("LSEMba depth must be >= 1");
  if (in_features == 0) throw ValidationError("LSEMba needs at least one input feature");
  std::mt19937_64 rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(in_features));
  std::uniform_real_distribution<double> uni(-s, s);
  Tensor w({in_features, d_model});
  for (double& v : w.data()) v = uni(rng);
  LsembaLayer layer;
  layer.input_proj = Parameter("lsemba.input_proj", std::move(w));
  layer.block = init_hippo(d_model, d_state, rng(), "lsemba");
  layer.depth = depth;
  return layer;
}

Var lsemba_forward(Tape& tape, LsembaLayer& layer, const Graph& graph,
                   const NormalizedPropagator& prop) {
  if (prop.n() != graph.n_nodes) {
    throw DimensionError("lsemba_forward: propagator has " + std::to_string(prop.n()) +
                         " nodes, graph has " + std::to_string(graph.n_nodes));
  }
  if (graph.features.cols() != layer.input_proj.value.rows()) {
    throw DimensionError("lsemba_forward: feature width " + std::to_string(graph.features.cols()) +
                         " != " + std::to_string(layer.input_proj.value.rows()));
  }
  const Var x0 = ad::matmul(tape.constant(graph.features), tape.param(layer.input_proj));
  const std::vector<Var> hops = build_layer_sequence(prop, x0, layer.depth);
  const Var seq = ad::interleave_steps(hops);
  BlockOptions opts;
  opts.batch = graph.n_nodes;
  opts.readout = Readout::kLastStep;
  opts.hooks = layer.hooks;
  return selective_scan(tape, layer.block, seq, opts).out;
}

GradCheckReport lsemba_gradcheck(LsembaLayer& layer, const Graph& graph,
                                 const GradCheckOptions& options) {
  if (graph.n_nodes > 16 || layer.depth > 4) {
    throw ContractError("lsemba_gradcheck is limited to N <= 16 and L <= 4");
  }
  const NormalizedPropagator prop = normalize(graph);
  std::mt19937_64 rng(options.seed ^ 0x5eedULL);
  std::normal_distribution<double> normal;
  Tensor readout({graph.n_nodes, layer.d_model()});
  for (double& v : readout.data()) v = normal(rng);
  const auto params = layer.parameters();
  return check_gradients(
      params,
      [&](Tape& tape) {
        const Var y = lsemba_forward(tape, layer, graph, prop);
        return ad::sum(ad::mul(y, tape.constant(readout)));
      },
      options);
}

}  // namespace dmba
