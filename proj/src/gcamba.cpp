#include "dmba/gcamba.hpp"

#include <cmath>
#include <random>

#include "dmba/errors.hpp"

namespace dmba {

std::vector<Parameter*> GcambaLayer::parameters() {
  std::vector<Parameter*> ps{&input_proj};
  for (Parameter* p : block.parameters()) ps.push_back(p);
  if (reverse_block) {
    for (Parameter* p : reverse_block->parameters()) ps.push_back(p);
  }
  return ps;
}

GcambaLayer make_gcamba(std::size_t in_features, std::size_t d_model, std::size_t d_state,
                        double beta, std::uint64_t seed, bool untied_directions) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ValidationError("GCAMba beta must lie in [0, 1], got " + std::to_string(beta));
  }
  if (in_features == 0) throw ValidationError("GCAMba needs at least one input feature");
  std::mt19937_64 rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(in_features));
  std::uniform_real_distribution<double> uni(-s, s);
  Tensor w({in_features, d_model});
  for (double& v : w.data()) v = uni(rng);
  GcambaLayer layer;
  layer.input_proj = Parameter("gcamba.input_proj", std::move(w));
  layer.block = init_hippo(d_model, d_state, rng(), "gcamba");
  if (untied_directions) layer.reverse_block = init_hippo(d_model, d_state, rng(), "gcamba_rev");
  layer.beta = beta;
  return layer;
}

Var build_node_sequence(Tape& tape, GcambaLayer& layer, const Tensor& features) {
  if (features.cols() != layer.input_proj.value.rows()) {
    throw DimensionError("build_node_sequence: feature width " + std::to_string(features.cols()) +
                         " != " + std::to_string(layer.input_proj.value.rows()));
  }
  return ad::matmul(tape.constant(features), tape.param(layer.input_proj));
}

Var gcamba_forward(Tape& tape, GcambaLayer& layer, const Tensor& features) {
  const Var f = build_node_sequence(tape, layer, features);
  if (layer.beta == 1.0) return f;
  Var mixed = selective_scan(tape, layer.block, f).out;
  if (layer.bidirectional) {
    SsmBlock& rev = layer.reverse_block ? *layer.reverse_block : layer.block;
    const Var backward = ad::reverse_rows(selective_scan(tape, rev, ad::reverse_rows(f)).out);
    mixed = ad::add(mixed, backward);
  }
  if (layer.beta == 0.0) return mixed;
  return ad::add(ad::scale(mixed, 1.0 - layer.beta), ad::scale(f, layer.beta));
}

Var gcamba_forward(Tape& tape, GcambaLayer& layer, const Graph& graph) {
  return gcamba_forward(tape, layer, graph.features);
}

bool reversal_equivariance_check(GcambaLayer& layer, const Graph& graph, double tolerance) {
  const Tensor& x = graph.features;
  const std::size_t n = x.rows();
  Tensor reversed(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(x.row(i).begin(), x.row(i).end(), reversed.row(n - 1 - i).begin());
  }
  Tape tape;
  const Tensor out = gcamba_forward(tape, layer, x).value();
  const Tensor out_rev = gcamba_forward(tape, layer, reversed).value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (!(std::abs(out_rev(i, c) - out(n - 1 - i, c)) <= tolerance)) return false;
    }
  }
  return true;
}

}  // namespace dmba
