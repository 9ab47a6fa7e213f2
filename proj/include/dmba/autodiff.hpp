#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dmba/tensor.hpp"

namespace dmba {

// A trainable leaf. Owned by a model; the tape only borrows it for the
// duration of one forward/backward pass and accumulates into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Define-by-run gradient tape. Nodes are appended in execution order, so the
// vector index is already a topological order and backward is one reverse
// sweep. A tape belongs to exactly one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value);
  Var param(Parameter& p);

  // Records a computed node. `parents` decides whether the node needs a
  // gradient; `backward` is dropped when none of them does.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  // Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse and adds every leaf
  // gradient into its Parameter::grad.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_mut(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  std::size_t size() const { return nodes_.size(); }
  // Bytes held by recorded values (gradients excluded).
  std::size_t value_bytes() const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

namespace ad {

Var matmul(Var a, Var b);

// Binary elementwise ops. `b` may match `a`'s shape, be a 1xC row broadcast
// over the rows of `a`, or be a 1x1 scalar broadcast over all of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double factor);
Var neg(Var a);
Var exp(Var a);
Var expm1(Var a);
Var softplus(Var a);
Var silu(Var a);
// Throws SingularityError if any element is exactly zero.
Var reciprocal(Var a);

enum class Unary { kNeg, kExp, kExpm1, kSoftplus, kSilu, kReciprocal };
enum class Binary { kAdd, kSub, kMul };
Var elementwise(Unary op, Var a);
Var elementwise(Binary op, Var a, Var b);

Var sum(Var a);
Var mean(Var a);

// Mean negative log-softmax over the rows selected by `mask`.
Var cross_entropy(Var logits, std::span<const int> labels, const std::vector<bool>& mask);

Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var select_rows(Var a, std::span<const std::size_t> rows);
Var reverse_rows(Var a);
// Row-wise x / sqrt(mean(x²) + eps).
Var rms_norm(Var a, double eps = 1e-6);

// Stacks T equally shaped [N x C] tensors into [N*T x C] with row n*T + t
// holding steps[t] row n: one contiguous length-T sequence per node.
Var interleave_steps(std::span<const Var> steps);

// Inverted dropout; identity when rate == 0.
Var dropout(Var a, double rate, std::mt19937_64& rng);

}  // namespace ad

// Numerically stable scalar helpers shared by ops and tests.
double softplus(double x);
double sigmoid(double x);

}  // namespace dmba
