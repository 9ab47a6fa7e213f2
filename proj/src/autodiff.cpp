#include "dmba/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>

#include "dmba/errors.hpp"

namespace dmba {

double softplus(double x) {
  // log(1 + e^x) without overflow for large x or underflow loss for small x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs_grad = false;
  for (const Var& p : parents) {
    if (p.tape != this) throw ContractError("operand recorded on a different tape");
    needs_grad = needs_grad || nodes_[p.id].requires_grad;
  }
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const Var& p : parents) inputs_finite = inputs_finite && nodes_[p.id].value.all_finite();
  if (inputs_finite && !value.all_finite()) {
    throw RuntimeFailure("non-finite value produced from finite inputs");
  }
#endif
  nodes_.push_back(Node{std::move(value), {}, needs_grad ? std::move(backward) : BackwardFn{},
                        nullptr, needs_grad});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        nodes_[loss.id].value.shape_string());
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_mut(loss.id).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      Tensor& dst = n.param->grad;
      if (!dst.same_shape(n.value)) dst = Tensor(n.value.shape());
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

std::size_t Tape::value_bytes() const {
  std::size_t total = 0;
  for (const Node& n : nodes_) total += n.value.size() * sizeof(double);
  return total;
}

namespace ad {

namespace {

enum class Broadcast { kSame, kRow, kScalar };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  throw DimensionError(std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " +
                       a.shape_string());
}

inline std::size_t bidx(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame:
      return i;
    case Broadcast::kRow:
      return i % cols;
    case Broadcast::kScalar:
      return 0;
  }
  return 0;
}

// Applies a pointwise map and records its derivative as a function of
// (input, output).
template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->record(std::move(y), {a}, [a, df](Tape& t, std::size_t self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(a.id);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor c = dmba::matmul(a.value(), b.value());
  return a.tape->record(std::move(c), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor da = matmul_transposed_b(g, t.value(b.id));
      Tensor& ga = t.grad_mut(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += da[i];
    }
    if (t.requires_grad(b)) {
      Tensor db = matmul_transposed_a(t.value(a.id), g);
      Tensor& gb = t.grad_mut(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db[i];
    }
  });
}

Var elementwise(Binary op, Var a, Var b) {
  const char* name = op == Binary::kAdd ? "add" : op == Binary::kSub ? "sub" : "mul";
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = classify(x, y, name);
  const std::size_t cols = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yv = y[bidx(kind, i, cols)];
    switch (op) {
      case Binary::kAdd:
        out[i] = x[i] + yv;
        break;
      case Binary::kSub:
        out[i] = x[i] - yv;
        break;
      case Binary::kMul:
        out[i] = x[i] * yv;
        break;
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, op, kind, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(a.id);
    const Tensor& yv = t.value(b.id);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_mut(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += op == Binary::kMul ? g[i] * yv[bidx(kind, i, cols)] : g[i];
      }
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_mut(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = g[i];
        if (op == Binary::kSub) d = -d;
        if (op == Binary::kMul) d *= xv[i];
        gb[bidx(kind, i, cols)] += d;
      }
    }
  });
}

Var add(Var a, Var b) { return elementwise(Binary::kAdd, a, b); }
Var sub(Var a, Var b) { return elementwise(Binary::kSub, a, b); }
Var mul(Var a, Var b) { return elementwise(Binary::kMul, a, b); }

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var elementwise(Unary op, Var a) {
  switch (op) {
    case Unary::kNeg:
      return unary(
          a, [](double x) { return -x; }, [](double, double) { return -1.0; });
    case Unary::kExp:
      return unary(
          a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case Unary::kExpm1:
      return unary(
          a, [](double x) { return std::expm1(x); },
          [](double, double y) { return y + 1.0; });
    case Unary::kSoftplus:
      return unary(
          a, [](double x) { return dmba::softplus(x); },
          [](double x, double) { return sigmoid(x); });
    case Unary::kSilu:
      return unary(
          a, [](double x) { return x * sigmoid(x); },
          [](double x, double) {
            const double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
          });
    case Unary::kReciprocal: {
      const Tensor& x = a.value();
      if (std::any_of(x.data().begin(), x.data().end(), [](double v) { return v == 0.0; })) {
        throw SingularityError("reciprocal of zero");
      }
      return unary(
          a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
    }
  }
  throw ContractError("unknown unary op");
}

Var neg(Var a) { return elementwise(Unary::kNeg, a); }
Var exp(Var a) { return elementwise(Unary::kExp, a); }
Var expm1(Var a) { return elementwise(Unary::kExpm1, a); }
Var softplus(Var a) { return elementwise(Unary::kSoftplus, a); }
Var silu(Var a) { return elementwise(Unary::kSilu, a); }
Var reciprocal(Var a) { return elementwise(Unary::kReciprocal, a); }

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
    if (!t.requires_grad(a)) return;
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw EmptySelectionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var cross_entropy(Var logits, std::span<const int> labels, const std::vector<bool>& mask) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), c = z.cols();
  if (labels.size() != n || mask.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " logit rows, " +
                         std::to_string(labels.size()) + " labels, " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(c) + " classes");
    }
    picked.push_back(i);
  }
  if (picked.empty()) throw EmptySelectionError("cross_entropy: mask selects no nodes");

  // Softmax rows are kept for the backward pass.
  Tensor probs({picked.size(), c});
  double total = 0.0;
  for (std::size_t k = 0; k < picked.size(); ++k) {
    const auto row = z.row(picked[k]);
    const double m = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs(k, j) = std::exp(row[j] - m);
      denom += probs(k, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(k, j) /= denom;
    total += std::log(denom) + m - row[labels[picked[k]]];
  }
  const double count = static_cast<double>(picked.size());
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record(
      Tensor::scalar(total / count), {logits},
      [logits, picked = std::move(picked), probs = std::move(probs), lab = std::move(lab), count](
          Tape& t, std::size_t self) {
        if (!t.requires_grad(logits)) return;
        const double g = t.grad(self)[0] / count;
        Tensor& gz = t.grad_mut(logits.id);
        const std::size_t c = probs.cols();
        for (std::size_t k = 0; k < picked.size(); ++k) {
          const std::size_t i = picked[k];
          for (std::size_t j = 0; j < c; ++j) gz(i, j) += g * probs(k, j);
          gz(i, static_cast<std::size_t>(lab[i])) -= g;
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + x.shape_string());
  }
  const std::size_t n = x.rows(), w = end - begin;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = x(i, begin + j);
  return a.tape->record(std::move(out), {a}, [a, begin, w](Tape& t, std::size_t self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i, begin + j) += g(i, j);
  });
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& x = a.value();
  const std::size_t m = x.cols();
  Tensor out({rows.size(), m});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(rows[k]) + " outside " +
                           x.shape_string());
    }
    std::copy(x.row(rows[k]).begin(), x.row(rows[k]).end(), out.row(k).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, std::size_t self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_mut(a.id);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto src = g.row(k);
      auto dst = ga.row(idx[k]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var reverse_rows(Var a) {
  const std::size_t n = a.value().rows();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = n - 1 - i;
  return select_rows(a, idx);
}

Var rms_norm(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (c == 0) throw DimensionError("rms_norm: zero-width input");
  Tensor y(x.shape());
  auto inv = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ms = 0.0;
    for (double v : x.row(i)) ms += v * v;
    (*inv)[i] = 1.0 / std::sqrt(ms / static_cast<double>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) y(i, j) = x(i, j) * (*inv)[i];
  }
  return a.tape->record(std::move(y), {a}, [a, inv](Tape& t, std::size_t self) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_mut(a.id);
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * yv(i, j);
      dot /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += (g(i, j) - yv(i, j) * dot) * (*inv)[i];
    }
  });
}

Var interleave_steps(std::span<const Var> steps) {
  if (steps.empty()) throw ContractError("interleave_steps: no steps");
  Tape* tape = steps.front().tape;
  const Tensor& first = steps.front().value();
  const std::size_t n = first.rows(), c = first.cols(), len = steps.size();
  for (const Var& s : steps) {
    if (s.value().shape() != first.shape()) {
      throw DimensionError("interleave_steps: step shapes differ, " + s.value().shape_string() +
                           " vs " + first.shape_string());
    }
  }
  Tensor out({n * len, c});
  for (std::size_t t = 0; t < len; ++t) {
    const Tensor& x = steps[t].value();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(x.row(i).begin(), x.row(i).end(), out.row(i * len + t).begin());
    }
  }
  std::vector<Var> parents(steps.begin(), steps.end());
  return tape->record(std::move(out), parents, [parents](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const std::size_t len = parents.size();
    for (std::size_t s = 0; s < len; ++s) {
      if (!t.requires_grad(parents[s])) continue;
      Tensor& gs = t.grad_mut(parents[s].id);
      for (std::size_t i = 0; i < gs.rows(); ++i) {
        const auto src = g.row(i * len + s);
        auto dst = gs.row(i);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
    }
  });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return a;
  Tensor keep(a.value().shape());
  std::bernoulli_distribution coin(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = coin(rng) ? s : 0.0;
  return mul(a, a.tape->constant(std::move(keep)));
}

}  // namespace ad
}  // namespace dmba
