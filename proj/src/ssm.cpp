#include "dmba/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "dmba/errors.hpp"

namespace dmba {

std::vector<Parameter*> SsmBlock::parameters() {
  return {&a_log, &w_in, &w_q, &w_r, &w_delta, &b_delta, &w_out, &d_skip, &norm_gain};
}

Tensor SsmBlock::state_matrix() const {
  Tensor p(a_log.value.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = -std::exp(a_log.value[i]);
  return p;
}

SsmBlock init_hippo(std::size_t d_model, std::size_t d_state, std::uint64_t seed,
                    const std::string& name) {
  if (d_model == 0 || d_state == 0) {
    throw ValidationError("init_hippo: d_model and d_state must be >= 1");
  }
  std::mt19937_64 rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  std::uniform_real_distribution<double> uni(-s, s);
  auto random = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data()) v = uni(rng);
    return t;
  };

  SsmBlock b;
  b.d_model = d_model;
  b.d_state = d_state;
  Tensor a({d_model, d_state});
  for (std::size_t c = 0; c < d_model; ++c)
    for (std::size_t n = 0; n < d_state; ++n) a(c, n) = std::log(static_cast<double>(n + 1));
  b.a_log = Parameter(name + ".a_log", std::move(a));
  b.w_in = Parameter(name + ".w_in", random(d_model, 2 * d_model));
  b.w_q = Parameter(name + ".w_q", random(d_model, d_state));
  b.w_r = Parameter(name + ".w_r", random(d_model, d_state));
  b.w_delta = Parameter(name + ".w_delta", random(d_model, d_model));

  std::uniform_real_distribution<double> log_dt(std::log(0.001), std::log(0.1));
  Tensor bias({1, d_model});
  for (double& v : bias.data()) {
    const double dt = std::exp(log_dt(rng));
    v = dt + std::log(-std::expm1(-dt));  // softplus⁻¹(dt)
  }
  b.b_delta = Parameter(name + ".b_delta", std::move(bias));
  b.w_out = Parameter(name + ".w_out", random(d_model, d_model));
  b.d_skip = Parameter(name + ".d_skip", Tensor({1, d_model}, 1.0));
  b.norm_gain = Parameter(name + ".norm_gain", Tensor({1, d_model}, 1.0));
  return b;
}

namespace {

// d φ / d P divided by Δ²: (u·e^u − expm1(u)) / u² with u = Δ·P.
double gain_slope(double u) {
  if (std::abs(u) < 1e-3) return 0.5 + u * (1.0 / 3.0 + u * (1.0 / 8.0 + u / 30.0));
  return (u * std::exp(u) - std::expm1(u)) / (u * u);
}

}  // namespace

double zoh_input_gain(double p, double delta) {
  const double u = delta * p;
  if (std::abs(u) < kSmallArgument) return delta * (1.0 + 0.5 * u);
  return std::expm1(u) / p;
}

Discretized discretize(double p, double delta, double q) {
  return {std::exp(delta * p), zoh_input_gain(p, delta) * q};
}

DiscretizedParams discretize(const Tensor& p, const Tensor& q, const Tensor& delta) {
  const std::size_t d = p.rows(), s = p.cols(), steps = delta.rows();
  if (delta.cols() != d || q.cols() != s || q.rows() != steps) {
    throw DimensionError("discretize: P " + p.shape_string() + ", Q " + q.shape_string() +
                         ", delta " + delta.shape_string());
  }
  DiscretizedParams out{Tensor({steps, d * s}), Tensor({steps, d * s})};
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t n = 0; n < s; ++n) {
        const Discretized z = discretize(p(c, n), delta(t, c), q(t, n));
        out.p_bar(t, c * s + n) = z.p_bar;
        out.q_bar(t, c * s + n) = z.q_bar;
      }
  return out;
}

SelectiveParams generate_params(Tape& tape, SsmBlock& block, Var x) {
  if (x.cols() != block.d_model) {
    throw DimensionError("generate_params: input width " + std::to_string(x.cols()) +
                         " != d_model " + std::to_string(block.d_model));
  }
  SelectiveParams sp;
  sp.q = ad::matmul(x, tape.param(block.w_q));
  sp.r = ad::matmul(x, tape.param(block.w_r));
  sp.delta = ad::softplus(ad::add(ad::matmul(x, tape.param(block.w_delta)), tape.param(block.b_delta)));
  return sp;
}

ScanInputs scan_inputs(const SsmBlock& block, const Tensor& seq) {
  const std::size_t d = block.d_model;
  if (seq.cols() != d) throw DimensionError("scan_inputs: sequence width != d_model");
  Tensor normed(seq.shape());
  for (std::size_t i = 0; i < seq.rows(); ++i) {
    double ms = 0.0;
    for (double v : seq.row(i)) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + 1e-6);
    for (std::size_t c = 0; c < d; ++c) normed(i, c) = seq(i, c) * inv * block.norm_gain.value[c];
  }
  const Tensor xz = matmul(normed, block.w_in.value);
  ScanInputs in;
  in.x = Tensor({seq.rows(), d});
  in.z = Tensor({seq.rows(), d});
  for (std::size_t i = 0; i < seq.rows(); ++i)
    for (std::size_t c = 0; c < d; ++c) {
      in.x(i, c) = xz(i, c);
      in.z(i, c) = xz(i, d + c);
    }
  in.q = matmul(in.x, block.w_q.value);
  in.r = matmul(in.x, block.w_r.value);
  in.delta = matmul(in.x, block.w_delta.value);
  for (std::size_t i = 0; i < in.delta.rows(); ++i)
    for (std::size_t c = 0; c < d; ++c) in.delta(i, c) = softplus(in.delta(i, c) + block.b_delta.value[c]);
  return in;
}

bool ScanHooks::retains(std::size_t step) const {
  if (zero_retention_all) return false;
  return std::find(zero_retention_steps.begin(), zero_retention_steps.end(), step) ==
         zero_retention_steps.end();
}

ScanResult selective_scan_core(Var x, Var delta, Var q, Var r, Var a_log, std::size_t batch,
                               const ScanHooks& hooks, const Tensor* h0) {
  const Tensor& xv = x.value();
  const Tensor& dv = delta.value();
  const Tensor& qv = q.value();
  const Tensor& rv = r.value();
  const Tensor& av = a_log.value();
  const std::size_t d = av.rows(), s = av.cols(), rows = xv.rows();
  if (batch == 0 || rows % batch != 0) {
    throw DimensionError("selective_scan: " + std::to_string(rows) + " rows do not split into " +
                         std::to_string(batch) + " sequences");
  }
  if (xv.cols() != d || dv.rows() != rows || dv.cols() != d || qv.rows() != rows || qv.cols() != s ||
      rv.rows() != rows || rv.cols() != s) {
    throw DimensionError("selective_scan: x " + xv.shape_string() + ", delta " + dv.shape_string() +
                         ", q " + qv.shape_string() + ", r " + rv.shape_string() + ", a_log " +
                         av.shape_string());
  }
  const std::size_t steps = rows / batch, ds = d * s;
  if (h0 != nullptr && (h0->rows() != batch || h0->cols() != ds)) {
    throw DimensionError("selective_scan: initial state " + h0->shape_string() + ", expected [" +
                         std::to_string(batch) + "x" + std::to_string(ds) + "]");
  }

  std::vector<double> p(ds);
  for (std::size_t i = 0; i < ds; ++i) p[i] = -std::exp(av[i]);
  std::vector<char> keep(steps);
  for (std::size_t t = 0; t < steps; ++t) keep[t] = hooks.retains(t) ? 1 : 0;

  auto states = std::make_shared<Tensor>(std::vector<std::size_t>{rows, ds});
  Tensor y({rows, d});
  Tensor final_state({batch, ds});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* prev = h0 != nullptr ? h0->data().data() + b * ds : nullptr;
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t row = b * steps + t;
      const double* xr = xv.data().data() + row * d;
      const double* dr = dv.data().data() + row * d;
      const double* qr = qv.data().data() + row * s;
      const double* rr = rv.data().data() + row * s;
      double* h = states->data().data() + row * ds;
      double* yr = y.data().data() + row * d;
      for (std::size_t c = 0; c < d; ++c) {
        const double dc = dr[c], xc = xr[c];
        double acc = 0.0;
        for (std::size_t n = 0; n < s; ++n) {
          const std::size_t k = c * s + n;
          const double u = dc * p[k];
          const double pb = keep[t] ? std::exp(u) : 0.0;
          const double gain = std::abs(u) < kSmallArgument ? dc * (1.0 + 0.5 * u) : std::expm1(u) / p[k];
          const double hp = prev != nullptr ? prev[k] : 0.0;
          h[k] = pb * hp + gain * qr[n] * xc;
          acc += rr[n] * h[k];
        }
        yr[c] = acc;
      }
      prev = h;
    }
    if (prev != nullptr) std::copy(prev, prev + ds, final_state.data().data() + b * ds);
  }

  std::shared_ptr<const Tensor> init;
  if (h0 != nullptr) init = std::make_shared<const Tensor>(*h0);
  Var parents[] = {x, delta, q, r, a_log};
  Var out = x.tape->record(
      std::move(y), parents,
      [x, delta, q, r, a_log, batch, steps, d, s, states, init, keep = std::move(keep),
       p = std::move(p)](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x.id);
        const Tensor& dv = t.value(delta.id);
        const Tensor& qv = t.value(q.id);
        const Tensor& rv = t.value(r.id);
        const std::size_t ds = d * s, rows = batch * steps;
        Tensor gx({rows, d}), gd({rows, d}), gq({rows, s}), gr({rows, s});
        std::vector<double> gp(ds, 0.0), gh(ds);
        for (std::size_t b = 0; b < batch; ++b) {
          std::fill(gh.begin(), gh.end(), 0.0);
          for (std::size_t step = steps; step-- > 0;) {
            const std::size_t row = b * steps + step;
            const double* h = states->data().data() + row * ds;
            const double* hprev = step > 0 ? h - ds
                                  : init   ? init->data().data() + b * ds
                                           : nullptr;
            const double* xr = xv.data().data() + row * d;
            const double* dr = dv.data().data() + row * d;
            const double* qr = qv.data().data() + row * s;
            const double* rr = rv.data().data() + row * s;
            const double* gyr = gy.data().data() + row * d;
            double* gqr = gq.data().data() + row * s;
            double* grr = gr.data().data() + row * s;
            for (std::size_t c = 0; c < d; ++c) {
              const double dc = dr[c], xc = xr[c], gyc = gyr[c];
              double gx_acc = 0.0, gd_acc = 0.0;
              for (std::size_t n = 0; n < s; ++n) {
                const std::size_t k = c * s + n;
                const double pk = p[k];
                const double u = dc * pk;
                const double e = std::exp(u);
                const double pb = keep[step] ? e : 0.0;
                double gain, dgain_ddelta, dgain_dp;
                if (std::abs(u) < kSmallArgument) {
                  gain = dc * (1.0 + 0.5 * u);
                  dgain_ddelta = 1.0 + u;
                  dgain_dp = 0.5 * dc * dc;
                } else {
                  gain = std::expm1(u) / pk;
                  dgain_ddelta = e;
                  dgain_dp = dc * dc * gain_slope(u);
                }
                grr[n] += gyc * h[k];
                const double g = gh[k] + gyc * rr[n];
                const double hp = hprev != nullptr ? hprev[k] : 0.0;
                gx_acc += g * gain * qr[n];
                gqr[n] += g * gain * xc;
                const double g_gain = g * qr[n] * xc;
                gd_acc += g_gain * dgain_ddelta;
                gp[k] += g_gain * dgain_dp;
                if (keep[step]) {
                  const double g_pb = g * hp;
                  gd_acc += g_pb * pk * pb;
                  gp[k] += g_pb * dc * pb;
                }
                gh[k] = g * pb;
              }
              gx(row, c) += gx_acc;
              gd(row, c) += gd_acc;
            }
          }
        }
        auto accumulate = [&t](Var v, const Tensor& g) {
          if (!t.requires_grad(v)) return;
          Tensor& dst = t.grad_mut(v.id);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
        };
        accumulate(x, gx);
        accumulate(delta, gd);
        accumulate(q, gq);
        accumulate(r, gr);
        if (t.requires_grad(a_log)) {
          // dP/da_log = -exp(a_log) = P.
          Tensor& ga = t.grad_mut(a_log.id);
          for (std::size_t k = 0; k < ds; ++k) ga[k] += gp[k] * p[k];
        }
      });
  return {out, std::move(final_state)};
}

BlockOutput selective_scan(Tape& tape, SsmBlock& block, Var seq, const BlockOptions& options) {
  const std::size_t d = block.d_model;
  if (seq.cols() != d) {
    throw DimensionError("selective_scan: sequence width " + std::to_string(seq.cols()) +
                         " != d_model " + std::to_string(d));
  }
  const std::size_t rows = seq.rows();
  if (options.batch == 0 || rows % options.batch != 0) {
    throw DimensionError("selective_scan: " + std::to_string(rows) + " rows do not split into " +
                         std::to_string(options.batch) + " sequences");
  }
  const Var normed = ad::mul(ad::rms_norm(seq), tape.param(block.norm_gain));
  const Var xz = ad::matmul(normed, tape.param(block.w_in));
  const Var x = ad::slice_cols(xz, 0, d);
  Var z = ad::slice_cols(xz, d, 2 * d);
  const SelectiveParams sp = generate_params(tape, block, x);
  ScanResult scan = selective_scan_core(x, sp.delta, sp.q, sp.r, tape.param(block.a_log), options.batch,
                                        options.hooks, options.h0);
  Var y = ad::add(scan.y, ad::mul(x, tape.param(block.d_skip)));
  if (options.readout == Readout::kLastStep) {
    const std::size_t steps = rows / options.batch;
    std::vector<std::size_t> last(options.batch);
    for (std::size_t b = 0; b < options.batch; ++b) last[b] = b * steps + steps - 1;
    y = ad::select_rows(y, last);
    z = ad::select_rows(z, last);
  }
  const Var gated = ad::mul(y, ad::silu(z));
  return {ad::matmul(gated, tape.param(block.w_out)), std::move(scan.final_state)};
}

}  // namespace dmba
