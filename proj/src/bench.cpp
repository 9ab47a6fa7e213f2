#include "dmba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "dmba/errors.hpp"

namespace dmba {

Tensor dense_attention(const Tensor& f) {
  const std::size_t n = f.rows();
  Tensor scores = matmul_transposed_b(f, f);
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, f.cols())));
  for (std::size_t i = 0; i < n; ++i) {
    auto row = scores.row(i);
    double mx = -INFINITY;
    for (double& v : row) mx = std::max(mx, v *= scale);
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v - mx));
    for (double& v : row) v /= z;
  }
  return matmul(scores, f);
}

namespace {

template <class Fn>
double median_ms(Fn&& fn, const BenchOptions& o) {
  std::vector<double> times;
  double total = 0.0;
  while (static_cast<int>(times.size()) < o.min_repeats || total < o.min_total_ms) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    times.push_back(ms);
    total += ms;
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  return times[times.size() / 2];
}

}  // namespace

std::vector<BenchRow> run_bench(std::span<const std::size_t> sizes, const BenchOptions& o) {
  for (std::size_t n : sizes)
    if (n == 0) throw ValidationError("bench sizes must be positive");
  GcambaLayer layer = make_gcamba(o.in_features, o.d_model, o.d_state, 0.5, o.seed);
  std::mt19937_64 rng(o.seed ^ 0xbe7cULL);
  std::normal_distribution<double> normal;

  std::vector<BenchRow> rows;
  for (std::size_t n : sizes) {
    Tensor x({n, o.in_features});
    for (double& v : x.data()) v = normal(rng);
    BenchRow row;
    row.n_nodes = n;
    row.gcamba_ms = median_ms(
        [&] {
          Tape tape;
          gcamba_forward(tape, layer, x);
          row.peak_mem_estimate = tape.value_bytes();
        },
        o);
    const Tensor f = matmul(x, layer.input_proj.value);
    // score matrix plus the projected input and output
    row.dense_peak_mem_estimate = (n * n + 2 * n * o.d_model) * sizeof(double);
    if (n * n * sizeof(double) <= o.dense_memory_guard) {
      volatile double sink = 0.0;
      row.dense_attention_ms = median_ms([&] { sink = sink + dense_attention(f)[0]; }, o);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dmba
