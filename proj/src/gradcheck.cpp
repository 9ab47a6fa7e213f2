#include "dmba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dmba {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << ": " << checked << " coordinates, worst " << worst.param
     << "[" << worst.index << "] analytic=" << worst.analytic << " numeric=" << worst.numeric
     << " rel_err=" << worst.rel_error;
  return os.str();
}

GradCheckReport check_gradients(std::span<Parameter* const> params,
                                const std::function<Var(Tape&)>& loss_fn,
                                const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  if (options.after_backward) options.after_backward(params);

  auto evaluate = [&] {
    Tape tape;
    return loss_fn(tape).value().item();
  };

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  report.worst.rel_error = -1.0;
  for (Parameter* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.samples_per_param != 0 && options.samples_per_param < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double saved = p->value[idx];
      p->value[idx] = saved + options.step;
      const double up = evaluate();
      p->value[idx] = saved - options.step;
      const double down = evaluate();
      p->value[idx] = saved;

      GradCheckEntry e;
      e.param = p->name;
      e.index = idx;
      e.analytic = p->grad[idx];
      e.numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.floor});
      e.rel_error = std::abs(e.analytic - e.numeric) / denom;
      if (!(e.rel_error < options.tolerance)) report.passed = false;
      if (!(e.rel_error <= report.worst.rel_error)) report.worst = e;
      report.entries.push_back(e);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace dmba
