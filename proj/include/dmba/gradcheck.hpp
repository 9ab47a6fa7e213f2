#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmba/autodiff.hpp"

namespace dmba {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double floor = 1e-6;
  // Coordinates checked per Parameter; 0 checks all of them.
  std::size_t samples_per_param = 0;
  std::uint64_t seed = 0;
  // Runs between backward and the comparison. Test fixtures use it to
  // corrupt gradients on purpose.
  std::function<void(std::span<Parameter* const>)> after_backward;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t checked = 0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;

  std::string summary() const;
};

// Compares tape gradients of `loss_fn` against central finite differences.
// `loss_fn` must build a fresh scalar loss on the tape it is handed and be a
// pure function of the parameter values.
GradCheckReport check_gradients(std::span<Parameter* const> params,
                                 const std::function<Var(Tape&)>& loss_fn,
                                 const GradCheckOptions& options = {});

}  // namespace dmba
