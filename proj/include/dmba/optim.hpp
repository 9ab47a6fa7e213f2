#pragma once

#include <span>
#include <vector>

#include "dmba/autodiff.hpp"

namespace dmba {

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Coupled L2 penalty: weight_decay * param is added to the gradient.
  double weight_decay = 5e-4;
};

// Adam with bias correction. The moment buffers are keyed by position in the
// parameter list, so step() must always receive the same list in the same
// order.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void step();
  void zero_grad();

  long steps_taken() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

}  // namespace dmba
