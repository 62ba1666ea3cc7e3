#pragma once

#include <utility>
#include <vector>

#include "lsc/autodiff.hpp"

namespace lsc::opt {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  // (epoch, divisor): the rate is divided once the epoch counter reaches each
  // entry, so {{10,10},{20,10}} from 0.01 gives 0.001 during epoch 10 and
  // 0.0001 during epoch 20 (epochs counted from 0).
  std::vector<std::pair<int, double>> schedule;
};

// SGD with momentum and coupled weight decay:
//   v <- momentum*v + grad + weight_decay*value;  value <- value - lr*v
class Sgd {
 public:
  Sgd(std::vector<ad::Param*> params, SgdConfig cfg);

  void set_epoch(int epoch) { epoch_ = epoch; }
  double learning_rate() const;

  // Applies one update and zeroes gradients. A non-finite gradient aborts
  // before any parameter is touched.
  void step();
  void zero_grad();

 private:
  std::vector<ad::Param*> params_;
  std::vector<Tensor> velocity_;
  SgdConfig cfg_;
  int epoch_ = 0;
};

}  // namespace lsc::opt
