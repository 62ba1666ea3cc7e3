#include "lsc/optimizer.hpp"

#include <cmath>

#include "lsc/common.hpp"

namespace lsc::opt {

Sgd::Sgd(std::vector<ad::Param*> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(std::move(cfg)) {
  velocity_.reserve(params_.size());
  for (const ad::Param* p : params_) velocity_.emplace_back(p->value.shape);
}

double Sgd::learning_rate() const {
  double lr = cfg_.learning_rate;
  for (const auto& [epoch, divisor] : cfg_.schedule)
    if (epoch_ >= epoch) lr /= divisor;
  return lr;
}

void Sgd::step() {
  for (const ad::Param* p : params_) {
    if (!p->trainable) continue;
    for (float g : p->grad.data)
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + p->name + "'; step aborted");
  }
  const float lr = float(learning_rate());
  const float mom = float(cfg_.momentum);
  const float wd = float(cfg_.weight_decay);
  for (size_t i = 0; i < params_.size(); ++i) {
    ad::Param* p = params_[i];
    if (!p->trainable) continue;
    float* v = velocity_[i].data.data();
    float* val = p->value.data.data();
    const float* g = p->grad.data.data();
    for (size_t j = 0; j < p->value.data.size(); ++j) {
      v[j] = mom * v[j] + g[j] + wd * val[j];
      val[j] -= lr * v[j];
    }
  }
  zero_grad();
}

void Sgd::zero_grad() {
  for (ad::Param* p : params_) p->zero_grad();
}

}  // namespace lsc::opt
