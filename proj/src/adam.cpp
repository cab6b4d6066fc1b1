#include "shine/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace shine {

AdamState::AdamState(std::vector<Parameter*> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    if (!p) throw std::runtime_error("AdamState: null parameter");
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void AdamState::step() {
  t_ += 1;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    check_finite(p.grad, "adam: gradient of " + p.name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      double g = p.grad.data()[k];
      double& m = m_[i].data()[k];
      double& v = v_[i].data()[k];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      double mhat = m / bc1;
      double vhat = v / bc2;
      p.value.data()[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    check_finite(p.value, "adam: updated " + p.name);
  }
}

void AdamState::zero_grads() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace shine
