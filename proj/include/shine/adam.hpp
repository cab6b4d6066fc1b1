#pragma once

#include <cstddef>
#include <vector>

#include "shine/autodiff.hpp"
#include "shine/matrix.hpp"

namespace shine {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed set of parameters. Moments live
// here; gradients are read from each Parameter::grad at step() time.
class AdamState {
 public:
  AdamState(std::vector<Parameter*> params, AdamConfig cfg = {});

  // One update from the currently accumulated gradients, then t += 1.
  void step();

  void zero_grads();

  std::size_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& params() const { return params_; }
  const Matrix& m(std::size_t i) const { return m_[i]; }
  const Matrix& v(std::size_t i) const { return v_[i]; }

 private:
  AdamConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

}  // namespace shine
