#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/params.hpp"

namespace oseg {

enum class OptKind { Adam, Sgd };

struct OptimConfig {
    OptKind kind = OptKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.0; // SGD only
};

// Updates the trainable entries of a ParamStore in place from their
// accumulated gradients. State buffers are keyed by parameter name.
class Optimizer {
  public:
    Optimizer(ParamStore& store, OptimConfig cfg);

    void step();
    void zero_grads() { store_->zero_grads(); }
    std::int64_t steps_taken() const { return t_; }

  private:
    ParamStore* store_;
    OptimConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

} // namespace oseg
