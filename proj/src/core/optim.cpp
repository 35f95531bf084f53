#include "core/optim.hpp"

#include <cmath>

#include "core/error.hpp"

namespace oseg {

Optimizer::Optimizer(ParamStore& store, OptimConfig cfg)
    : store_(&store), cfg_(cfg) {
    if (cfg_.lr <= 0.0) {
        throw_invalid("optimizer: learning rate must be positive");
    }
    if (cfg_.kind == OptKind::Adam &&
        (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 ||
         cfg_.beta2 >= 1.0 || cfg_.epsilon <= 0.0)) {
        throw_invalid("optimizer: bad Adam hyperparameters");
    }
    if (cfg_.kind == OptKind::Sgd &&
        (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0)) {
        throw_invalid("optimizer: momentum must be in [0,1)");
    }
}

void Optimizer::step() {
    ++t_;
    for (auto& [name, entry] : store_->entries()) {
        if (!entry.trainable) {
            continue;
        }
        auto& p = entry.tensor.data();
        const auto& g = entry.tensor.grad();
        for (double gv : g) {
            if (!std::isfinite(gv)) {
                throw_runtime("optimizer: non-finite gradient for '" + name +
                              "'");
            }
        }
        if (cfg_.kind == OptKind::Adam) {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) {
                m.assign(p.size(), 0.0);
                v.assign(p.size(), 0.0);
            }
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        } else {
            if (cfg_.momentum > 0.0) {
                auto& buf = m_[name];
                if (buf.empty()) {
                    buf.assign(p.size(), 0.0);
                }
                for (std::size_t i = 0; i < p.size(); ++i) {
                    buf[i] = cfg_.momentum * buf[i] + g[i];
                    p[i] -= cfg_.lr * buf[i];
                }
            } else {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    p[i] -= cfg_.lr * g[i];
                }
            }
        }
    }
}

} // namespace oseg
