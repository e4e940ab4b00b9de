#pragma once

#include <vector>

#include "uspine/params.hpp"

namespace uspine {

/// Gradients aligned with a ParamStore's entry order.
using NamedGrads = std::vector<Tensor>;

NamedGrads zero_grads_like(const ParamStore& store);
void accumulate_grads(NamedGrads& into, const NamedGrads& from);
void scale_grads(NamedGrads& grads, double s);

/// Global L2 norm across all arrays.
double global_grad_norm(const NamedGrads& grads);

/// Rescales in place when the global norm exceeds max_norm; returns the
/// pre-clip norm. Non-finite gradients are rejected.
double clip_grad_norm(NamedGrads& grads, double max_norm);

/// ema' = decay * ema + (1 - decay) * current, elementwise by name.
void ema_update(ParamStore& ema, const ParamStore& current, double decay);

/// Adam with bias correction; moment buffers aligned with the store.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(ParamStore& params, const NamedGrads& grads);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace uspine
