#include "uspine/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace uspine {

NamedGrads zero_grads_like(const ParamStore& store) {
    NamedGrads g;
    g.reserve(store.count());
    for (const auto& e : store.entries()) g.push_back(Tensor::zeros(e.tensor.shape()));
    return g;
}

void accumulate_grads(NamedGrads& into, const NamedGrads& from) {
    if (into.size() != from.size()) throw std::invalid_argument("gradient list size mismatch");
    for (size_t i = 0; i < into.size(); ++i)
        for (std::int64_t k = 0; k < into[i].size(); ++k) into[i][k] += from[i][k];
}

void scale_grads(NamedGrads& grads, double s) {
    for (auto& g : grads)
        for (std::int64_t k = 0; k < g.size(); ++k) g[k] *= s;
}

double global_grad_norm(const NamedGrads& grads) {
    double acc = 0.0;
    for (const auto& g : grads)
        for (std::int64_t k = 0; k < g.size(); ++k) acc += g[k] * g[k];
    return std::sqrt(acc);
}

double clip_grad_norm(NamedGrads& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("max_norm must be positive");
    for (const auto& g : grads)
        if (!g.all_finite()) throw std::runtime_error("non-finite gradient encountered");
    double norm = global_grad_norm(grads);
    if (norm > max_norm) scale_grads(grads, max_norm / norm);
    return norm;
}

void ema_update(ParamStore& ema, const ParamStore& current, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("ema decay must lie in [0,1)");
    if (ema.count() != current.count()) throw std::invalid_argument("ema/current parameter count mismatch");
    for (size_t i = 0; i < ema.count(); ++i) {
        auto& e = ema.entries()[i];
        const auto& c = current.entries()[i];
        if (e.name != c.name)
            throw std::invalid_argument("ema/current name mismatch: " + e.name + " vs " + c.name);
        check_same_shape(e.tensor, c.tensor, "ema_update");
        for (std::int64_t k = 0; k < e.tensor.size(); ++k)
            e.tensor[k] = decay * e.tensor[k] + (1.0 - decay) * c.tensor[k];
    }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& params, const NamedGrads& grads) {
    if (grads.size() != params.count()) throw std::invalid_argument("Adam: gradient/parameter count mismatch");
    if (m_.empty()) {
        for (const auto& e : params.entries()) {
            m_.push_back(Tensor::zeros(e.tensor.shape()));
            v_.push_back(Tensor::zeros(e.tensor.shape()));
        }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.count(); ++i) {
        Tensor& p = params.entries()[i].tensor;
        const Tensor& g = grads[i];
        check_same_shape(p, g, "Adam::step");
        for (std::int64_t k = 0; k < p.size(); ++k) {
            m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
            v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
            double mhat = m_[i][k] / bc1;
            double vhat = v_[i][k] / bc2;
            p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace uspine
