#include "uspine/losses.hpp"

#include <cmath>

#include "uspine/ops.hpp"

namespace uspine {

double stage1_loss(const Image& x0, const Tensor& eps, const Tensor& eps_hat, int t,
                   const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "stage1_loss");
    check_same_shape(eps, eps_hat, "stage1_loss");
    Image x_t = forward_diffuse(x0, t, eps, sched);
    Image x0_hat = predict_x0(x_t, eps_hat, t, sched);
    double noise_term = 0.0, recon_term = 0.0;
    const std::int64_t n = x0.size();
    for (std::int64_t i = 0; i < n; ++i) {
        double de = eps[i] - eps_hat[i];
        double dr = x0[i] - x0_hat[i];
        noise_term += de * de;
        recon_term += dr * dr;
    }
    return (noise_term + recon_term) / static_cast<double>(n);
}

Var stage1_loss_graph(Var eps_hat, const Image& x0, const Tensor& eps, const Image& x_t, int t,
                      const NoiseSchedule& sched) {
    double ab = sched.at(t);
    double cn = std::sqrt(1.0 - ab);
    double inv = 1.0 / std::sqrt(ab);
    Var noise_term = ops::mse(eps_hat, constant(eps));
    // x0_hat = (x_t - cn * eps_hat) / sqrt(ab)
    Var x0_hat = ops::scale(ops::sub(constant(x_t), ops::scale(eps_hat, cn)), inv);
    Var recon_term = ops::mse(x0_hat, constant(x0));
    return ops::add(noise_term, recon_term);
}

double stage2_loss(const Tensor& logits, const SegMask& y) {
    Tape tape;
    return ops::cross_entropy_mean(tape.input(logits), y)->value[0];
}

}  // namespace uspine
