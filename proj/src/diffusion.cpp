#include "uspine/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uspine {

Image forward_diffuse(const Image& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_same_shape(x0, eps, "forward_diffuse");
    double ab = sched.at(t);
    double cs = std::sqrt(ab);
    double cn = std::sqrt(1.0 - ab);
    Image out(x0.shape());
    for (std::int64_t i = 0; i < x0.size(); ++i) out[i] = cs * x0[i] + cn * eps[i];
    return out;
}

Image predict_x0(const Image& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_hat, "predict_x0");
    if (t == 0) throw std::invalid_argument("predict_x0 at t=0 is meaningless; x_t already is x0");
    double ab = sched.at(t);
    double cn = std::sqrt(1.0 - ab);
    double inv = 1.0 / std::sqrt(ab);
    Image out(x_t.shape());
    for (std::int64_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - cn * eps_hat[i]) * inv;
    return out;
}

Image ddim_step(const Image& x_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_hat, "ddim_step");
    if (!(t > t_prev && t_prev >= 0 && t <= sched.T))
        throw std::invalid_argument("ddim_step needs T >= t > t_prev >= 0, got t=" + std::to_string(t) +
                                    " t_prev=" + std::to_string(t_prev));
    double ab_t = sched.at(t);
    double ab_p = sched.at(t_prev);
    double c_sig = std::sqrt(ab_p / ab_t);
    double c_eps = std::sqrt((1.0 - ab_t) * ab_p / ab_t) - std::sqrt(1.0 - ab_p);
    Image out(x_t.shape());
    for (std::int64_t i = 0; i < x_t.size(); ++i) out[i] = c_sig * x_t[i] - c_eps * eps_hat[i];
    return out;
}

}  // namespace uspine
