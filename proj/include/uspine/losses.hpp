#pragma once

#include "uspine/diffusion.hpp"
#include "uspine/graph.hpp"
#include "uspine/image.hpp"
#include "uspine/schedule.hpp"

namespace uspine {

/// Stage-I objective: mean squared noise error plus mean squared
/// reconstruction error of the implied x0 estimate. Both terms are
/// pixel-mean reduced and weighted 1:1.
double stage1_loss(const Image& x0, const Tensor& eps, const Tensor& eps_hat, int t,
                   const NoiseSchedule& sched);

/// Graph form used by the trainer: eps_hat is a graph value, x0/eps/x_t are
/// data. Returns the scalar loss node.
Var stage1_loss_graph(Var eps_hat, const Image& x0, const Tensor& eps, const Image& x_t, int t,
                      const NoiseSchedule& sched);

/// Stage-II objective: mean pixel-wise cross entropy of 4-class logits.
double stage2_loss(const Tensor& logits, const SegMask& y);

}  // namespace uspine
