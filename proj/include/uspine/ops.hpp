#pragma once

#include "uspine/graph.hpp"
#include "uspine/image.hpp"

namespace uspine {
namespace ops {

// Elementwise (same shape).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);

/// x: (C,H,W), bias: (C); adds bias[c] to every spatial location.
Var add_channel_bias(Var x, Var bias);

/// x: (Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout). Zero padding.
Var conv2d(Var x, Var w, Var b, int stride, int pad);

/// x: (C,H,W); gamma, beta: (C). Population statistics per group.
Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);

Var silu(Var x);
Var gelu(Var x);

Var upsample_nearest2x(Var x);
Var concat_channels(Var a, Var b);

/// x: (in), w: (out,in), b: (out).
Var linear(Var x, Var w, Var b);

/// a: (m,k), b: (k,n) -> (m,n).
Var matmul(Var a, Var b);
Var transpose2d(Var a);
Var softmax_rows(Var a);
Var reshape(Var x, std::vector<int> shape);

/// Scalar mean over elements of (a-b)^2.
Var mse(Var a, Var b);

/// Mean over pixels of -log softmax(logits)[label]; logits: (K,H,W).
Var cross_entropy_mean(Var logits, const SegMask& labels);

}  // namespace ops
}  // namespace uspine
