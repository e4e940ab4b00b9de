#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "uspine/tensor.hpp"

namespace uspine {

/// Reverse-mode autodiff over Tensor values. Each forward pass builds a
/// fresh graph of Nodes; parameters enter as leaves created through a Tape,
/// which memoizes them so a parameter used twice accumulates one gradient.
/// Graphs are single-threaded; concurrency happens across graphs.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation during backward
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<Var> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward;

    void accum_grad(const Tensor& g);
    void ensure_grad();
};

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);
Var constant(Tensor value);

class Tape {
public:
    /// Leaf for a parameter tensor (memoized by storage identity).
    Var leaf(const Tensor& param, bool trainable);
    /// Non-parameter input.
    Var input(Tensor value, bool requires_grad = false);

    /// Backpropagate from a scalar root. Gradients land on leaves and
    /// interior nodes that required them.
    void backward(const Var& root);

    /// Gradient accumulated for a parameter on this tape; nullptr when the
    /// parameter was never used or required no gradient.
    const Tensor* grad_of(const Tensor& param) const;

private:
    std::unordered_map<const double*, Var> leaves_;
};

}  // namespace uspine
