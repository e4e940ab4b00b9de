#include "uspine/graph.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace uspine {

void Node::ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
}

void Node::accum_grad(const Tensor& g) {
    ensure_grad();
    for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backward = std::move(backward);
    for (const auto& p : n->parents)
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    return n;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->is_leaf = true;
    return n;
}

Var Tape::leaf(const Tensor& param, bool trainable) {
    auto it = leaves_.find(param.storage_key());
    if (it != leaves_.end()) return it->second;
    auto n = std::make_shared<Node>();
    n->value = param;  // shares storage with the parameter
    n->is_leaf = true;
    n->requires_grad = trainable;
    leaves_.emplace(param.storage_key(), n);
    return n;
}

Var Tape::input(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->is_leaf = true;
    n->requires_grad = requires_grad;
    return n;
}

void Tape::backward(const Var& root) {
    if (root->value.size() != 1)
        throw std::invalid_argument("backward expects a scalar root, got " + shape_str(root->value.shape()));
    if (!root->requires_grad) return;

    // Iterative post-order DFS for the topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

const Tensor* Tape::grad_of(const Tensor& param) const {
    auto it = leaves_.find(param.storage_key());
    if (it == leaves_.end()) return nullptr;
    if (it->second->grad.empty()) return nullptr;
    return &it->second->grad;
}

}  // namespace uspine
