#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "mat/tensor.hpp"

namespace mat {

// Handle into a Tape. Plain index; valid only for the tape that issued it.
struct Var {
    int id = -1;
};

// Record of executed operations in forward order. Each non-leaf node carries
// a closure that scatters its output gradient to its inputs; replaying the
// closures in reverse yields gradients for every participating leaf.
// Single-writer: one tape per training step.
template <class S>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    Var leaf(Tensor<S> value) {
        nodes_.push_back(Node{std::move(value), {}, nullptr});
        return Var{int(nodes_.size()) - 1};
    }

    Var push(Tensor<S> value, std::function<void(Tape&)> back) {
        nodes_.push_back(Node{std::move(value), {}, recording_ ? std::move(back) : nullptr});
        return Var{int(nodes_.size()) - 1};
    }

    const Tensor<S>& val(Var v) const { return nodes_[v.id].value; }
    Tensor<S>& val(Var v) { return nodes_[v.id].value; }

    // Gradient buffer, allocated (zero) on first touch.
    Tensor<S>& grad(Var v) {
        Node& nd = nodes_[v.id];
        if (nd.grad.size() == 0)
            nd.grad = Tensor<S>::zeros(nd.value.n, nd.value.c, nd.value.h, nd.value.w);
        return nd.grad;
    }

    bool has_grad(Var v) const { return nodes_[v.id].grad.size() != 0; }

    // Seeds d(loss)/d(loss) = 1 for a scalar-shaped node and runs all
    // recorded adjoints in reverse execution order.
    void backward(Var loss) {
        if (!recording_) throw std::runtime_error("backward on a non-recording tape");
        if (val(loss).size() != 1) throw ShapeError("backward seed must be scalar-shaped");
        grad(loss).data[0] = S(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& nd = nodes_[i];
            if (nd.back && nd.grad.size() != 0) nd.back(*this);
        }
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
    bool recording_;
};

}  // namespace mat
