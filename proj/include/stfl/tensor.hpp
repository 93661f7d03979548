#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "stfl/common.hpp"

namespace stfl::nn {

template <class T>
class TapeT;

// Dense tensor handle. Data is shared, never mutated after an op returns;
// `node` indexes the recording tape when the tensor participates in autodiff.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;
    TapeT<T>* tape = nullptr;
    int node = -1;
    bool requires_grad = false;

    TensorT() = default;

    static TensorT constant(std::vector<int> shape, std::vector<T> values) {
        TensorT t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        if (t.data->size() != static_cast<std::size_t>(t.numel()))
            throw ShapeError("Tensor: data length does not match shape");
        return t;
    }

    static TensorT full(std::vector<int> shape, T value) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        TensorT t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(n, value);
        return t;
    }

    int numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return static_cast<int>(n);
    }

    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    const T* ptr() const { return data->data(); }

    T item() const {
        if (numel() != 1) throw ShapeError("Tensor::item: tensor is not scalar");
        return (*data)[0];
    }

    bool on_tape() const { return tape != nullptr && node >= 0; }

    // Same values, no tape membership. Used where gradients must not flow,
    // e.g. discriminator updates on generator outputs.
    TensorT detached() const {
        TensorT t;
        t.shape = shape;
        t.data = data;
        return t;
    }
};

// Reverse-mode tape. Nodes are appended in execution order (so they are
// already topologically sorted); backward walks them once in reverse.
template <class T>
class TapeT {
public:
    using BackwardFn = std::function<void(TapeT<T>&, int /*self node*/)>;

    TensorT<T> leaf(std::vector<int> shape, std::vector<T> values, bool requires_grad) {
        TensorT<T> t = TensorT<T>::constant(std::move(shape), std::move(values));
        t.tape = this;
        t.requires_grad = requires_grad;
        t.node = add_node(t.numel(), nullptr);
        return t;
    }

    int add_node(int numel, BackwardFn fn) {
        nodes_.push_back(Node{std::move(fn), numel});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Gradient buffer for a node, allocated (zeroed) on first touch.
    std::vector<T>& grad_buffer(int node) {
        auto& g = grads_[static_cast<std::size_t>(node)];
        if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[node].numel), T(0));
        return g;
    }

    bool touched(int node) const { return !grads_[static_cast<std::size_t>(node)].empty(); }

    void backward(const TensorT<T>& loss) {
        if (loss.tape != this) throw ProtocolError("Tape::backward: loss recorded on another tape");
        if (loss.numel() != 1) throw ShapeError("Tape::backward: loss must be scalar");
        if (ran_backward_) throw ProtocolError("Tape::backward: tape already consumed");
        ran_backward_ = true;
        grad_buffer(loss.node)[0] = T(1);
        for (int i = loss.node; i >= 0; --i) {
            if (!touched(i)) continue;  // not on any path to the loss
            if (nodes_[static_cast<std::size_t>(i)].backward)
                nodes_[static_cast<std::size_t>(i)].backward(*this, i);
        }
    }

    // Gradient of the loss w.r.t. a tensor on this tape; zero if the tensor
    // did not participate.
    std::vector<T> grad_of(const TensorT<T>& t) const {
        if (t.tape != this || t.node < 0)
            throw ProtocolError("Tape::grad_of: tensor not on this tape");
        const auto& g = grads_[static_cast<std::size_t>(t.node)];
        if (g.empty()) return std::vector<T>(static_cast<std::size_t>(t.numel()), T(0));
        return g;
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        BackwardFn backward;
        int numel;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    bool ran_backward_ = false;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace stfl::nn
