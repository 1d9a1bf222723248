#ifndef OSAKD_TAPE_HPP
#define OSAKD_TAPE_HPP

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "osakd/tensor.hpp"

namespace osakd {

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Records forward operations in topological order; one reverse sweep
/// computes gradients for every node reachable from the loss.
class Tape {
public:
    using BackFn = std::function<void(Tape&)>;

    /// A leaf holds an input or parameter; no backward rule of its own.
    Var leaf(Tensor value) { return record(std::move(value), nullptr); }

    Var record(Tensor value, BackFn back) {
        nodes_.push_back(Node{std::move(value), std::move(back)});
        grads_.emplace_back();  // allocated lazily in backward(); forward-only tapes skip it
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor& value(Var v) const { return nodes_[check(v)].value; }
    const Tensor& grad(Var v) const { return grads_[check(v)]; }

    /// Mutable gradient accumulator; backward rules add into it.
    Tensor& grad_buf(Var v) { return grads_[check(v)]; }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var loss) {
        if (backward_done_)
            throw ContractError("backward called twice on one tape; re-record the graph");
        const Tensor& l = value(loss);
        if (l.numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_str(l.shape()));
        backward_done_ = true;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (grads_[i].numel() == 0) grads_[i] = Tensor(nodes_[i].value.shape());
        grads_[loss.id][0] = 1.0;
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(*this);
    }

private:
    struct Node {
        Tensor value;
        BackFn back;
    };

    std::size_t check(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw ContractError("invalid tape variable");
        return static_cast<std::size_t>(v.id);
    }

    std::deque<Node> nodes_;   // deque: references to values stay valid as nodes append
    std::deque<Tensor> grads_;
    bool backward_done_ = false;
};

} // namespace osakd

#endif
