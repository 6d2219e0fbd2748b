#include "tamms/core/tape.hpp"

#include "tamms/core/errors.hpp"

namespace tamms {

Tape::Node& Tape::node(Var v) {
    if (v.id >= nodes_.size()) throw IndexError("invalid tape variable");
    return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
    if (v.id >= nodes_.size()) throw IndexError("invalid tape variable");
    return nodes_[v.id];
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "variable";
    n.requires_grad = mode_ == Mode::kRecord;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(ParamStore& store, const std::string& name) {
    const ParamEntry& e = store.entry(name);
    Node n;
    n.value = e.value;
    n.op = "parameter";
    n.requires_grad = mode_ == Mode::kRecord && store.is_trainable(e.partition);
    if (n.requires_grad) {
        n.store = &store;
        n.param_name = name;
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

bool Tape::has_grad(Var v) const { return node(v).grad_allocated; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_allocated) throw StateError("no gradient recorded for tape variable");
    return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.grad_allocated) {
        n.grad = Tensor(n.value.shape());
        n.grad_allocated = true;
    }
    return n.grad;
}

template <typename Inputs>
Var Tape::record_impl(std::string_view op, Tensor out, const Inputs& inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(out);
    n.op = op;
    if (mode_ == Mode::kRecord) {
        for (Var in : inputs) {
            if (node(in).requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor out, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record_impl(op, std::move(out), inputs, std::move(backward));
}

Var Tape::record(std::string_view op, Tensor out, const std::vector<Var>& inputs, BackwardFn backward) {
    return record_impl(op, std::move(out), inputs, std::move(backward));
}

void Tape::backward(Var out) {
    if (node(out).value.numel() != 1) {
        throw DimensionError("backward seed requires a single-element output, got shape " +
                             shape_to_string(node(out).value.shape()));
    }
    backward(out, Tensor(node(out).value.shape(), 1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
    if (mode_ != Mode::kRecord) throw StateError("backward on an inference tape");
    if (replayed_) throw StateError("tape already replayed");
    replayed_ = true;
    require_same_shape(node(out).value, seed, "backward seed");
    if (!node(out).requires_grad) return;
    grad_buffer(out) += seed;

    for (std::size_t i = out.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.grad_allocated || !n.backward) continue;
        n.backward(*this, n.grad);
        n.backward = nullptr;  // releases captured state; each record runs once
    }
    for (Node& n : nodes_) {
        if (n.store != nullptr && n.grad_allocated) n.store->entry(n.param_name).grad += n.grad;
    }
}

std::string_view Tape::op_name(Var v) const { return node(v).op; }

}  // namespace tamms
