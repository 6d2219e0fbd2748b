#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <string_view>

#include "tamms/core/param_store.hpp"
#include "tamms/core/tensor.hpp"

namespace tamms {

// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
    std::size_t id = kInvalid;
    bool valid() const { return id != kInvalid; }
};

class Tape;

// Called once during backward with the gradient of the record's output.
using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

// Replayable record of forward operations. Every op appends one record holding
// its output value; records whose inputs need gradients also keep a backward
// kernel. backward() replays those kernels in reverse record order, each exactly
// once, then adds parameter gradients into the bound ParamStore.
//
// Values live in a deque so references returned by value() stay valid while
// more records are appended.
class Tape {
public:
    enum class Mode { kRecord, kInference };

    explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Leaf that receives a gradient but is not bound to a ParamStore.
    Var variable(Tensor value);
    // Leaf bound to store.entry(name); it requires a gradient iff its partition
    // is currently trainable. The store must outlive backward().
    Var parameter(ParamStore& store, const std::string& name);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    bool has_grad(Var v) const;
    const Tensor& grad(Var v) const;
    // Zero-initialized on first access; backward kernels accumulate into it.
    Tensor& grad_buffer(Var v);

    Var record(std::string_view op, Tensor out, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(std::string_view op, Tensor out, const std::vector<Var>& inputs, BackwardFn backward);

    // Seeds d(out)/d(out) = 1; `out` must hold exactly one element.
    void backward(Var out);
    void backward(Var out, const Tensor& seed);

    std::size_t size() const { return nodes_.size(); }
    Mode mode() const { return mode_; }
    std::string_view op_name(Var v) const;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_allocated = false;
        std::string_view op;
        BackwardFn backward;
        ParamStore* store = nullptr;
        std::string param_name;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    template <typename Inputs>
    Var record_impl(std::string_view op, Tensor out, const Inputs& inputs, BackwardFn backward);

    Mode mode_;
    bool replayed_ = false;
    std::deque<Node> nodes_;
};

}  // namespace tamms
