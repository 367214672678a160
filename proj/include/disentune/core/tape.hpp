#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "disentune/core/tensor.hpp"

namespace disentune {

// Adjoint callback. `grad_out` is the gradient of the entry's output; each
// defined element of `grad_in` is an accumulator for the matching input and
// must be added into (never overwritten).
using Adjoint = std::function<void(const Tensor& grad_out, std::span<Tensor> grad_in)>;

// Ordered record of differentiable operations executed on the current thread.
// Entries are appended in execution order, so an entry's inputs always precede
// it. backward() replays adjoints in reverse without consuming the record.
class Tape {
public:
    struct Entry {
        std::string op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        Adjoint adjoint;
    };

    // Drops every entry; tensors produced earlier become constants.
    void clear();

    std::size_t size() const { return entries_.size(); }
    std::uint64_t epoch() const { return epoch_; }
    const Entry& entry(std::size_t i) const { return entries_.at(i); }

    void record(const std::string& op, std::span<const Tensor> inputs, const Tensor& output, Adjoint adjoint);

    bool needs_grad(const detail::TensorImpl& impl) const;

    void backward(const Tensor& loss);

private:
    std::vector<Entry> entries_;
    std::uint64_t epoch_ = 1;
};

// The tape for the calling thread.
Tape& current_tape();

bool grad_enabled();

// Disables recording on this thread for the guard's lifetime (sampling,
// evaluation, optimizer updates).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// Populates .grad of every requires_grad tensor reachable from `loss`.
// Repeated calls accumulate.
void backward(const Tensor& loss);

}  // namespace disentune
