#include "disentune/core/tape.hpp"

#include <unordered_map>

namespace disentune {

namespace {

thread_local Tape t_tape;
thread_local bool t_grad_enabled = true;

detail::Buffer zero_like(const detail::TensorImpl& impl) {
    if (impl.dtype == DType::f32) {
        return std::vector<float>(std::get<std::vector<float>>(impl.data).size(), 0.0f);
    }
    return std::vector<double>(std::get<std::vector<double>>(impl.data).size(), 0.0);
}

void accumulate(detail::Buffer& into, const detail::Buffer& from) {
    std::visit(
        [&]<class V>(V& dst) {
            const auto& src = std::get<V>(from);
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += src[i];
            }
        },
        into);
}

}  // namespace

Tape& current_tape() { return t_tape; }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

void Tape::clear() {
    entries_.clear();
    ++epoch_;
}

bool Tape::needs_grad(const detail::TensorImpl& impl) const {
    return impl.requires_grad || (impl.producer >= 0 && impl.producer_epoch == epoch_);
}

void Tape::record(const std::string& op, std::span<const Tensor> inputs, const Tensor& output, Adjoint adjoint) {
    Entry e;
    e.op = op;
    e.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        e.inputs.push_back(in.impl_ptr());
    }
    e.output = output.impl_ptr();
    e.adjoint = std::move(adjoint);
    output.impl()->producer = static_cast<std::int64_t>(entries_.size());
    output.impl()->producer_epoch = epoch_;
    entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
    if (!loss) {
        throw ContractError("backward on undefined tensor");
    }
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    auto* root = loss.impl();
    const bool taped = root->producer >= 0 && root->producer_epoch == epoch_;
    if (!taped && !root->requires_grad) {
        throw ContractError("backward: loss was not produced by taped operations");
    }

    NoGradGuard no_grad;
    std::unordered_map<const detail::TensorImpl*, detail::Buffer> grads;
    {
        auto seed = zero_like(*root);
        std::visit([](auto& v) { v[0] = 1; }, seed);
        grads.emplace(root, std::move(seed));
    }

    if (taped) {
        for (std::int64_t i = root->producer; i >= 0; --i) {
            auto& entry = entries_[static_cast<std::size_t>(i)];
            auto it = grads.find(entry.output.get());
            if (it == grads.end()) {
                continue;
            }
            auto gout_impl = std::make_shared<detail::TensorImpl>();
            gout_impl->shape = entry.output->shape;
            gout_impl->dtype = entry.output->dtype;
            gout_impl->data = std::move(it->second);
            // Leaves keep their slot until the end; intermediates are dropped.
            if (entry.output->requires_grad) {
                it->second = gout_impl->data;
            } else {
                grads.erase(it);
            }
            const Tensor gout = Tensor::wrap(gout_impl);

            std::vector<Tensor> gin(entry.inputs.size());
            std::vector<std::shared_ptr<detail::TensorImpl>> holders(entry.inputs.size());
            for (std::size_t k = 0; k < entry.inputs.size(); ++k) {
                const auto& in = entry.inputs[k];
                if (!needs_grad(*in)) {
                    continue;
                }
                auto h = std::make_shared<detail::TensorImpl>();
                h->shape = in->shape;
                h->dtype = in->dtype;
                h->data = zero_like(*in);
                holders[k] = h;
                gin[k] = Tensor::wrap(h);
            }
            entry.adjoint(gout, gin);
            for (std::size_t k = 0; k < entry.inputs.size(); ++k) {
                if (!holders[k]) {
                    continue;
                }
                const auto* key = entry.inputs[k].get();
                auto slot = grads.find(key);
                if (slot == grads.end()) {
                    grads.emplace(key, std::move(holders[k]->data));
                } else {
                    accumulate(slot->second, holders[k]->data);
                }
            }
        }
    }

    // Deposit into leaves in tape order so accumulation is reproducible.
    auto deposit = [&](detail::TensorImpl* leaf) {
        auto it = grads.find(leaf);
        if (it == grads.end() || !leaf->requires_grad) {
            return;
        }
        if (leaf->grad) {
            accumulate(*leaf->grad, it->second);
        } else {
            leaf->grad = std::move(it->second);
        }
        grads.erase(it);
    };
    if (taped) {
        for (std::int64_t i = 0; i <= root->producer; ++i) {
            for (const auto& in : entries_[static_cast<std::size_t>(i)].inputs) {
                deposit(in.get());
            }
        }
    }
    deposit(root);
}

void backward(const Tensor& loss) { current_tape().backward(loss); }

}  // namespace disentune
