#include "disentune/core/optim.hpp"

#include <cmath>

namespace disentune {

AdamW::AdamW(NamedTensors params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
        v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) {
        p.tensor.zero_grad();
    }
}

double AdamW::grad_norm() const {
    double acc = 0.0;
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        for (double g : p.tensor.grad().to_vector()) {
            acc += g * g;
        }
    }
    return std::sqrt(acc);
}

void AdamW::step() {
    for (const auto& p : params_) {
        if (p.tensor.has_grad() && !all_finite(p.tensor.grad())) {
            throw NumericError("non-finite gradient for parameter '" + p.name + "'");
        }
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& param = params_[i].tensor;
        if (!param.has_grad()) {
            continue;
        }
        const Tensor grad = param.grad();
        dispatch(param.dtype(), [&]<class T>() {
            auto w = param.values<T>();
            auto g = grad.values<T>();
            auto m = m_[i].values<T>();
            auto v = v_[i].values<T>();
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = static_cast<double>(g[k]);
                const double mk = config_.beta1 * static_cast<double>(m[k]) + (1.0 - config_.beta1) * gk;
                const double vk = config_.beta2 * static_cast<double>(v[k]) + (1.0 - config_.beta2) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                const double update = (mk / bc1) / (std::sqrt(vk / bc2) + config_.eps);
                double wk = static_cast<double>(w[k]);
                wk -= config_.lr * (update + config_.weight_decay * wk);
                w[k] = static_cast<T>(wk);
            }
        });
    }
    zero_grad();
}

NamedTensors AdamW::state() const {
    NamedTensors out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.push_back({"adam.m." + params_[i].name, m_[i].clone()});
        out.push_back({"adam.v." + params_[i].name, v_[i].clone()});
    }
    out.push_back({"adam.step", Tensor::scalar(static_cast<double>(steps_), DType::f64)});
    return out;
}

void AdamW::load_state(const NamedTensors& state) {
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& e : state) {
            if (e.name == name) {
                return e.tensor;
            }
        }
        throw FormatError("optimizer state missing '" + name + "'");
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(find("adam.m." + params_[i].name));
        v_[i].assign(find("adam.v." + params_[i].name));
    }
    steps_ = static_cast<std::int64_t>(find("adam.step").item());
}

}  // namespace disentune
