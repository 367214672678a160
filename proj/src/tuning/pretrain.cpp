#include "disentune/tuning/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "disentune/core/ops.hpp"
#include "disentune/synthbench/dataset.hpp"

namespace disentune::tuning {

void pretrain_base(diffusion::Denoiser& model, const Encoders& encoders, const diffusion::NoiseSchedule& schedule,
                   const PretrainOptions& options) {
    if (!model.lora_registry().empty() && model.lora_registry().begin()->second->lora()) {
        throw ContractError("pretrain_base: model already carries LoRA factors");
    }
    const auto& cfg = model.config();
    const DType dt = model.parameters().front().tensor.dtype();
    model.set_trainable(true);
    AdamW optim(model.parameters(), AdamWConfig{options.lr, 0.9, 0.999, 1e-8, 0.0});
    std::vector<Tensor> ema;
    for (const auto& p : model.parameters()) ema.push_back(p.tensor.clone());

    const Tensor null_cond = Tensor::zeros({cfg.cond_len, cfg.cond_dim}, dt);
    double running = 0.0;
    for (int step = 0; step < options.steps; ++step) {
        Rng rng(derive_seed(options.seed, 0x9e7, static_cast<std::uint64_t>(step)));
        const auto f = synthbench::random_factors(rng);
        const Tensor x = synthbench::render(f.subject, f.scene, static_cast<int>(cfg.height), dt);
        Tensor cond;
        if (rng.uniform() < options.null_prob) {
            cond = null_cond;
        } else {
            unsigned keep = 0;
            for (unsigned bit = 0; bit < 4; ++bit) {
                if (rng.uniform() >= options.drop_prob) keep |= 1u << bit;
            }
            NoGradGuard guard;
            cond = encoders.encode_prompt(synthbench::describe(f.subject, f.scene, keep)).to(dt);
        }
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
        const Tensor eps = randn(x.shape(), rng, 1.0, dt);
        const Tensor z_t = diffusion::forward_noise(x, t, eps, schedule);

        const double warm = std::min(1.0, (step + 1) / std::max(1.0, options.warmup));
        const double decay = 0.5 * (1.0 + std::cos(M_PI * step / options.steps));
        optim.config().lr = options.lr * warm * (0.1 + 0.9 * decay);

        const Tensor loss = ops::mse(eps, model.predict_noise(z_t, t, cond));
        backward(loss);
        current_tape().clear();
        optim.step();

        const double beta = std::min(options.ema_decay, (1.0 + step) / (10.0 + step));
        for (std::size_t i = 0; i < ema.size(); ++i) {
            const Tensor& w = model.parameters()[i].tensor;
            dispatch(dt, [&]<class T>() {
                auto e = ema[i].values<T>();
                auto v = w.values<T>();
                for (std::size_t k = 0; k < e.size(); ++k) {
                    e[k] = static_cast<T>(beta * e[k] + (1.0 - beta) * v[k]);
                }
            });
        }
        running = step == 0 ? loss.item() : 0.99 * running + 0.01 * loss.item();
        if (options.progress && options.progress_every > 0 && (step + 1) % options.progress_every == 0) {
            options.progress(step + 1, running);
        }
    }
    for (std::size_t i = 0; i < ema.size(); ++i) {
        Tensor w = model.parameters()[i].tensor;
        w.assign(ema[i]);
    }
    model.set_trainable(false);
}

io::Checkpoint base_checkpoint(const diffusion::Denoiser& model, std::uint64_t digest) {
    io::Checkpoint ckpt;
    ckpt.config_digest = digest;
    for (const auto& p : model.parameters()) ckpt.entries.push_back({p.name, p.tensor.clone()});
    return ckpt;
}

void load_base(diffusion::Denoiser& model, const io::Checkpoint& ckpt) { io::restore_into(ckpt, model.parameters()); }

}  // namespace disentune::tuning
