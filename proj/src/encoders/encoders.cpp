#include "disentune/encoders/encoders.hpp"

#include <cmath>

#include "disentune/core/ops.hpp"
#include "disentune/core/random.hpp"

namespace disentune::encoders {

TextEncoder::TextEncoder(int vocab_size, std::int64_t dim, std::int64_t length, std::uint64_t seed, DType dt)
    : dim_(dim), length_(length) {
    if (vocab_size < 1 || dim < 1 || length < 1) {
        throw ConfigError("TextEncoder: vocabulary, width and length must be >= 1");
    }
    Rng rng(seed);
    const auto hidden = 2 * dim;
    table_ = randn({vocab_size, dim}, rng, 1.0, dt);
    w_cur_ = randn({hidden, dim}, rng, std::sqrt(1.0 / static_cast<double>(dim)), dt);
    w_prev_ = randn({hidden, dim}, rng, std::sqrt(1.0 / static_cast<double>(dim)), dt);
    b1_ = randn({hidden}, rng, 0.1, dt);
    w2_ = randn({dim, hidden}, rng, std::sqrt(2.0 / static_cast<double>(hidden)), dt);
}

Tensor TextEncoder::encode(std::span<const int> ids) const {
    if (static_cast<std::int64_t>(ids.size()) != length_) {
        throw LengthError("TextEncoder: expected " + std::to_string(length_) + " token ids, got " +
                          std::to_string(ids.size()));
    }
    const auto vocab = table_.dim(0);
    NoGradGuard no_grad;
    Tensor cur = Tensor::zeros({length_, dim_}, table_.dtype());
    Tensor prev = Tensor::zeros({length_, dim_}, table_.dtype());
    dispatch(table_.dtype(), [&]<class T>() {
        auto tab = table_.values<T>();
        auto c = cur.values<T>();
        auto p = prev.values<T>();
        for (std::int64_t j = 0; j < length_; ++j) {
            const int id = ids[static_cast<std::size_t>(j)];
            if (id < 0 || id >= vocab) {
                throw VocabularyError("token id " + std::to_string(id) + " out of range");
            }
            for (std::int64_t k = 0; k < dim_; ++k) {
                c[j * dim_ + k] = tab[id * dim_ + k];
                if (j + 1 < length_) {
                    p[(j + 1) * dim_ + k] = tab[id * dim_ + k];
                }
            }
        }
    });
    const Tensor hidden =
        ops::relu(ops::add(ops::add(ops::matmul_nt(cur, w_cur_), ops::matmul_nt(prev, w_prev_)), b1_));
    const Tensor mixed = ops::add(cur, ops::matmul_nt(hidden, w2_));
    return ops::group_normalize(mixed, static_cast<int>(length_));
}

NamedTensors TextEncoder::weights() const {
    return {{"text.table", table_}, {"text.w_cur", w_cur_}, {"text.w_prev", w_prev_}, {"text.b1", b1_},
            {"text.w2", w2_}};
}

ImageEncoder::ImageEncoder(std::int64_t dim, std::int64_t height, std::int64_t width, std::uint64_t seed, DType dt)
    : dim_(dim), height_(height), width_(width) {
    if (dim < 1 || height < 8 || width < 8) {
        throw ConfigError("ImageEncoder: need dim >= 1 and images of at least 8x8");
    }
    Rng rng(seed);
    const std::int64_t chans[] = {3, 16, 32, dim};
    for (int s = 0; s < 3; ++s) {
        const auto cin = chans[s];
        const auto cout = chans[s + 1];
        conv_w_.push_back(randn({cout, cin, 3, 3}, rng, std::sqrt(2.0 / (9.0 * static_cast<double>(cin))), dt));
        conv_b_.push_back(randn({cout, 1, 1}, rng, 0.05, dt));
    }
}

Tensor ImageEncoder::encode(const Tensor& x) const {
    if (x.shape() != Shape{3, height_, width_}) {
        throw InputError("ImageEncoder: expected image of shape " + shape_str({3, height_, width_}) + ", got " +
                         shape_str(x.shape()));
    }
    for (double v : x.to_vector()) {
        if (!(v >= -1.0 - 1e-6 && v <= 1.0 + 1e-6)) {
            throw InputError("ImageEncoder: pixel value outside [-1, 1]");
        }
    }
    NoGradGuard no_grad;
    Tensor h = x.dtype() == conv_w_[0].dtype() ? x.detach() : x.to(conv_w_[0].dtype());
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        h = ops::relu(ops::add(ops::conv2d(h, conv_w_[s], 2), conv_b_[s]));
    }
    const Tensor pooled = ops::mean_axis(ops::reshape(h, {dim_, h.dim(1) * h.dim(2)}), 1);
    return ops::reshape(ops::group_normalize(pooled, 1), {dim_});
}

NamedTensors ImageEncoder::weights() const {
    NamedTensors out;
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        out.push_back({"image.conv" + std::to_string(s) + ".w", conv_w_[s]});
        out.push_back({"image.conv" + std::to_string(s) + ".b", conv_b_[s]});
    }
    return out;
}

}  // namespace disentune::encoders
