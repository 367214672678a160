#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "disentune/core/error.hpp"

namespace disentune {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::size_t dtype_size(DType dt);
const char* dtype_name(DType dt);

// Process-wide default for newly created tensors. f32 is the training default;
// f64 is the verification mode used by finite-difference checks.
DType default_dtype();
void set_default_dtype(DType dt);

class ScopedDType {
public:
    explicit ScopedDType(DType dt) : saved_(default_dtype()) { set_default_dtype(dt); }
    ~ScopedDType() { set_default_dtype(saved_); }
    ScopedDType(const ScopedDType&) = delete;
    ScopedDType& operator=(const ScopedDType&) = delete;

private:
    DType saved_;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    Buffer data;
    bool requires_grad = false;
    std::optional<Buffer> grad;
    // Tape bookkeeping: index of the producing entry, valid only while the
    // producing tape's epoch is unchanged.
    std::int64_t producer = -1;
    std::uint64_t producer_epoch = 0;
};

}  // namespace detail

template <class T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

// Dense row-major tensor handle. Copies share storage; use clone() for a deep
// copy. A default-constructed Tensor is "undefined" (operator bool is false).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dt = default_dtype());
    static Tensor full(Shape shape, double value, DType dt = default_dtype());
    static Tensor from_values(Shape shape, std::span<const double> values, DType dt = default_dtype());
    static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dt = default_dtype());
    static Tensor scalar(double value, DType dt = default_dtype());

    explicit operator bool() const { return impl_ != nullptr; }

    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;
    DType dtype() const;

    bool requires_grad() const;
    // Leaf tensors only; marks the tensor as a trainable parameter.
    Tensor& set_requires_grad(bool flag);

    // Gradient accumulator; undefined tensor if none has been accumulated yet.
    Tensor grad() const;
    bool has_grad() const;
    void zero_grad();

    template <Scalar T>
    std::span<T> values();
    template <Scalar T>
    std::span<const T> values() const;

    double item() const;
    double at(std::int64_t flat_index) const;
    void set(std::int64_t flat_index, double value);
    std::vector<double> to_vector() const;

    // Deep copy without tape history or gradient.
    Tensor clone() const;
    // Same storage, no tape history; the result never requires grad.
    Tensor detach() const;
    Tensor to(DType dt) const;

    // Copies values from `src` (same shape) into this tensor in place. Intended
    // for optimizer updates and checkpoint loading, not for taped computation.
    void assign(const Tensor& src);

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    void require_defined() const;

    std::shared_ptr<detail::TensorImpl> impl_;
};

template <Scalar T>
std::span<T> Tensor::values() {
    require_defined();
    auto* vec = std::get_if<std::vector<T>>(&impl_->data);
    if (vec == nullptr) {
        throw ContractError("tensor dtype mismatch: stored " + std::string(dtype_name(impl_->dtype)));
    }
    return {vec->data(), vec->size()};
}

template <Scalar T>
std::span<const T> Tensor::values() const {
    require_defined();
    const auto* vec = std::get_if<std::vector<T>>(&impl_->data);
    if (vec == nullptr) {
        throw ContractError("tensor dtype mismatch: stored " + std::string(dtype_name(impl_->dtype)));
    }
    return {vec->data(), vec->size()};
}

// Calls fn.template operator()<T>() with T matching the dtype.
template <class F>
decltype(auto) dispatch(DType dt, F&& fn) {
    if (dt == DType::f32) {
        return fn.template operator()<float>();
    }
    return fn.template operator()<double>();
}

// 64-bit FNV-1a over dtype, shape and raw value bytes. Used for frozen-weight
// and determinism checks.
std::uint64_t checksum(const Tensor& t);

bool bit_equal(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace disentune
