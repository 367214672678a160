#include "disentune/core/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace disentune {

namespace {

std::atomic<DType> g_default_dtype{DType::f32};

detail::Buffer make_buffer(DType dt, std::size_t n) {
    if (dt == DType::f32) {
        return std::vector<float>(n, 0.0f);
    }
    return std::vector<double>(n, 0.0);
}

}  // namespace

std::size_t dtype_size(DType dt) { return dt == DType::f32 ? 4 : 8; }

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

DType default_dtype() { return g_default_dtype.load(); }

void set_default_dtype(DType dt) { g_default_dtype.store(dt); }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) {
            throw DimensionError("negative extent in shape " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(Shape shape, DType dt) {
    auto impl = std::make_shared<detail::TensorImpl>();
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    impl->shape = std::move(shape);
    impl->dtype = dt;
    impl->data = make_buffer(dt, n);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    dispatch(dt, [&]<class T>() {
        for (auto& v : t.values<T>()) {
            v = static_cast<T>(value);
        }
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dt) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    Tensor t = zeros(std::move(shape), dt);
    dispatch(dt, [&]<class T>() {
        auto out = t.values<T>();
        for (std::size_t i = 0; i < values.size(); ++i) {
            out[i] = static_cast<T>(values[i]);
        }
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dt) {
    return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dt);
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

void Tensor::require_defined() const {
    if (!impl_) {
        throw ContractError("operation on undefined tensor");
    }
}

const Shape& Tensor::shape() const {
    require_defined();
    return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    const int r = static_cast<int>(s.size());
    if (axis < 0) {
        axis += r;
    }
    if (axis < 0 || axis >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
    require_defined();
    return impl_->dtype;
}

bool Tensor::requires_grad() const {
    require_defined();
    return impl_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool flag) {
    require_defined();
    if (impl_->producer >= 0 && flag) {
        throw ContractError("requires_grad can only be set on leaf tensors");
    }
    impl_->requires_grad = flag;
    if (!flag) {
        impl_->grad.reset();
    }
    return *this;
}

Tensor Tensor::grad() const {
    require_defined();
    if (!impl_->grad) {
        return {};
    }
    auto g = std::make_shared<detail::TensorImpl>();
    g->shape = impl_->shape;
    g->dtype = impl_->dtype;
    g->data = *impl_->grad;
    return Tensor(std::move(g));
}

bool Tensor::has_grad() const {
    require_defined();
    return impl_->grad.has_value();
}

void Tensor::zero_grad() {
    require_defined();
    impl_->grad.reset();
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return at(0);
}

double Tensor::at(std::int64_t flat_index) const {
    if (flat_index < 0 || flat_index >= numel()) {
        throw RangeError("flat index " + std::to_string(flat_index) + " out of range");
    }
    return dispatch(dtype(), [&]<class T>() { return static_cast<double>(values<T>()[flat_index]); });
}

void Tensor::set(std::int64_t flat_index, double value) {
    if (flat_index < 0 || flat_index >= numel()) {
        throw RangeError("flat index " + std::to_string(flat_index) + " out of range");
    }
    dispatch(dtype(), [&]<class T>() { values<T>()[flat_index] = static_cast<T>(value); });
}

std::vector<double> Tensor::to_vector() const {
    return dispatch(dtype(), [&]<class T>() {
        auto v = values<T>();
        return std::vector<double>(v.begin(), v.end());
    });
}

Tensor Tensor::clone() const {
    require_defined();
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
    require_defined();
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dt) const {
    if (dt == dtype()) {
        return clone();
    }
    const auto v = to_vector();
    return from_values(shape(), v, dt);
}

void Tensor::assign(const Tensor& src) {
    require_defined();
    if (src.shape() != shape()) {
        throw DimensionError("assign: shape " + shape_str(src.shape()) + " into " + shape_str(shape()));
    }
    if (src.dtype() == dtype()) {
        impl_->data = src.impl_->data;
        return;
    }
    const auto v = src.to_vector();
    dispatch(dtype(), [&]<class T>() {
        auto out = values<T>();
        for (std::size_t i = 0; i < v.size(); ++i) {
            out[i] = static_cast<T>(v[i]);
        }
    });
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    const auto dt = static_cast<std::uint8_t>(t.dtype());
    mix(&dt, 1);
    for (auto d : t.shape()) {
        mix(&d, sizeof d);
    }
    dispatch(t.dtype(), [&]<class T>() {
        auto v = t.values<T>();
        mix(v.data(), v.size() * sizeof(T));
    });
    return h;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype() || a.shape() != b.shape()) {
        return false;
    }
    return dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vb = b.values<T>();
        return std::memcmp(va.data(), vb.data(), va.size() * sizeof(T)) == 0;
    });
}

bool all_finite(const Tensor& t) {
    return dispatch(t.dtype(), [&]<class T>() {
        for (auto v : t.values<T>()) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    });
}

}  // namespace disentune
