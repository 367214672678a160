#include "disentune/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace disentune::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype()) {
        throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                             dtype_name(b.dtype()));
    }
}

void require_finite(const char* op, const Tensor& out) {
    if (!all_finite(out)) {
        throw NumericError(std::string(op) + ": non-finite value in output of shape " + shape_str(out.shape()));
    }
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) {
        return false;
    }
    const auto& tape = current_tape();
    for (const auto* t : inputs) {
        if (tape.needs_grad(*t->impl())) {
            return true;
        }
    }
    return false;
}

void record(const char* op, std::vector<Tensor> inputs, const Tensor& out, Adjoint adjoint) {
    current_tape().record(op, inputs, out, std::move(adjoint));
}

// ---- broadcasting -------------------------------------------------------

struct Broadcast {
    Shape out;
    std::vector<std::int64_t> stride_a;
    std::vector<std::int64_t> stride_b;
};

std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::int64_t> strides(r, 0);
    std::int64_t s = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t ii = in.size() - 1 - k;
        const std::size_t oi = r - 1 - k;
        strides[oi] = (in[ii] == 1 && out[oi] != 1) ? 0 : s;
        s *= in[ii];
    }
    return strides;
}

Broadcast broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t k = 0; k < r; ++k) {
        const std::int64_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
        const std::int64_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[r - 1 - k] = std::max(da, db);
    }
    return {out, aligned_strides(a, out), aligned_strides(b, out)};
}

// Calls fn(out_index, a_index, b_index) in row-major order of the output.
template <class F>
void for_each_broadcast(const Broadcast& bc, F&& fn) {
    const std::size_t r = bc.out.size();
    const std::int64_t n = shape_numel(bc.out);
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0;
    std::int64_t ib = 0;
    const std::int64_t inner = bc.out[r - 1];
    const std::int64_t sa = bc.stride_a[r - 1];
    const std::int64_t sb = bc.stride_b[r - 1];
    for (std::int64_t i = 0; i < n; i += inner) {
        for (std::int64_t j = 0; j < inner; ++j) {
            fn(i + j, ia + j * sa, ib + j * sb);
        }
        // advance the outer multi-index
        for (std::size_t k = r - 1; k-- > 0;) {
            ++idx[k];
            ia += bc.stride_a[k];
            ib += bc.stride_b[k];
            if (idx[k] < bc.out[k]) {
                break;
            }
            ia -= bc.stride_a[k] * idx[k];
            ib -= bc.stride_b[k] * idx[k];
            idx[k] = 0;
        }
    }
}

enum class BinOp { add, sub, mul };

Tensor binary(const char* name, BinOp kind, const Tensor& a, const Tensor& b) {
    require_same_dtype(name, a, b);
    const bool same = a.shape() == b.shape();
    const Broadcast bc = same ? Broadcast{a.shape(), {}, {}} : broadcast_shapes(name, a.shape(), b.shape());
    Tensor out = Tensor::zeros(bc.out, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vb = b.values<T>();
        auto vo = out.values<T>();
        auto apply = [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            switch (kind) {
                case BinOp::add: vo[o] = va[ia] + vb[ib]; break;
                case BinOp::sub: vo[o] = va[ia] - vb[ib]; break;
                case BinOp::mul: vo[o] = va[ia] * vb[ib]; break;
            }
        };
        if (same) {
            for (std::size_t i = 0; i < vo.size(); ++i) {
                apply(static_cast<std::int64_t>(i), static_cast<std::int64_t>(i), static_cast<std::int64_t>(i));
            }
        } else {
            for_each_broadcast(bc, apply);
        }
    });
    require_finite(name, out);
    if (should_record({&a, &b})) {
        record(name, {a, b}, out, [a, b, bc, same, kind](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto va = a.values<T>();
                auto vb = b.values<T>();
                T* ga = gin[0] ? gin[0].values<T>().data() : nullptr;
                T* gb = gin[1] ? gin[1].values<T>().data() : nullptr;
                auto apply = [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    const T go = vg[o];
                    switch (kind) {
                        case BinOp::add:
                            if (ga) ga[ia] += go;
                            if (gb) gb[ib] += go;
                            break;
                        case BinOp::sub:
                            if (ga) ga[ia] += go;
                            if (gb) gb[ib] -= go;
                            break;
                        case BinOp::mul:
                            if (ga) ga[ia] += go * vb[ib];
                            if (gb) gb[ib] += go * va[ia];
                            break;
                    }
                };
                if (same) {
                    for (std::size_t i = 0; i < vg.size(); ++i) {
                        const auto k = static_cast<std::int64_t>(i);
                        apply(k, k, k);
                    }
                } else {
                    for_each_broadcast(bc, apply);
                }
            });
        });
    }
    return out;
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        for (std::size_t i = 0; i < va.size(); ++i) {
            vo[i] = static_cast<T>(fwd(static_cast<double>(va[i])));
        }
    });
    require_finite(name, out);
    if (should_record({&a})) {
        record(name, {a}, out, [a, out, deriv](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto vx = a.values<T>();
                auto vy = out.values<T>();
                auto ga = gin[0].values<T>();
                for (std::size_t i = 0; i < vg.size(); ++i) {
                    ga[i] += vg[i] * static_cast<T>(deriv(static_cast<double>(vx[i]), static_cast<double>(vy[i])));
                }
            });
        });
    }
    return out;
}

double sigmoid_scalar(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

int normalize_axis(const Tensor& a, int axis) {
    const int r = a.rank();
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(a.shape()));
    }
    return ax;
}

// outer x axis x inner decomposition around `axis`.
struct AxisSplit {
    std::int64_t outer = 1;
    std::int64_t extent = 1;
    std::int64_t inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
    AxisSplit sp;
    for (int k = 0; k < axis; ++k) sp.outer *= s[static_cast<std::size_t>(k)];
    sp.extent = s[static_cast<std::size_t>(axis)];
    for (std::size_t k = static_cast<std::size_t>(axis) + 1; k < s.size(); ++k) sp.inner *= s[k];
    return sp;
}

void require_rank(const char* op, const Tensor& t, int rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(t.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::mul, a, b); }

Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        const T k = static_cast<T>(s);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * k;
    });
    require_finite("scale", out);
    if (should_record({&a})) {
        record("scale", {a}, out, [s](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto ga = gin[0].values<T>();
                const T k = static_cast<T>(s);
                for (std::size_t i = 0; i < vg.size(); ++i) ga[i] += vg[i] * k;
            });
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        const T k = static_cast<T>(s);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] + k;
    });
    require_finite("add_scalar", out);
    if (should_record({&a})) {
        record("add_scalar", {a}, out, [](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto ga = gin[0].values<T>();
                for (std::size_t i = 0; i < vg.size(); ++i) ga[i] += vg[i];
            });
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
    return unary(
        "silu", a, [](double x) { return x * sigmoid_scalar(x); },
        [](double x, double) {
            const double s = sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a, [](double x) { return sigmoid_scalar(x); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& a) {
    Tensor out = Tensor::zeros({}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        double acc = 0.0;
        for (auto v : a.values<T>()) acc += static_cast<double>(v);
        out.values<T>()[0] = static_cast<T>(acc);
    });
    require_finite("sum", out);
    if (should_record({&a})) {
        record("sum", {a}, out, [](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                const T go = g.values<T>()[0];
                for (auto& v : gin[0].values<T>()) v += go;
            });
        });
    }
    return out;
}

Tensor mean(const Tensor& a) {
    const auto n = a.numel();
    if (n == 0) {
        throw DimensionError("mean of empty tensor");
    }
    Tensor out = Tensor::zeros({}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        double acc = 0.0;
        for (auto v : a.values<T>()) acc += static_cast<double>(v);
        out.values<T>()[0] = static_cast<T>(acc / static_cast<double>(n));
    });
    require_finite("mean", out);
    if (should_record({&a})) {
        record("mean", {a}, out, [n](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                const T go = static_cast<T>(static_cast<double>(g.values<T>()[0]) / static_cast<double>(n));
                for (auto& v : gin[0].values<T>()) v += go;
            });
        });
    }
    return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
    const int ax = normalize_axis(a, axis);
    const AxisSplit sp = split_axis(a.shape(), ax);
    if (sp.extent == 0) {
        throw DimensionError("mean_axis over empty axis");
    }
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + ax);
    Tensor out = Tensor::zeros(out_shape, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                double acc = 0.0;
                for (std::int64_t k = 0; k < sp.extent; ++k) {
                    acc += static_cast<double>(va[(o * sp.extent + k) * sp.inner + i]);
                }
                vo[o * sp.inner + i] = static_cast<T>(acc / static_cast<double>(sp.extent));
            }
        }
    });
    require_finite("mean_axis", out);
    if (should_record({&a})) {
        record("mean_axis", {a}, out, [sp](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto ga = gin[0].values<T>();
                const double inv = 1.0 / static_cast<double>(sp.extent);
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    for (std::int64_t k = 0; k < sp.extent; ++k) {
                        for (std::int64_t i = 0; i < sp.inner; ++i) {
                            ga[(o * sp.extent + k) * sp.inner + i] +=
                                static_cast<T>(static_cast<double>(vg[o * sp.inner + i]) * inv);
                        }
                    }
                }
            });
        });
    }
    return out;
}

Tensor max_axis(const Tensor& a, int axis) {
    const int ax = normalize_axis(a, axis);
    const AxisSplit sp = split_axis(a.shape(), ax);
    if (sp.extent == 0) {
        throw DimensionError("max_axis over empty axis");
    }
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + ax);
    Tensor out = Tensor::zeros(out_shape, a.dtype());
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(sp.outer * sp.inner));
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                std::int64_t best = 0;
                for (std::int64_t k = 1; k < sp.extent; ++k) {
                    if (va[(o * sp.extent + k) * sp.inner + i] > va[(o * sp.extent + best) * sp.inner + i]) best = k;
                }
                (*argmax)[static_cast<std::size_t>(o * sp.inner + i)] = best;
                vo[o * sp.inner + i] = va[(o * sp.extent + best) * sp.inner + i];
            }
        }
    });
    require_finite("max_axis", out);
    if (should_record({&a})) {
        record("max_axis", {a}, out, [sp, argmax](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto ga = gin[0].values<T>();
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    for (std::int64_t i = 0; i < sp.inner; ++i) {
                        const auto k = (*argmax)[static_cast<std::size_t>(o * sp.inner + i)];
                        ga[(o * sp.extent + k) * sp.inner + i] += vg[o * sp.inner + i];
                    }
                }
            });
        });
    }
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    const int ax = normalize_axis(a, axis);
    const AxisSplit sp = split_axis(a.shape(), ax);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                auto at = [&](std::int64_t k) { return (o * sp.extent + k) * sp.inner + i; };
                double mx = -INFINITY;
                for (std::int64_t k = 0; k < sp.extent; ++k) mx = std::max(mx, static_cast<double>(va[at(k)]));
                double z = 0.0;
                for (std::int64_t k = 0; k < sp.extent; ++k) z += std::exp(static_cast<double>(va[at(k)]) - mx);
                for (std::int64_t k = 0; k < sp.extent; ++k) {
                    vo[at(k)] = static_cast<T>(std::exp(static_cast<double>(va[at(k)]) - mx) / z);
                }
            }
        }
    });
    require_finite("softmax", out);
    if (should_record({&a})) {
        record("softmax", {a}, out, [out, sp](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto vy = out.values<T>();
                auto ga = gin[0].values<T>();
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    for (std::int64_t i = 0; i < sp.inner; ++i) {
                        auto at = [&](std::int64_t k) { return (o * sp.extent + k) * sp.inner + i; };
                        double dot = 0.0;
                        for (std::int64_t k = 0; k < sp.extent; ++k) {
                            dot += static_cast<double>(vg[at(k)]) * static_cast<double>(vy[at(k)]);
                        }
                        for (std::int64_t k = 0; k < sp.extent; ++k) {
                            ga[at(k)] += static_cast<T>(static_cast<double>(vy[at(k)]) *
                                                        (static_cast<double>(vg[at(k)]) - dot));
                        }
                    }
                }
            });
        });
    }
    return out;
}

Tensor group_normalize(const Tensor& x, int groups, double eps) {
    if (x.rank() < 1 || groups < 1 || x.dim(0) % groups != 0) {
        throw DimensionError("group_normalize: " + std::to_string(groups) + " groups do not divide shape " +
                             shape_str(x.shape()));
    }
    const std::int64_t n = x.numel() / groups;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    std::vector<double> inv_std(static_cast<std::size_t>(groups));
    dispatch(x.dtype(), [&]<class T>() {
        auto vx = x.values<T>();
        auto vo = out.values<T>();
        for (int gidx = 0; gidx < groups; ++gidx) {
            const std::int64_t base = gidx * n;
            double mu = 0.0;
            for (std::int64_t i = 0; i < n; ++i) mu += static_cast<double>(vx[base + i]);
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double d = static_cast<double>(vx[base + i]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(gidx)] = is;
            for (std::int64_t i = 0; i < n; ++i) {
                vo[base + i] = static_cast<T>((static_cast<double>(vx[base + i]) - mu) * is);
            }
        }
    });
    require_finite("group_normalize", out);
    if (should_record({&x})) {
        record("group_normalize", {x}, out, [out, groups, n, inv_std](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto vy = out.values<T>();
                auto gx = gin[0].values<T>();
                for (int gidx = 0; gidx < groups; ++gidx) {
                    const std::int64_t base = gidx * n;
                    double mg = 0.0;
                    double mgy = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        mg += static_cast<double>(vg[base + i]);
                        mgy += static_cast<double>(vg[base + i]) * static_cast<double>(vy[base + i]);
                    }
                    mg /= static_cast<double>(n);
                    mgy /= static_cast<double>(n);
                    const double is = inv_std[static_cast<std::size_t>(gidx)];
                    for (std::int64_t i = 0; i < n; ++i) {
                        gx[base + i] += static_cast<T>(
                            is * (static_cast<double>(vg[base + i]) - mg - static_cast<double>(vy[base + i]) * mgy));
                    }
                }
            });
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    require_same_dtype("matmul", a, b);
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const auto m = a.dim(0);
    const auto k = a.dim(1);
    const auto p = b.dim(1);
    Tensor out = Tensor::zeros({m, p}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        MapMat<T>(out.values<T>().data(), m, p).noalias() =
            CMapMat<T>(a.values<T>().data(), m, k) * CMapMat<T>(b.values<T>().data(), k, p);
    });
    require_finite("matmul", out);
    if (should_record({&a, &b})) {
        record("matmul", {a, b}, out, [a, b, m, k, p](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                CMapMat<T> mg(g.values<T>().data(), m, p);
                if (gin[0]) {
                    MapMat<T>(gin[0].values<T>().data(), m, k).noalias() +=
                        mg * CMapMat<T>(b.values<T>().data(), k, p).transpose();
                }
                if (gin[1]) {
                    MapMat<T>(gin[1].values<T>().data(), k, p).noalias() +=
                        CMapMat<T>(a.values<T>().data(), m, k).transpose() * mg;
                }
            });
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank("matmul_nt", a, 2);
    require_rank("matmul_nt", b, 2);
    require_same_dtype("matmul_nt", a, b);
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    const auto m = a.dim(0);
    const auto k = a.dim(1);
    const auto p = b.dim(0);
    Tensor out = Tensor::zeros({m, p}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        MapMat<T>(out.values<T>().data(), m, p).noalias() =
            CMapMat<T>(a.values<T>().data(), m, k) * CMapMat<T>(b.values<T>().data(), p, k).transpose();
    });
    require_finite("matmul_nt", out);
    if (should_record({&a, &b})) {
        record("matmul_nt", {a, b}, out, [a, b, m, k, p](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                CMapMat<T> mg(g.values<T>().data(), m, p);
                if (gin[0]) {
                    MapMat<T>(gin[0].values<T>().data(), m, k).noalias() +=
                        mg * CMapMat<T>(b.values<T>().data(), p, k);
                }
                if (gin[1]) {
                    MapMat<T>(gin[1].values<T>().data(), p, k).noalias() +=
                        mg.transpose() * CMapMat<T>(a.values<T>().data(), m, k);
                }
            });
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const auto m = a.dim(0);
    const auto n = a.dim(1);
    Tensor out = Tensor::zeros({n, m}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        MapMat<T>(out.values<T>().data(), n, m) = CMapMat<T>(a.values<T>().data(), m, n).transpose();
    });
    if (should_record({&a})) {
        record("transpose", {a}, out, [m, n](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                MapMat<T>(gin[0].values<T>().data(), m, n) += CMapMat<T>(g.values<T>().data(), n, m).transpose();
            });
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Tensor out = a.detach();
    out.impl()->shape = std::move(shape);
    if (should_record({&a})) {
        record("reshape", {a}, out, [](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto ga = gin[0].values<T>();
                for (std::size_t i = 0; i < vg.size(); ++i) ga[i] += vg[i];
            });
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat of zero tensors");
    }
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        require_same_dtype("concat", parts[0], p);
        if (p.rank() != parts[0].rank() || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
            throw DimensionError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                                 shape_str(p.shape()));
        }
        rows += p.dim(0);
    }
    Shape out_shape = parts[0].shape();
    out_shape[0] = rows;
    Tensor out = Tensor::zeros(out_shape, parts[0].dtype());
    dispatch(out.dtype(), [&]<class T>() {
        auto vo = out.values<T>();
        std::size_t off = 0;
        for (const auto& p : parts) {
            auto vp = p.values<T>();
            std::copy(vp.begin(), vp.end(), vo.begin() + static_cast<std::ptrdiff_t>(off));
            off += vp.size();
        }
    });
    bool rec = false;
    for (const auto& p : parts) {
        rec = rec || should_record({&p});
    }
    if (rec) {
        std::vector<std::size_t> sizes;
        for (const auto& p : parts) sizes.push_back(static_cast<std::size_t>(p.numel()));
        record("concat", parts, out, [sizes](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                std::size_t off = 0;
                for (std::size_t k = 0; k < sizes.size(); ++k) {
                    if (gin[k]) {
                        auto gk = gin[k].values<T>();
                        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += vg[off + i];
                    }
                    off += sizes[k];
                }
            });
        });
    }
    return out;
}

Tensor slice(const Tensor& a, std::int64_t begin, std::int64_t end) {
    if (a.rank() < 1 || begin < 0 || end > a.dim(0) || begin >= end) {
        throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of shape " +
                             shape_str(a.shape()));
    }
    Shape out_shape = a.shape();
    out_shape[0] = end - begin;
    const std::int64_t row = a.numel() / a.dim(0);
    Tensor out = Tensor::zeros(out_shape, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vo = out.values<T>();
        std::copy(va.begin() + begin * row, va.begin() + end * row, vo.begin());
    });
    if (should_record({&a})) {
        record("slice", {a}, out, [begin, row](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto ga = gin[0].values<T>();
                for (std::size_t i = 0; i < vg.size(); ++i) ga[static_cast<std::size_t>(begin * row) + i] += vg[i];
            });
        });
    }
    return out;
}

namespace {

struct ConvGeom {
    std::int64_t cin, h, w, cout, ho, wo;
    int stride;
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
    const std::int64_t plane = g.ho * g.wo;
    for (std::int64_t c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = cols + ((c * 3 + ky) * 3 + kx) * plane;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * g.stride + ky - 1;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const std::int64_t ix = ox * g.stride + kx - 1;
                        row[oy * g.wo + ox] =
                            (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* x) {
    const std::int64_t plane = g.ho * g.wo;
    for (std::int64_t c = 0; c < g.cin; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = cols + ((c * 3 + ky) * 3 + kx) * plane;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * g.stride + ky - 1;
                    if (iy < 0 || iy >= g.h) continue;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const std::int64_t ix = ox * g.stride + kx - 1;
                        if (ix < 0 || ix >= g.w) continue;
                        x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride) {
    require_rank("conv2d", x, 3);
    require_rank("conv2d", w, 4);
    require_same_dtype("conv2d", x, w);
    if (stride != 1 && stride != 2) {
        throw DimensionError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
    }
    if (w.dim(1) != x.dim(0) || w.dim(2) != 3 || w.dim(3) != 3) {
        throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    }
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), 0, 0, stride};
    g.ho = (g.h - 1) / stride + 1;
    g.wo = (g.w - 1) / stride + 1;
    const std::int64_t kdim = g.cin * 9;
    const std::int64_t plane = g.ho * g.wo;
    Tensor cols = Tensor::zeros({kdim, plane}, x.dtype());
    Tensor out = Tensor::zeros({g.cout, g.ho, g.wo}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        im2col(x.values<T>().data(), g, cols.values<T>().data());
        MapMat<T>(out.values<T>().data(), g.cout, plane).noalias() =
            CMapMat<T>(w.values<T>().data(), g.cout, kdim) * CMapMat<T>(cols.values<T>().data(), kdim, plane);
    });
    require_finite("conv2d", out);
    if (should_record({&x, &w})) {
        record("conv2d", {x, w}, out, [w, cols, g, kdim, plane](const Tensor& go, std::span<Tensor> gin) {
            dispatch(go.dtype(), [&]<class T>() {
                CMapMat<T> mg(go.values<T>().data(), g.cout, plane);
                if (gin[1]) {
                    MapMat<T>(gin[1].values<T>().data(), g.cout, kdim).noalias() +=
                        mg * CMapMat<T>(cols.values<T>().data(), kdim, plane).transpose();
                }
                if (gin[0]) {
                    RowMat<T> gcols = CMapMat<T>(w.values<T>().data(), g.cout, kdim).transpose() * mg;
                    col2im_add(gcols.data(), g, gin[0].values<T>().data());
                }
            });
        });
    }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    require_rank("upsample_nearest", x, 3);
    if (factor < 1) {
        throw DimensionError("upsample_nearest: factor must be >= 1");
    }
    const auto c = x.dim(0);
    const auto h = x.dim(1);
    const auto w = x.dim(2);
    const std::int64_t f = factor;
    Tensor out = Tensor::zeros({c, h * f, w * f}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        auto vx = x.values<T>();
        auto vo = out.values<T>();
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < h * f; ++y)
                for (std::int64_t xx = 0; xx < w * f; ++xx)
                    vo[(ch * h * f + y) * w * f + xx] = vx[(ch * h + y / f) * w + xx / f];
    });
    if (should_record({&x})) {
        record("upsample_nearest", {x}, out, [c, h, w, f](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto vg = g.values<T>();
                auto gx = gin[0].values<T>();
                for (std::int64_t ch = 0; ch < c; ++ch)
                    for (std::int64_t y = 0; y < h * f; ++y)
                        for (std::int64_t xx = 0; xx < w * f; ++xx)
                            gx[(ch * h + y / f) * w + xx / f] += vg[(ch * h * f + y) * w * f + xx];
            });
        });
    }
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_dtype("mse", a, b);
    if (a.shape() != b.shape()) {
        throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto n = a.numel();
    if (n == 0) {
        throw DimensionError("mse of empty tensors");
    }
    Tensor out = Tensor::zeros({}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vb = b.values<T>();
        double acc = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
            acc += d * d;
        }
        out.values<T>()[0] = static_cast<T>(acc / static_cast<double>(n));
    });
    require_finite("mse", out);
    if (should_record({&a, &b})) {
        record("mse", {a, b}, out, [a, b, n](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                auto va = a.values<T>();
                auto vb = b.values<T>();
                const double k = 2.0 * static_cast<double>(g.values<T>()[0]) / static_cast<double>(n);
                for (std::size_t i = 0; i < va.size(); ++i) {
                    const T d = static_cast<T>(k * (static_cast<double>(va[i]) - static_cast<double>(vb[i])));
                    if (gin[0]) gin[0].values<T>()[i] += d;
                    if (gin[1]) gin[1].values<T>()[i] -= d;
                }
            });
        });
    }
    return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    require_same_dtype("cosine_similarity", a, b);
    if (a.rank() != 1 || a.shape() != b.shape() || a.numel() < 1) {
        throw DimensionError("cosine_similarity: expected equal-length vectors, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({}, a.dtype());
    double dot = 0.0;
    double na2 = 0.0;
    double nb2 = 0.0;
    double denom = 0.0;
    dispatch(a.dtype(), [&]<class T>() {
        auto va = a.values<T>();
        auto vb = b.values<T>();
        T d = 0, sa = 0, sb = 0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            d += va[i] * vb[i];
            sa += va[i] * va[i];
            sb += vb[i] * vb[i];
        }
        // sqrt(|a|^2 |b|^2) rather than |a| |b| keeps cos(a, a) exact.
        const T den = std::sqrt(sa * sb) + static_cast<T>(kCosineStabilizer);
        out.values<T>()[0] = d / den;
        dot = d;
        na2 = sa;
        nb2 = sb;
        denom = den;
    });
    require_finite("cosine_similarity", out);
    if (should_record({&a, &b})) {
        record("cosine_similarity", {a, b}, out,
               [a, b, dot, na2, nb2, denom](const Tensor& g, std::span<Tensor> gin) {
                   dispatch(g.dtype(), [&]<class T>() {
                       const double go = static_cast<double>(g.values<T>()[0]);
                       auto va = a.values<T>();
                       auto vb = b.values<T>();
                       const double na = std::sqrt(na2);
                       const double nb = std::sqrt(nb2);
                       // d/da [dot / (|a||b| + tau)]
                       const double c1 = 1.0 / denom;
                       const double c2 = dot / (denom * denom);
                       const double ka = na > 0 ? nb / na : 0.0;
                       const double kb = nb > 0 ? na / nb : 0.0;
                       for (std::size_t i = 0; i < va.size(); ++i) {
                           const double ai = static_cast<double>(va[i]);
                           const double bi = static_cast<double>(vb[i]);
                           if (gin[0]) gin[0].values<T>()[i] += static_cast<T>(go * (bi * c1 - c2 * ka * ai));
                           if (gin[1]) gin[1].values<T>()[i] += static_cast<T>(go * (ai * c1 - c2 * kb * bi));
                       }
                   });
               });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    require_rank("cross_entropy", logits, 2);
    const std::int64_t n = logits.dim(0);
    const std::int64_t c = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    }
    for (int t : targets) {
        if (t < 0 || t >= c) {
            throw RangeError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
        }
    }
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * c));
    double total = 0.0;
    dispatch(logits.dtype(), [&]<class T>() {
        auto v = logits.values<T>();
        for (std::int64_t r = 0; r < n; ++r) {
            double mx = -INFINITY;
            for (std::int64_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(v[r * c + k]));
            double z = 0.0;
            for (std::int64_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(v[r * c + k]) - mx);
            for (std::int64_t k = 0; k < c; ++k) {
                (*probs)[static_cast<std::size_t>(r * c + k)] = std::exp(static_cast<double>(v[r * c + k]) - mx) / z;
            }
            total += std::log(z) + mx - static_cast<double>(v[r * c + targets[static_cast<std::size_t>(r)]]);
        }
    });
    Tensor out = Tensor::scalar(total / static_cast<double>(n), logits.dtype());
    require_finite("cross_entropy", out);
    if (should_record({&logits})) {
        record("cross_entropy", {logits}, out, [probs, targets, n, c](const Tensor& g, std::span<Tensor> gin) {
            dispatch(g.dtype(), [&]<class T>() {
                const double scale = static_cast<double>(g.values<T>()[0]) / static_cast<double>(n);
                auto ga = gin[0].values<T>();
                for (std::int64_t r = 0; r < n; ++r) {
                    for (std::int64_t k = 0; k < c; ++k) {
                        double d = (*probs)[static_cast<std::size_t>(r * c + k)];
                        if (k == targets[static_cast<std::size_t>(r)]) d -= 1.0;
                        ga[r * c + k] += static_cast<T>(scale * d);
                    }
                }
            });
        });
    }
    return out;
}

}  // namespace disentune::ops
