#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dt/rng.hpp"
#include "dt/tensor.hpp"

namespace dt {

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using EMap = Eigen::Map<EMat<Real>>;
template <class Real>
using ECMap = Eigen::Map<const EMat<Real>>;

namespace detail {

template <class Real>
inline bool should_record(std::initializer_list<const Tensor<Real>*> inputs) {
    if (!taping<Real>()) return false;
    for (auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <class Real>
inline void record(const char* op, std::initializer_list<const Tensor<Real>*> inputs,
                   Tensor<Real>& out, std::function<void()> backward) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl<Real>>> ins;
    ins.reserve(inputs.size());
    for (auto* t : inputs) ins.push_back(t->impl());
    Tape<Real>::current()->record(op, std::move(ins), out.impl(), std::move(backward));
}

template <class Real>
inline void check_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// iterate 1-d lines along `axis` of a row-major tensor
template <class Fn>
inline void for_each_line(const Shape& shape, int axis, Fn&& fn) {
    const int n = shape[static_cast<size_t>(axis)];
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
    for (long o = 0; o < outer; ++o)
        for (long in = 0; in < inner; ++in) fn(o * n * inner + in, inner, n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<Real> out = Tensor<Real>::zeros({m, n});
    EMap<Real>(out.values().data(), m, n).noalias() =
        ECMap<Real>(a.values().data(), m, k) * ECMap<Real>(b.values().data(), k, n);
    if (detail::should_record<Real>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record<Real>("matmul", {&a, &b}, out, [ai, bi, oi, m, k, n] {
            ECMap<Real> g(oi->grad.data(), m, n);
            if (ai->requires_grad) {
                ai->ensure_grad();
                EMap<Real>(ai->grad.data(), m, k).noalias() +=
                    g * ECMap<Real>(bi->values.data(), k, n).transpose();
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                EMap<Real>(bi->grad.data(), k, n).noalias() +=
                    ECMap<Real>(ai->values.data(), m, k).transpose() * g;
            }
        });
    }
    return out;
}

// a · bᵀ for row-major operands; the common case for weight matrices stored
// as [out_dim × in_dim]
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<Real> out = Tensor<Real>::zeros({m, n});
    EMap<Real>(out.values().data(), m, n).noalias() =
        ECMap<Real>(a.values().data(), m, k) * ECMap<Real>(b.values().data(), n, k).transpose();
    if (detail::should_record<Real>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record<Real>("matmul_nt", {&a, &b}, out, [ai, bi, oi, m, k, n] {
            ECMap<Real> g(oi->grad.data(), m, n);
            if (ai->requires_grad) {
                ai->ensure_grad();
                EMap<Real>(ai->grad.data(), m, k).noalias() +=
                    g * ECMap<Real>(bi->values.data(), n, k);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                EMap<Real>(bi->grad.data(), n, k).noalias() +=
                    g.transpose() * ECMap<Real>(ai->values.data(), m, k);
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor<Real> out = Tensor<Real>::zeros({n, m});
    EMap<Real>(out.values().data(), n, m) = ECMap<Real>(a.values().data(), m, n).transpose();
    if (detail::should_record<Real>({&a})) {
        auto ai = a.impl(), oi = out.impl();
        detail::record<Real>("transpose", {&a}, out, [ai, oi, m, n] {
            ai->ensure_grad();
            EMap<Real>(ai->grad.data(), m, n) += ECMap<Real>(oi->grad.data(), n, m).transpose();
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// binary elementwise with scalar broadcast on either side
template <class Real, class Fwd, class Bwd>
Tensor<Real> binary_op(const char* name, const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd,
                       Bwd bwd) {
    const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar) check_same_shape(name, a, b);
    const Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    Tensor<Real> out = Tensor<Real>::zeros(out_shape);
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    const long n = out.numel();
    for (long i = 0; i < n; ++i) fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i], ov[i]);
    if (should_record<Real>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record<Real>(name, {&a, &b}, out, [ai, bi, oi, a_scalar, b_scalar, n, bwd] {
            if (ai->requires_grad) ai->ensure_grad();
            if (bi->requires_grad) bi->ensure_grad();
            for (long i = 0; i < n; ++i) {
                const Real g = oi->grad[static_cast<size_t>(i)];
                Real ga = 0, gb = 0;
                bwd(ai->values[a_scalar ? 0 : static_cast<size_t>(i)],
                    bi->values[b_scalar ? 0 : static_cast<size_t>(i)], g, ga, gb);
                if (ai->requires_grad) ai->grad[a_scalar ? 0 : static_cast<size_t>(i)] += ga;
                if (bi->requires_grad) bi->grad[b_scalar ? 0 : static_cast<size_t>(i)] += gb;
            }
        });
    }
    return out;
}

template <class Real, class Fwd, class Bwd>
Tensor<Real> unary_op(const char* name, const Tensor<Real>& x, Fwd fwd, Bwd bwd) {
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
    if (should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        record<Real>(name, {&x}, out, [xi, oi, n, bwd] {
            xi->ensure_grad();
            for (long i = 0; i < n; ++i)
                xi->grad[static_cast<size_t>(i)] +=
                    bwd(xi->values[static_cast<size_t>(i)], oi->values[static_cast<size_t>(i)]) *
                    oi->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op<Real>(
        "add", a, b, [](Real x, Real y, Real& o) { o = x + y; },
        [](Real, Real, Real g, Real& ga, Real& gb) { ga = g, gb = g; });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op<Real>(
        "sub", a, b, [](Real x, Real y, Real& o) { o = x - y; },
        [](Real, Real, Real g, Real& ga, Real& gb) { ga = g, gb = -g; });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op<Real>(
        "mul", a, b, [](Real x, Real y, Real& o) { o = x * y; },
        [](Real x, Real y, Real g, Real& ga, Real& gb) { ga = g * y, gb = g * x; });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c) {
    return detail::unary_op<Real>(
        "scale", x, [c](Real v) { return c * v; }, [c](Real, Real) { return c; });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    return detail::unary_op<Real>(
        "relu", x, [](Real v) { return v > Real(0) ? v : Real(0); },
        [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    return detail::unary_op<Real>(
        "gelu", x,
        [](Real v) { return Real(0.5) * v * (Real(1) + std::erf(v * Real(M_SQRT1_2))); },
        [](Real v, Real) {
            const Real phi = std::exp(Real(-0.5) * v * v) * Real(0.3989422804014327);
            return Real(0.5) * (Real(1) + std::erf(v * Real(M_SQRT1_2))) + v * phi;
        });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    return detail::unary_op<Real>(
        "sigmoid", x,
        [](Real v) {
            return v >= Real(0) ? Real(1) / (Real(1) + std::exp(-v))
                                : std::exp(v) / (Real(1) + std::exp(v));
        },
        [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& x) {
    for (Real v : x.values())
        if (!(v > Real(0))) throw DomainError("log: non-positive input " + std::to_string(v));
    return detail::unary_op<Real>(
        "log", x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& x) {
    return detail::unary_op<Real>(
        "exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

// x [R×C] + bias [C], broadcast across rows
template <class Real>
Tensor<Real> add_rowwise(const Tensor<Real>& x, const Tensor<Real>& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw ShapeError("add_rowwise: got " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values(), bv = bias.values();
    auto ov = out.values();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) ov[static_cast<size_t>(r) * cols + c] = xv[static_cast<size_t>(r) * cols + c] + bv[static_cast<size_t>(c)];
    if (detail::should_record<Real>({&x, &bias})) {
        auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
        detail::record<Real>("add_rowwise", {&x, &bias}, out, [xi, bi, oi, rows, cols] {
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c)
                        bi->grad[static_cast<size_t>(c)] += oi->grad[static_cast<size_t>(r) * cols + c];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) throw BoundsError("softmax: axis out of range");
    for (Real v : x.values())
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    detail::for_each_line(x.shape(), axis, [&](long base, long stride, int n) {
        Real mx = xv[static_cast<size_t>(base)];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xv[static_cast<size_t>(base + j * stride)]);
        Real denom = 0;
        for (int j = 0; j < n; ++j) {
            const Real e = std::exp(xv[static_cast<size_t>(base + j * stride)] - mx);
            ov[static_cast<size_t>(base + j * stride)] = e;
            denom += e;
        }
        for (int j = 0; j < n; ++j) ov[static_cast<size_t>(base + j * stride)] /= denom;
    });
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        const Shape shape = x.shape();
        detail::record<Real>("softmax", {&x}, out, [xi, oi, shape, axis] {
            xi->ensure_grad();
            detail::for_each_line(shape, axis, [&](long base, long stride, int n) {
                Real dot = 0;
                for (int j = 0; j < n; ++j) {
                    const size_t k = static_cast<size_t>(base + j * stride);
                    dot += oi->grad[k] * oi->values[k];
                }
                for (int j = 0; j < n; ++j) {
                    const size_t k = static_cast<size_t>(base + j * stride);
                    xi->grad[k] += oi->values[k] * (oi->grad[k] - dot);
                }
            });
        });
    }
    return out;
}

// Row-wise softmax over the unmasked entries of a [R×C] matrix; masked
// entries produce exact zeros and receive no gradient. A row with no valid
// entry is a caller bug.
template <class Real>
Tensor<Real> masked_softmax(const Tensor<Real>& x, const std::vector<std::uint8_t>& mask) {
    if (x.rank() != 2) throw ShapeError("masked_softmax: expected rank-2, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    if (static_cast<long>(mask.size()) != x.numel())
        throw ShapeError("masked_softmax: mask size mismatch");
    for (Real v : x.values())
        if (!std::isfinite(v)) throw NumericError("masked_softmax: non-finite input");
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (int r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * cols;
        Real mx = 0;
        bool any = false;
        for (int c = 0; c < cols; ++c)
            if (mask[off + c]) {
                mx = any ? std::max(mx, xv[off + c]) : xv[off + c];
                any = true;
            }
        if (!any) throw ContractError("masked_softmax: fully masked row " + std::to_string(r));
        Real denom = 0;
        for (int c = 0; c < cols; ++c)
            if (mask[off + c]) {
                const Real e = std::exp(xv[off + c] - mx);
                ov[off + c] = e;
                denom += e;
            }
        for (int c = 0; c < cols; ++c)
            if (mask[off + c]) ov[off + c] /= denom;
    }
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        const std::vector<std::uint8_t> m = mask;
        detail::record<Real>("masked_softmax", {&x}, out, [xi, oi, m, rows, cols] {
            xi->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const size_t off = static_cast<size_t>(r) * cols;
                Real dot = 0;
                for (int c = 0; c < cols; ++c)
                    if (m[off + c]) dot += oi->grad[off + c] * oi->values[off + c];
                for (int c = 0; c < cols; ++c)
                    if (m[off + c]) xi->grad[off + c] += oi->values[off + c] * (oi->grad[off + c] - dot);
            }
        });
    }
    return out;
}

// Normalizes the last axis to zero mean / unit variance (population variance,
// eps inside the square root), then applies the affine pair.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps = Real(1e-5)) {
    const int d = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw ShapeError("layer_norm: affine shape mismatch for " + shape_str(x.shape()));
    const long rows = x.numel() / d;
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    std::vector<Real> inv_std(static_cast<size_t>(rows)), xhat(x.values().size());
    auto xv = x.values();
    auto gv = gamma.values(), bv = beta.values();
    auto ov = out.values();
    for (long r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * d;
        Real mean = 0;
        for (int c = 0; c < d; ++c) mean += xv[off + c];
        mean /= d;
        Real var = 0;
        for (int c = 0; c < d; ++c) {
            const Real dv = xv[off + c] - mean;
            var += dv * dv;
        }
        var /= d;
        const Real istd = Real(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = istd;
        for (int c = 0; c < d; ++c) {
            const Real h = (xv[off + c] - mean) * istd;
            xhat[off + c] = h;
            ov[off + c] = gv[static_cast<size_t>(c)] * h + bv[static_cast<size_t>(c)];
        }
    }
    if (detail::should_record<Real>({&x, &gamma, &beta})) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        detail::record<Real>("layer_norm", {&x, &gamma, &beta}, out,
                             [xi, gi, bi, oi, rows, d, inv_std = std::move(inv_std),
                              xhat = std::move(xhat)] {
            for (long r = 0; r < rows; ++r) {
                const size_t off = static_cast<size_t>(r) * d;
                if (gi->requires_grad) {
                    gi->ensure_grad();
                    for (int c = 0; c < d; ++c)
                        gi->grad[static_cast<size_t>(c)] += oi->grad[off + c] * xhat[off + c];
                }
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    for (int c = 0; c < d; ++c) bi->grad[static_cast<size_t>(c)] += oi->grad[off + c];
                }
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    Real sum_g = 0, sum_gh = 0;
                    for (int c = 0; c < d; ++c) {
                        const Real gl = oi->grad[off + c] * gi->values[static_cast<size_t>(c)];
                        sum_g += gl;
                        sum_gh += gl * xhat[off + c];
                    }
                    const Real istd = inv_std[static_cast<size_t>(r)];
                    for (int c = 0; c < d; ++c) {
                        const Real gl = oi->grad[off + c] * gi->values[static_cast<size_t>(c)];
                        xi->grad[off + c] +=
                            istd * (gl - sum_g / d - xhat[off + c] * sum_gh / d);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: empty input list");
    const int rank = parts[0].rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw BoundsError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    for (size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && s[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)])
                throw ShapeError("concat: extent mismatch on axis " + std::to_string(i));
        out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
    }
    Tensor<Real> out = Tensor<Real>::zeros(out_shape);
    long inner = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    long outer = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    const long out_line = static_cast<long>(out_shape[static_cast<size_t>(axis)]) * inner;
    auto ov = out.values();
    long pos = 0;  // offset of each part within an output line
    std::vector<long> part_pos(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        part_pos[p] = pos;
        pos += static_cast<long>(parts[p].dim(axis)) * inner;
    }
    for (size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].values();
        const long len = static_cast<long>(parts[p].dim(axis)) * inner;
        for (long o = 0; o < outer; ++o)
            std::copy_n(pv.data() + o * len, len, ov.data() + o * out_line + part_pos[p]);
    }
    bool rec = false;
    if (taping<Real>())
        for (const auto& t : parts)
            if (t.requires_grad()) rec = true;
    if (rec) {
        std::vector<std::shared_ptr<TensorImpl<Real>>> impls;
        for (const auto& t : parts) impls.push_back(t.impl());
        auto oi = out.impl();
        out.set_requires_grad(true);
        std::vector<long> lens;
        for (const auto& t : parts) lens.push_back(static_cast<long>(t.dim(axis)) * inner);
        Tape<Real>::current()->record("concat", impls, oi,
                                      [impls, oi, part_pos, lens, outer, out_line] {
            for (size_t p = 0; p < impls.size(); ++p) {
                if (!impls[p]->requires_grad) continue;
                impls[p]->ensure_grad();
                for (long o = 0; o < outer; ++o) {
                    const Real* src = oi->grad.data() + o * out_line + part_pos[p];
                    Real* dst = impls[p]->grad.data() + o * lens[p];
                    for (long i = 0; i < lens[p]; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> slice(const Tensor<Real>& x, int axis, int start, int len) {
    const int rank = x.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw BoundsError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.dim(axis))
        throw BoundsError("slice: range [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") exceeds extent " +
                          std::to_string(x.dim(axis)));
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor<Real> out = Tensor<Real>::zeros(out_shape);
    long inner = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    long outer = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    const long in_line = static_cast<long>(x.dim(axis)) * inner;
    const long out_line = static_cast<long>(len) * inner;
    auto xv = x.values();
    auto ov = out.values();
    for (long o = 0; o < outer; ++o)
        std::copy_n(xv.data() + o * in_line + start * inner, out_line, ov.data() + o * out_line);
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        detail::record<Real>("slice", {&x}, out, [xi, oi, outer, in_line, out_line, start, inner] {
            xi->ensure_grad();
            for (long o = 0; o < outer; ++o) {
                const Real* src = oi->grad.data() + o * out_line;
                Real* dst = xi->grad.data() + o * in_line + start * inner;
                for (long i = 0; i < out_line; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(new_shape));
    Tensor<Real> out = Tensor<Real>::from(std::move(new_shape),
                                          std::vector<Real>(x.values().begin(), x.values().end()));
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        detail::record<Real>("reshape", {&x}, out, [xi, oi] {
            xi->ensure_grad();
            for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
    Real s = 0;
    for (Real v : x.values()) s += v;
    Tensor<Real> out = Tensor<Real>::scalar(s);
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        detail::record<Real>("sum_all", {&x}, out, [xi, oi] {
            xi->ensure_grad();
            const Real g = oi->grad[0];
            for (auto& v : xi->grad) v += g;
        });
    }
    return out;
}

// Euclidean norm of each row of a [R×C] matrix. The subgradient at an exactly
// zero row is taken as zero.
template <class Real>
Tensor<Real> row_l2norm(const Tensor<Real>& x) {
    if (x.rank() != 2) throw ShapeError("row_l2norm: expected rank-2, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor<Real> out = Tensor<Real>::zeros({rows});
    auto xv = x.values();
    auto ov = out.values();
    for (int r = 0; r < rows; ++r) {
        Real s = 0;
        for (int c = 0; c < cols; ++c) {
            const Real v = xv[static_cast<size_t>(r) * cols + c];
            s += v * v;
        }
        ov[static_cast<size_t>(r)] = std::sqrt(s);
    }
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        detail::record<Real>("row_l2norm", {&x}, out, [xi, oi, rows, cols] {
            xi->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const Real norm = oi->values[static_cast<size_t>(r)];
                if (norm == Real(0)) continue;
                const Real g = oi->grad[static_cast<size_t>(r)] / norm;
                for (int c = 0; c < cols; ++c)
                    xi->grad[static_cast<size_t>(r) * cols + c] +=
                        g * xi->values[static_cast<size_t>(r) * cols + c];
            }
        });
    }
    return out;
}

// rows of table [V×d] selected by ids -> [|ids|×d]; backward scatter-adds
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("gather_rows: expected rank-2 table");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw BoundsError("gather_rows: id " + std::to_string(id) + " outside table of " +
                              std::to_string(v) + " rows");
    Tensor<Real> out = Tensor<Real>::zeros({static_cast<int>(ids.size()), d});
    auto tv = table.values();
    auto ov = out.values();
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tv.data() + static_cast<size_t>(ids[i]) * d, d, ov.data() + i * d);
    if (detail::should_record<Real>({&table})) {
        auto ti = table.impl(), oi = out.impl();
        detail::record<Real>("gather_rows", {&table}, out, [ti, oi, ids, d] {
            ti->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int c = 0; c < d; ++c)
                    ti->grad[static_cast<size_t>(ids[i]) * d + c] += oi->grad[i * d + c];
        });
    }
    return out;
}

// Inverted dropout with a seeded mask; p is the drop probability.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, Real p, Rng& rng) {
    if (p < Real(0) || p >= Real(1)) throw DomainError("dropout: p must be in [0, 1)");
    if (p == Real(0)) return x;
    const Real keep_scale = Real(1) / (Real(1) - p);
    std::vector<std::uint8_t> mask(x.values().size());
    for (auto& m : mask) m = rng.uniform() >= double(p) ? 1 : 0;
    Tensor<Real> out = Tensor<Real>::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (size_t i = 0; i < mask.size(); ++i) ov[i] = mask[i] ? xv[i] * keep_scale : Real(0);
    if (detail::should_record<Real>({&x})) {
        auto xi = x.impl(), oi = out.impl();
        detail::record<Real>("dropout", {&x}, out, [xi, oi, mask = std::move(mask), keep_scale] {
            xi->ensure_grad();
            for (size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) xi->grad[i] += oi->grad[i] * keep_scale;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Max over parameter coordinates of |analytic - central difference| relative
// error. f must be a deterministic scalar function of the given parameters.
template <class Real>
double finite_diff_check(const std::function<Tensor<Real>()>& f, std::span<Tensor<Real>> params,
                         double h) {
    if (!(h > 0)) throw DomainError("finite_diff_check: h must be positive");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape<Real> tape;
    Tensor<Real> loss;
    {
        TapeScope<Real> scope(tape);
        loss = f();
    }
    tape.backward(loss);
    std::vector<std::vector<Real>> analytic;
    for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const Real orig = vals[i];
            vals[i] = orig + static_cast<Real>(h);
            const double fp = static_cast<double>(f().item());
            vals[i] = orig - static_cast<Real>(h);
            const double fm = static_cast<double>(f().item());
            vals[i] = orig;
            const double central = (fp - fm) / (2.0 * h);
            const double rel = std::abs(static_cast<double>(analytic[pi][i]) - central) /
                               std::max(1e-8, std::abs(central));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace dt
