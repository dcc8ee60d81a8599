#pragma once

// Dense 2-D row-major tensors with a reverse-mode tape. Every value used by
// the model is a rows x cols matrix; scalars are 1x1, column vectors Rx1,
// row vectors 1xC. f32 is the training dtype, f64 the verification dtype.

#include "bare/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace bare {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
class Tape;

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : data_(std::make_shared<std::vector<T>>(numel_of(shape), T(0))), shape_(std::move(shape)) {}

    Tensor(Shape shape, std::vector<T> data)
        : data_(std::make_shared<std::vector<T>>(std::move(data))), shape_(std::move(shape)) {
        if (data_->size() != numel_of(shape_))
            throw ShapeError("tensor: data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor constant(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1, 1}, {value}); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    const Shape& shape() const { return shape_; }

    const std::vector<T>& data() const { return *data_; }
    std::vector<T>& data_mut() { return *data_; }
    const T* ptr() const { return data_->data(); }
    T* ptr_mut() { return data_->data(); }

    T at(std::size_t i, std::size_t j) const { return (*data_)[i * cols() + j]; }
    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not scalar");
        return (*data_)[0];
    }

    bool tracked() const { return tape_ != nullptr; }
    int node() const { return node_; }
    Tape<T>* tape() const { return tape_; }

    static std::size_t numel_of(const Shape& s) {
        std::size_t n = 1;
        for (auto d : s) {
            if (d == 0) throw ShapeError("tensor: zero dimension in " + shape_str(s));
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

private:
    std::shared_ptr<std::vector<T>> data_;
    Shape shape_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;

    friend class Tape<T>;
};

// Reverse-mode tape. Single-writer: one forward pass records onto one tape,
// then backward() walks the records once in reverse order (creation order is
// topological by construction, so every node's inputs precede it).
template <typename T>
class Tape {
public:
    using BackFn = std::function<void(Tape&, int)>;  // (tape, own node id)

    Tensor<T> leaf(const Tensor<T>& value) {
        Tensor<T> out = value;  // shares data
        out.tape_ = this;
        out.node_ = add_node(value.numel(), nullptr);
        leaves_.push_back(out.node_);
        return out;
    }

    Tensor<T> track(Tensor<T> value, BackFn back) {
        value.tape_ = this;
        value.node_ = add_node(value.numel(), std::move(back));
        return value;
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    const std::vector<int>& leaf_ids() const { return leaves_; }

    // Accumulation buffer for node `id`; marks the node as reached.
    std::vector<T>& grad_buf(int id) {
        touched_[id] = true;
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].numel, T(0));
        return g;
    }
    const std::vector<T>& grad_out(int id) { return grad_buf(id); }

    void backward(const Tensor<T>& loss) {
        if (!loss.tracked() || loss.tape() != this)
            throw ValueError("backward: loss is not tracked on this tape");
        if (loss.numel() != 1)
            throw ValueError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        grads_.assign(nodes_.size(), {});
        touched_.assign(nodes_.size(), false);
        grad_buf(loss.node())[0] = T(1);
        for (int id = loss.node(); id >= 0; --id) {
            if (!touched_[static_cast<std::size_t>(id)]) continue;
            auto& fn = nodes_[static_cast<std::size_t>(id)].back;
            if (fn) fn(*this, id);
        }
        ran_ = true;
    }

    bool ran_backward() const { return ran_; }

    // Gradient of a node after backward(); zeros if the loss never reached it.
    std::vector<T> grad_of(const Tensor<T>& t) const {
        if (!ran_) throw ValueError("grad_of: backward has not run");
        if (!t.tracked() || t.tape() != this)
            throw ValueError("grad_of: tensor is not tracked on this tape");
        const auto& g = grads_[static_cast<std::size_t>(t.node())];
        if (g.empty()) return std::vector<T>(t.numel(), T(0));
        return g;
    }

private:
    struct Node {
        std::size_t numel;
        BackFn back;
    };

    int add_node(std::size_t numel, BackFn back) {
        nodes_.push_back(Node{numel, std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<int> leaves_;
    std::vector<std::vector<T>> grads_;
    std::vector<bool> touched_;
    bool ran_ = false;
};

namespace detail {

template <typename T>
Tape<T>* result_tape(std::initializer_list<const Tensor<T>*> ts) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : ts) {
        if (!t->tracked()) continue;
        if (tape && t->tape() != tape)
            throw ValueError("op: operands belong to different tapes");
        tape = t->tape();
    }
    return tape;
}

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn_acc(std::size_t m, std::size_t k, std::size_t n, const T* __restrict__ a,
                 const T* __restrict__ b, T* __restrict__ c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// c[m x n] += a'^T * b where a' is stored k x m
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* __restrict__ a,
                 const T* __restrict__ b, T* __restrict__ c) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T aip = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T  (b transposed into scratch so the inner
// loop stays contiguous and vectorizable)
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn_acc(m, k, n, a, bt.data(), c);
}

// Broadcast addressing as (row stride, col stride): full (cols, 1),
// scalar (0, 0), column vector (1, 0), row vector (0, 1).
struct BcastStride {
    std::size_t rs, cs;
};

inline BcastStride bcast_stride(std::size_t r, std::size_t c, std::size_t out_r,
                                std::size_t out_c, const char* op, const Shape& sa,
                                const Shape& sb) {
    if (r == out_r && c == out_c) return {c, 1};
    if (r == 1 && c == 1) return {0, 0};
    if (r == out_r && c == 1) return {1, 0};
    if (r == 1 && c == out_c) return {0, 1};
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sa) + " with " +
                     shape_str(sb));
}

}  // namespace detail

// ---------------------------------------------------------------- matmul ---

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> vals(m * n, T(0));
    detail::gemm_nn_acc(m, k, n, a.ptr(), b.ptr(), vals.data());
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a, &b});
    if (!tape) return out;
    return tape->track(out, [a, b, m, k, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        if (a.tracked())
            detail::gemm_nt_acc(m, n, k, g.data(), b.ptr(), tp.grad_buf(a.node()).data());
        if (b.tracked())
            detail::gemm_tn_acc(k, m, n, a.ptr(), g.data(), tp.grad_buf(b.node()).data());
    });
}

// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<T> vals(m * n, T(0));
    detail::gemm_nt_acc(m, k, n, a.ptr(), b.ptr(), vals.data());
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a, &b});
    if (!tape) return out;
    return tape->track(out, [a, b, m, k, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        if (a.tracked())
            detail::gemm_nn_acc(m, n, k, g.data(), b.ptr(), tp.grad_buf(a.node()).data());
        if (b.tracked())
            detail::gemm_tn_acc(n, m, k, g.data(), a.ptr(), tp.grad_buf(b.node()).data());
    });
}

// a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: inner dimensions disagree, " + shape_str(a.shape()) +
                         "^T x " + shape_str(b.shape()));
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    std::vector<T> vals(m * n, T(0));
    detail::gemm_tn_acc(m, k, n, a.ptr(), b.ptr(), vals.data());
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a, &b});
    if (!tape) return out;
    return tape->track(out, [a, b, m, k, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        if (a.tracked())
            detail::gemm_nt_acc(k, n, m, b.ptr(), g.data(), tp.grad_buf(a.node()).data());
        if (b.tracked())
            detail::gemm_nn_acc(k, m, n, a.ptr(), g.data(), tp.grad_buf(b.node()).data());
    });
}

// x W + b with the bias fused into the product kernel.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()) + " + " + shape_str(b.shape()));
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    std::vector<T> vals(m * n);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(b.ptr(), n, vals.data() + i * n);
    detail::gemm_nn_acc(m, k, n, x.ptr(), w.ptr(), vals.data());
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&x, &w, &b});
    if (!tape) return out;
    return tape->track(out, [x, w, b, m, k, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        if (x.tracked())
            detail::gemm_nt_acc(m, n, k, g.data(), w.ptr(), tp.grad_buf(x.node()).data());
        if (w.tracked())
            detail::gemm_tn_acc(k, m, n, x.ptr(), g.data(), tp.grad_buf(w.node()).data());
        if (b.tracked()) {
            auto& db = tp.grad_buf(b.node());
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> vals(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) vals[j * m + i] = a.ptr()[i * n + j];
    Tensor<T> out({n, m}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) da[i * n + j] += g[j * m + i];
    });
}

// ----------------------------------------------------- elementwise binary ---

namespace detail {

template <typename T, typename Fwd, typename BackA, typename BackB>
Tensor<T> ew_binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                    BackA back_a, BackB back_b) {
    const std::size_t out_r = std::max(a.rows(), b.rows());
    const std::size_t out_c = std::max(a.cols(), b.cols());
    const BcastStride sa = bcast_stride(a.rows(), a.cols(), out_r, out_c, name, a.shape(),
                                        b.shape());
    const BcastStride sb = bcast_stride(b.rows(), b.cols(), out_r, out_c, name, a.shape(),
                                        b.shape());
    std::vector<T> vals(out_r * out_c);
    {
        const T* pa = a.ptr();
        const T* pb = b.ptr();
        for (std::size_t i = 0; i < out_r; ++i) {
            const T* ra = pa + i * sa.rs;
            const T* rb = pb + i * sb.rs;
            T* ro = vals.data() + i * out_c;
            for (std::size_t j = 0; j < out_c; ++j) ro[j] = fwd(ra[j * sa.cs], rb[j * sb.cs]);
        }
    }
    Tensor<T> out({out_r, out_c}, std::move(vals));
    Tape<T>* tape = result_tape<T>({&a, &b});
    if (!tape) return out;
    return tape->track(
        out, [a, b, sa, sb, out_r, out_c, back_a, back_b](Tape<T>& tp, int self) {
            const auto& g = tp.grad_out(self);
            if (a.tracked()) {
                auto& da = tp.grad_buf(a.node());
                for (std::size_t i = 0; i < out_r; ++i)
                    for (std::size_t j = 0; j < out_c; ++j)
                        da[i * sa.rs + j * sa.cs] +=
                            back_a(g[i * out_c + j], a.ptr()[i * sa.rs + j * sa.cs],
                                   b.ptr()[i * sb.rs + j * sb.cs]);
            }
            if (b.tracked()) {
                auto& db = tp.grad_buf(b.node());
                for (std::size_t i = 0; i < out_r; ++i)
                    for (std::size_t j = 0; j < out_c; ++j)
                        db[i * sb.rs + j * sb.cs] +=
                            back_b(g[i * out_c + j], a.ptr()[i * sa.rs + j * sa.cs],
                                   b.ptr()[i * sb.rs + j * sb.cs]);
            }
        });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::ew_binary(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::ew_binary(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::ew_binary(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::ew_binary(
        "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
        [](T g, T x, T y) { return -g * x / (y * y); });
}

// Ties route the gradient to the first operand.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::ew_binary(
        "minimum", a, b, [](T x, T y) { return std::min(x, y); },
        [](T g, T x, T y) { return x <= y ? g : T(0); },
        [](T g, T x, T y) { return y < x ? g : T(0); });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::ew_binary(
        "maximum", a, b, [](T x, T y) { return std::max(x, y); },
        [](T g, T x, T y) { return x >= y ? g : T(0); },
        [](T g, T x, T y) { return y > x ? g : T(0); });
}

// ------------------------------------------------------ elementwise unary ---

namespace detail {

template <typename T, typename Fwd, typename Back>
Tensor<T> ew_unary(const Tensor<T>& a, Fwd fwd, Back back) {
    std::vector<T> vals(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) vals[i] = fwd(a.ptr()[i]);
    Tensor<T> out(a.shape(), std::move(vals));
    Tape<T>* tape = result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, back](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < a.numel(); ++i) da[i] += back(g[i], a.ptr()[i]);
    });
}

template <typename T>
T sigmoid_val(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return detail::ew_unary(
        a, [c](T x) { return c * x; }, [c](T g, T) { return c * g; });
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
    return detail::ew_unary(
        a, [c](T x) { return x + c; }, [](T g, T) { return g; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::ew_unary(
        a, [](T x) { return detail::sigmoid_val(x); },
        [](T g, T x) {
            const T s = detail::sigmoid_val(x);
            return g * s * (T(1) - s);
        });
}

// Exact Gaussian-CDF form: x * Phi(x), evaluated in the working precision.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    const T inv_sqrt2 = T(0.70710678118654752440);
    const T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::ew_unary(
        a,
        [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T g, T x) {
            const T phi = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            return g * (phi + x * pdf);
        });
}

template <typename T>
Tensor<T> exp_of(const Tensor<T>& a) {
    return detail::ew_unary(
        a, [](T x) { return std::exp(x); }, [](T g, T x) { return g * std::exp(x); });
}

template <typename T>
Tensor<T> log_of(const Tensor<T>& a) {
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (!(a.ptr()[i] > T(0)))
            throw NumericError("log: non-positive input " + std::to_string(double(a.ptr()[i])));
    return detail::ew_unary(
        a, [](T x) { return std::log(x); }, [](T g, T x) { return g / x; });
}

template <typename T>
Tensor<T> powc(const Tensor<T>& a, T p) {
    return detail::ew_unary(
        a, [p](T x) { return std::pow(x, p); },
        [p](T g, T x) { return g * p * std::pow(x, p - T(1)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return detail::ew_unary(
        a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](T g, T x) { return (x > lo && x < hi) ? g : T(0); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::ew_unary(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T g, T x) { return x > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

// Quadratic below beta, linear above.
template <typename T>
Tensor<T> huber(const Tensor<T>& a, T beta) {
    return detail::ew_unary(
        a,
        [beta](T x) {
            const T ax = std::abs(x);
            return ax < beta ? T(0.5) * x * x / beta : ax - T(0.5) * beta;
        },
        [beta](T g, T x) {
            if (std::abs(x) < beta) return g * x / beta;
            return x > T(0) ? g : -g;
        });
}

// ----------------------------------------------------------- row softmax ---

// mask: optional 0/1 validity tensor of the same shape (values only, never
// differentiated). Invalid entries are exact zeros in the output. Stabilized
// by row-max subtraction over valid entries.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Tensor<T>* mask = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    if (mask && (mask->rows() != m || mask->cols() != n))
        throw ShapeError("softmax_rows: mask shape " + shape_str(mask->shape()) +
                         " does not match input " + shape_str(x.shape()));
    std::vector<T> vals(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.ptr() + i * n;
        const T* mrow = mask ? mask->ptr() + i * n : nullptr;
        T mx = -std::numeric_limits<T>::infinity();
        std::size_t valid = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (mrow && mrow[j] == T(0)) continue;
            mx = std::max(mx, row[j]);
            ++valid;
        }
        if (mask && valid == 0)
            throw ValueError("softmax_rows: fully masked row " + std::to_string(i));
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            if (mrow && mrow[j] == T(0)) continue;
            const T e = std::exp(row[j] - mx);
            vals[i * n + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) vals[i * n + j] /= sum;
    }
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&x});
    if (!tape) return out;
    return tape->track(out, [x, out, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& dx = tp.grad_buf(x.node());
        const T* y = out.ptr();
        for (std::size_t i = 0; i < m; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                dx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
    });
}

// ------------------------------------------------------------- layer norm ---

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n)
        throw ShapeError("layer_norm: gain/bias length must equal trailing dim " +
                         std::to_string(n));
    std::vector<T> vals(m * n);
    auto xhat = std::make_shared<std::vector<T>>(m * n);
    auto inv_sd = std::make_shared<std::vector<T>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.ptr() + i * n;
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= T(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= T(n);
        const T isd = T(1) / std::sqrt(var + eps);
        (*inv_sd)[i] = isd;
        for (std::size_t j = 0; j < n; ++j) {
            const T h = (row[j] - mean) * isd;
            (*xhat)[i * n + j] = h;
            vals[i * n + j] = h * gain.ptr()[j] + bias.ptr()[j];
        }
    }
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&x, &gain, &bias});
    if (!tape) return out;
    return tape->track(out, [x, gain, bias, xhat, inv_sd, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        if (gain.tracked()) {
            auto& dg = tp.grad_buf(gain.node());
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dg[j] += g[i * n + j] * (*xhat)[i * n + j];
        }
        if (bias.tracked()) {
            auto& db = tp.grad_buf(bias.node());
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
        }
        if (x.tracked()) {
            auto& dx = tp.grad_buf(x.node());
            for (std::size_t i = 0; i < m; ++i) {
                T mean_gy = T(0), mean_gyx = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    const T gy = g[i * n + j] * gain.ptr()[j];
                    mean_gy += gy;
                    mean_gyx += gy * (*xhat)[i * n + j];
                }
                mean_gy /= T(n);
                mean_gyx /= T(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const T gy = g[i * n + j] * gain.ptr()[j];
                    dx[i * n + j] += (gy - mean_gy - (*xhat)[i * n + j] * mean_gyx) * (*inv_sd)[i];
                }
            }
        }
    });
}

// --------------------------------------------------------- concat / split ---

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.cols() != n)
            throw ShapeError("concat_rows: trailing dimension mismatch, " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        m += p.rows();
    }
    std::vector<T> vals;
    vals.reserve(m * n);
    for (const auto& p : parts) vals.insert(vals.end(), p.data().begin(), p.data().end());
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = nullptr;
    for (const auto& p : parts) {
        Tape<T>* t = detail::result_tape<T>({&p});
        if (t) {
            if (tape && t != tape) throw ValueError("concat_rows: parts on different tapes");
            tape = t;
        }
    }
    if (!tape) return out;
    return tape->track(out, [parts, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t len = p.rows() * n;
            if (p.tracked()) {
                auto& dp = tp.grad_buf(p.node());
                for (std::size_t i = 0; i < len; ++i) dp[i] += g[off + i];
            }
            off += len;
        }
    });
}

template <typename T>
std::vector<Tensor<T>> split_rows(const Tensor<T>& x, const std::vector<std::size_t>& lengths) {
    std::size_t total = 0;
    for (auto l : lengths) total += l;
    if (total != x.rows())
        throw ShapeError("split_rows: lengths sum to " + std::to_string(total) +
                         " but input has " + std::to_string(x.rows()) + " rows");
    const std::size_t n = x.cols();
    std::vector<Tensor<T>> outs;
    std::size_t off = 0;
    for (auto len : lengths) {
        std::vector<T> vals(x.data().begin() + off * n, x.data().begin() + (off + len) * n);
        Tensor<T> part({len, n}, std::move(vals));
        if (x.tracked()) {
            const std::size_t row_off = off;
            part = x.tape()->track(part, [x, row_off, len, n](Tape<T>& tp, int self) {
                const auto& g = tp.grad_out(self);
                auto& dx = tp.grad_buf(x.node());
                for (std::size_t i = 0; i < len * n; ++i) dx[row_off * n + i] += g[i];
            });
        }
        outs.push_back(std::move(part));
        off += len;
    }
    return outs;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.rows() != m)
            throw ShapeError("concat_cols: row count mismatch, " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        n += p.cols();
    }
    std::vector<T> vals(m * n);
    std::size_t coff = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
                vals[i * n + coff + j] = p.ptr()[i * p.cols() + j];
        coff += p.cols();
    }
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = nullptr;
    for (const auto& p : parts)
        if (p.tracked()) tape = p.tape();
    if (!tape) return out;
    return tape->track(out, [parts, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        std::size_t coff = 0;
        for (const auto& p : parts) {
            if (p.tracked()) {
                auto& dp = tp.grad_buf(p.node());
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p.cols(); ++j)
                        dp[i * p.cols() + j] += g[i * n + coff + j];
            }
            coff += p.cols();
        }
    });
}

template <typename T>
std::vector<Tensor<T>> split_cols(const Tensor<T>& x, const std::vector<std::size_t>& widths) {
    std::size_t total = 0;
    for (auto w : widths) total += w;
    if (total != x.cols())
        throw ShapeError("split_cols: widths sum to " + std::to_string(total) +
                         " but input has " + std::to_string(x.cols()) + " cols");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<Tensor<T>> outs;
    std::size_t coff = 0;
    for (auto w : widths) {
        std::vector<T> vals(m * w);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) vals[i * w + j] = x.ptr()[i * n + coff + j];
        Tensor<T> part({m, w}, std::move(vals));
        if (x.tracked()) {
            const std::size_t c0 = coff;
            part = x.tape()->track(part, [x, c0, w, m, n](Tape<T>& tp, int self) {
                const auto& g = tp.grad_out(self);
                auto& dx = tp.grad_buf(x.node());
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) dx[i * n + c0 + j] += g[i * w + j];
            });
        }
        outs.push_back(std::move(part));
        coff += w;
    }
    return outs;
}

// ------------------------------------------------------------- reductions ---

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.ptr()[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a](Tape<T>& tp, int self) {
        const T g = tp.grad_out(self)[0];
        auto& da = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < a.numel(); ++i) da[i] += g;
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> sum_cols(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> vals(m, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) vals[i] += a.ptr()[i * n + j];
    Tensor<T> out({m, 1}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[i];
    });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> vals(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) vals[j] += a.ptr()[i * n + j];
    for (std::size_t j = 0; j < n; ++j) vals[j] /= T(m);
    Tensor<T> out({1, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j] / T(m);
    });
}

template <typename T>
Tensor<T> row_select(const Tensor<T>& a, std::size_t row) {
    const std::size_t m = a.rows(), n = a.cols();
    if (row >= m) throw ShapeError("row_select: row " + std::to_string(row) + " out of range");
    std::vector<T> vals(a.data().begin() + row * n, a.data().begin() + (row + 1) * n);
    Tensor<T> out({1, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, row, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t j = 0; j < n; ++j) da[row * n + j] += g[j];
    });
}

template <typename T>
Tensor<T> diagonal(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m != n) throw ShapeError("diagonal: matrix " + shape_str(a.shape()) + " is not square");
    std::vector<T> vals(m);
    for (std::size_t i = 0; i < m; ++i) vals[i] = a.ptr()[i * n + i];
    Tensor<T> out({m, 1}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < m; ++i) da[i * n + i] += g[i];
    });
}

// Copies rows where mask is nonzero and writes exact +0.0 rows elsewhere;
// gradients flow only through kept rows.
template <typename T>
Tensor<T> zero_rows(const Tensor<T>& x, const Tensor<T>& keep) {
    const std::size_t m = x.rows(), n = x.cols();
    if (keep.rows() != m || keep.cols() != 1)
        throw ShapeError("zero_rows: mask " + shape_str(keep.shape()) + " does not match " +
                         std::to_string(m) + " rows");
    std::vector<T> vals(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        if (keep.ptr()[i] != T(0)) std::copy_n(x.ptr() + i * n, n, vals.data() + i * n);
    Tensor<T> out({m, n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&x});
    if (!tape) return out;
    return tape->track(out, [x, keep, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& dx = tp.grad_buf(x.node());
        for (std::size_t i = 0; i < m; ++i)
            if (keep.ptr()[i] != T(0))
                for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += g[i * n + j];
    });
}

// ------------------------------------------------------- lookup / upsample ---

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
    const std::size_t v = table.rows(), n = table.cols();
    std::vector<T> vals(ids.size() * n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v)
            throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range " +
                             std::to_string(v));
        std::copy_n(table.ptr() + ids[i] * n, n, vals.data() + i * n);
    }
    Tensor<T> out({ids.size(), n}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&table});
    if (!tape) return out;
    return tape->track(out, [table, ids, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& dt = tp.grad_buf(table.node());
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) dt[ids[i] * n + j] += g[i * n + j];
    });
}

// Nearest-neighbor upsample of a per-cell column vector laid out as an h x w
// grid, by integer factor f; output is (h*f * w*f) x 1 in row-major grid order.
template <typename T>
Tensor<T> nn_upsample(const Tensor<T>& a, std::size_t h, std::size_t w, std::size_t f) {
    if (a.rows() != h * w || a.cols() != 1)
        throw ShapeError("nn_upsample: expected " + std::to_string(h * w) + "x1, got " +
                         shape_str(a.shape()));
    const std::size_t oh = h * f, ow = w * f;
    std::vector<T> vals(oh * ow);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) vals[i * ow + j] = a.ptr()[(i / f) * w + (j / f)];
    Tensor<T> out({oh * ow, 1}, std::move(vals));
    Tape<T>* tape = detail::result_tape<T>({&a});
    if (!tape) return out;
    return tape->track(out, [a, h, w, f, oh, ow](Tape<T>& tp, int self) {
        const auto& g = tp.grad_out(self);
        auto& da = tp.grad_buf(a.node());
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) da[(i / f) * w + (j / f)] += g[i * ow + j];
    });
}

}  // namespace bare
