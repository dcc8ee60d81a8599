#pragma once

// Linear layers (optionally with a low-rank delta) and multi-head attention.

#include "bare/tensor.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace bare {

// y = x W + b, plus scale * (x A^T) B^T when a low-rank adapter is attached.
// A is r x in, B is out x r; B starts at zero so a fresh adapter is exact.
template <typename T>
struct Linear {
    Tensor<T> w;  // in x out
    Tensor<T> b;  // 1 x out
    std::optional<std::pair<Tensor<T>, Tensor<T>>> lora;  // (A, B)
    T lora_scale = T(0);

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto y = linear(x, w, b);
        if (lora)
            y = add(y, scale(matmul_nt(matmul_nt(x, lora->first), lora->second), lora_scale));
        return y;
    }
};

template <typename T>
struct MhaParams {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;
};

// Scaled dot-product attention over h heads. key_keep, when given, is a
// column of 0/1 over the kv rows; masked keys receive exactly zero weight.
// attn_mean, when given, receives the head-averaged attention probabilities
// as plain values (q_rows x kv_rows).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const MhaParams<T>& p, const Tensor<T>* key_keep = nullptr,
                               std::vector<double>* attn_mean = nullptr) {
    const std::size_t c = q_in.cols();
    if (c % p.heads != 0)
        throw ShapeError("attention: dim " + std::to_string(c) + " not divisible by " +
                         std::to_string(p.heads) + " heads");
    const std::size_t d = c / p.heads;
    const std::size_t m = q_in.rows(), n = kv_in.rows();
    if (key_keep && (key_keep->rows() != n || key_keep->cols() != 1))
        throw ShapeError("attention: key mask " + shape_str(key_keep->shape()) +
                         " does not match " + std::to_string(n) + " keys");

    auto q = p.q(q_in);
    auto k = p.k(kv_in);
    auto v = p.v(kv_in);
    std::vector<std::size_t> widths(p.heads, d);
    auto qh = split_cols(q, widths);
    auto kh = split_cols(k, widths);
    auto vh = split_cols(v, widths);

    std::optional<Tensor<T>> mask;
    if (key_keep) {
        Tensor<T> expanded({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                expanded.ptr_mut()[i * n + j] = key_keep->ptr()[j];
        mask = std::move(expanded);
    }

    if (attn_mean) attn_mean->assign(m * n, 0.0);
    std::vector<Tensor<T>> outs;
    const T inv_sqrt_d = T(1) / std::sqrt(T(d));
    for (std::size_t h = 0; h < p.heads; ++h) {
        auto scores = scale(matmul_nt(qh[h], kh[h]), inv_sqrt_d);
        auto probs = softmax_rows(scores, mask ? &*mask : nullptr);
        if (attn_mean)
            for (std::size_t i = 0; i < m * n; ++i)
                (*attn_mean)[i] += double(probs.ptr()[i]) / double(p.heads);
        outs.push_back(matmul(probs, vh[h]));
    }
    return p.o(concat_cols(outs));
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const Linear<T>& up, const Linear<T>& down) {
    return down(gelu(up(x)));
}

}  // namespace bare
