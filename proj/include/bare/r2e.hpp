#pragma once

// Referential relationship enhancement: refines the text stream against
// weighted, MLP-projected visual evidence. Text self-attention models
// inter-word dependencies; cross attention from the refined text onto the
// visual tokens is fused back by residual addition. Visual rows pass through.

#include "bare/attention.hpp"

#include <vector>

namespace bare {

template <typename T>
struct R2ePieces {
    Tensor<T> w_v;               // N x C feature-wise visual weight
    Linear<T> mlp_up, mlp_down;  // projection into the attention space
    MhaParams<T> self_attn;      // over text
    MhaParams<T> cross_attn;     // text queries, visual keys/values
};

// w_v (.) F_v + F_v, before any projection.
template <typename T>
Tensor<T> r2e_weighted_residual(const Tensor<T>& f_v, const Tensor<T>& w_v) {
    if (w_v.rows() != f_v.rows() || w_v.cols() != f_v.cols())
        throw ShapeError("r2e: weight " + shape_str(w_v.shape()) + " does not match features " +
                         shape_str(f_v.shape()));
    return add(mul(w_v, f_v), f_v);
}

template <typename T>
Tensor<T> r2e_visual_refine(const Tensor<T>& f_v, const R2ePieces<T>& p) {
    return feed_forward(r2e_weighted_residual(f_v, p.w_v), p.mlp_up, p.mlp_down);
}

template <typename T>
Tensor<T> r2e_forward(const Tensor<T>& x, std::size_t n_visual, std::size_t m_text,
                      const Tensor<T>& text_mask_col, const R2ePieces<T>& p,
                      std::vector<double>* cross_attn_out = nullptr) {
    if (x.rows() != n_visual + m_text)
        throw ShapeError("r2e_forward: split lengths " + std::to_string(n_visual) + "+" +
                         std::to_string(m_text) + " do not cover " + std::to_string(x.rows()) +
                         " rows");
    auto parts = split_rows(x, {n_visual, m_text});
    const auto& f_v = parts[0];
    const auto& f_t = parts[1];
    auto t_ref = zero_rows(multi_head_attention(f_t, f_t, p.self_attn, &text_mask_col),
                           text_mask_col);
    auto visual = r2e_visual_refine(f_v, p);
    auto t_deb = multi_head_attention(t_ref, visual, p.cross_attn,
                                      static_cast<const Tensor<T>*>(nullptr), cross_attn_out);
    auto t_out = zero_rows(add(t_ref, t_deb), text_mask_col);
    return concat_rows<T>({f_v, t_out});
}

}  // namespace bare
