#pragma once

// Visual bias correction: a prototype-guided decoupling branch over the
// visual tokens plus a language-guided debiasing branch, fused by residual
// addition. Applied inside the shared encoder at configured layers; the
// decoupled state threads across insertions.

#include "bare/attention.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace bare {

template <typename T>
struct VbcPieces {
    Tensor<T> prototypes;      // N x C, one per visual token
    Tensor<T> w_q, w_k, w_v;   // C x C decouple-branch projections
    Linear<T> mlp_up, mlp_down;  // visual query projection of the debias branch
    MhaParams<T> debias;         // cross attention: vision queries, text keys/values
};

template <typename T>
struct VbcState {
    Tensor<T> z;
    bool initialized = false;
    int writes = 0;
};

// Decoupled region features: prototypes added to the carried state attend to
// the current visual tokens (single-head, sqrt(C) scaling).
template <typename T>
Tensor<T> vbc_decouple(const Tensor<T>& z_prev, const Tensor<T>& f_v, const VbcPieces<T>& p,
                       std::vector<double>* attn_out = nullptr) {
    if (z_prev.rows() != f_v.rows() || p.prototypes.rows() != f_v.rows())
        throw ShapeError("vbc_decouple: state/prototypes must match the " +
                         std::to_string(f_v.rows()) + " visual tokens");
    const T inv_sqrt_c = T(1) / std::sqrt(T(f_v.cols()));
    auto q = matmul(add(z_prev, p.prototypes), p.w_q);
    auto k = matmul(f_v, p.w_k);
    auto a_v = softmax_rows(scale(matmul_nt(q, k), inv_sqrt_c));
    if (attn_out) attn_out->assign(a_v.data().begin(), a_v.data().end());
    return matmul(a_v, matmul(f_v, p.w_v));
}

// Language-guided branch: MLP-projected visual queries against the text
// stream; padded text keys receive zero weight.
template <typename T>
Tensor<T> vbc_debias(const Tensor<T>& f_v, const Tensor<T>& f_t, const Tensor<T>& text_mask_col,
                     const VbcPieces<T>& p) {
    auto q_in = feed_forward(f_v, p.mlp_up, p.mlp_down);
    return multi_head_attention(q_in, f_t, p.debias, &text_mask_col);
}

// Splits the joint sequence, runs both branches, fuses them into the new
// state, and reassembles with the text rows untouched.
template <typename T>
Tensor<T> vbc_forward(const Tensor<T>& x, std::size_t n_visual, std::size_t m_text,
                      VbcState<T>& state, const VbcPieces<T>& p, const Tensor<T>& text_mask_col,
                      std::vector<double>* attn_out = nullptr) {
    if (x.rows() != n_visual + m_text)
        throw ShapeError("vbc_forward: split lengths " + std::to_string(n_visual) + "+" +
                         std::to_string(m_text) + " do not cover " + std::to_string(x.rows()) +
                         " rows");
    auto parts = split_rows(x, {n_visual, m_text});
    const auto& f_v = parts[0];
    const auto& f_t = parts[1];
    const Tensor<T>& z_prev = state.initialized ? state.z : f_v;
    auto decoupled = vbc_decouple(z_prev, f_v, p, attn_out);
    auto debiased = vbc_debias(f_v, f_t, text_mask_col, p);
    state.z = add(decoupled, debiased);
    state.initialized = true;
    state.writes += 1;
    return concat_rows<T>({state.z, f_t});
}

}  // namespace bare
