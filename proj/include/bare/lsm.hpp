#pragma once

// Language salience modulator: a projection into a normalized gate space,
// dual per-token sigmoid gates (salience and debias), a learnable shared bias
// prior, and convex interpolation back toward the original embedding.

#include "bare/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace bare {

template <typename T>
struct LsmPieces {
    Tensor<T> w_h;                // C x C projection
    Tensor<T> ln_gain, ln_bias;   // 1 x C
    Tensor<T> w_r;                // C x 1 salience gate
    Tensor<T> w_b;                // C x 1 debias gate
    Tensor<T> l_bias;             // M_max x C shared prior
    Tensor<T> alpha_raw;          // 1 x 1, constrained to (0,1) through sigmoid
    Tensor<T> lambda;             // 1 x 1
    T ln_eps = T(1e-5);
};

// mask_col: M_max x 1 validity column. Padded rows pass through as exact
// zeros.
template <typename T>
Tensor<T> lsm_forward(const Tensor<T>& f_t, const Tensor<T>& mask_col, const LsmPieces<T>& p) {
    if (f_t.rows() != p.l_bias.rows())
        throw ShapeError("lsm: bias prior has " + std::to_string(p.l_bias.rows()) +
                         " rows, input has " + std::to_string(f_t.rows()));
    auto h_t = layer_norm(matmul(f_t, p.w_h), p.ln_gain, p.ln_bias, p.ln_eps);
    auto r_gate = sigmoid(matmul(h_t, p.w_r));   // M x 1, broadcast over channels
    auto b_gate = sigmoid(matmul(h_t, p.w_b));
    auto f_deb = sub(mul(r_gate, h_t), mul(p.lambda, mul(b_gate, p.l_bias)));
    auto out = add(f_t, mul(sigmoid(p.alpha_raw), sub(f_deb, f_t)));
    return zero_rows(out, mask_col);
}

struct LsmGateRecord {
    std::size_t position = 0;
    bool padded = false;
    double salience = 0;  // r
    double debias = 0;    // b
    double weight = 0;    // ||out|| / ||in||, 0 for padded rows by convention
};

// Per-token gate activity for diagnostics; recomputes the forward without a
// tape and reports the per-token L2 in/out ratio.
template <typename T>
std::vector<LsmGateRecord> lsm_gate_dump(const Tensor<T>& f_t, const Tensor<T>& mask_col,
                                         const LsmPieces<T>& p) {
    auto h_t = layer_norm(matmul(f_t, p.w_h), p.ln_gain, p.ln_bias, p.ln_eps);
    auto r_gate = sigmoid(matmul(h_t, p.w_r));
    auto b_gate = sigmoid(matmul(h_t, p.w_b));
    auto out = lsm_forward(f_t, mask_col, p);
    const std::size_t m = f_t.rows(), c = f_t.cols();
    std::vector<LsmGateRecord> records(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto& rec = records[i];
        rec.position = i;
        rec.padded = mask_col.ptr()[i] == T(0);
        rec.salience = double(r_gate.ptr()[i]);
        rec.debias = double(b_gate.ptr()[i]);
        if (!rec.padded) {
            double nin = 0, nout = 0;
            for (std::size_t j = 0; j < c; ++j) {
                nin += double(f_t.ptr()[i * c + j]) * double(f_t.ptr()[i * c + j]);
                nout += double(out.ptr()[i * c + j]) * double(out.ptr()[i * c + j]);
            }
            rec.weight = nin > 0 ? std::sqrt(nout / nin) : 0.0;
        }
    }
    return records;
}

}  // namespace bare
