#pragma once

// Training objectives: coordinate losses (smooth L1 + GIoU), image-text
// alignment, region-text alignment, pixel-text alignment, and their
// composition. Everything differentiable runs through the tape ops.

#include "bare/box.hpp"
#include "bare/config.hpp"
#include "bare/tensor.hpp"

#include <cstdint>
#include <vector>

namespace bare {

// ------------------------------------------------------------ box targets ---

struct AlignTargets {
    std::size_t grid = 0;    // patches per side
    std::size_t raster = 0;  // pixels per side
    std::vector<std::uint8_t> patch_mask;  // grid*grid, row-major
    std::vector<std::uint8_t> pixel_mask;  // raster*raster, row-major
};

// Center rule on both levels: a cell belongs to the mask iff its center lies
// inside the box (inclusive bounds).
inline AlignTargets box_to_masks(const Box& box, std::size_t raster, std::size_t patch) {
    require_valid(box, "box_to_masks");
    if (raster % patch != 0)
        throw ShapeError("box_to_masks: raster " + std::to_string(raster) +
                         " not divisible by patch " + std::to_string(patch));
    AlignTargets t;
    t.raster = raster;
    t.grid = raster / patch;
    t.pixel_mask.assign(raster * raster, 0);
    t.patch_mask.assign(t.grid * t.grid, 0);
    auto inside = [&](double nx, double ny) {
        return std::abs(nx - box.cx) <= box.w / 2 && std::abs(ny - box.cy) <= box.h / 2;
    };
    for (std::size_t y = 0; y < raster; ++y)
        for (std::size_t x = 0; x < raster; ++x)
            t.pixel_mask[y * raster + x] =
                inside((x + 0.5) / raster, (y + 0.5) / raster) ? 1 : 0;
    for (std::size_t gy = 0; gy < t.grid; ++gy)
        for (std::size_t gx = 0; gx < t.grid; ++gx)
            t.patch_mask[gy * t.grid + gx] =
                inside((gx + 0.5) / t.grid, (gy + 0.5) / t.grid) ? 1 : 0;
    return t;
}

template <typename T>
Tensor<T> mask_tensor(const std::vector<std::uint8_t>& mask) {
    Tensor<T> t({mask.size(), 1});
    for (std::size_t i = 0; i < mask.size(); ++i) t.ptr_mut()[i] = T(mask[i]);
    return t;
}

template <typename T>
Tensor<T> box_tensor(const Box& b) {
    return Tensor<T>({1, 4}, {T(b.cx), T(b.cy), T(b.w), T(b.h)});
}

// ------------------------------------------------------- coordinate losses ---

// Mean Huber over the four normalized coordinates.
template <typename T>
Tensor<T> smooth_l1_loss(const Tensor<T>& pred, const Box& gt, T beta) {
    if (pred.rows() != 1 || pred.cols() != 4)
        throw ShapeError("smooth_l1_loss: expected 1x4 box, got " + shape_str(pred.shape()));
    require_valid(gt, "smooth_l1_loss");
    return mean_all(huber(sub(pred, box_tensor<T>(gt)), beta));
}

// 1 - GIoU on corner form; pred is (cx, cy, w, h).
template <typename T>
Tensor<T> giou_loss(const Tensor<T>& pred, const Box& gt) {
    if (pred.rows() != 1 || pred.cols() != 4)
        throw ShapeError("giou_loss: expected 1x4 box, got " + shape_str(pred.shape()));
    require_valid(gt, "giou_loss");
    if (!(pred.data()[2] > T(0)) || !(pred.data()[3] > T(0)))
        throw ValueError("giou_loss: degenerate predicted box");

    auto parts = split_cols(pred, {1, 1, 1, 1});
    auto& cx = parts[0];
    auto& cy = parts[1];
    auto half_w = scale(parts[2], T(0.5));
    auto half_h = scale(parts[3], T(0.5));
    auto px1 = sub(cx, half_w), px2 = add(cx, half_w);
    auto py1 = sub(cy, half_h), py2 = add(cy, half_h);

    auto gx1 = Tensor<T>::scalar(T(gt.x1())), gx2 = Tensor<T>::scalar(T(gt.x2()));
    auto gy1 = Tensor<T>::scalar(T(gt.y1())), gy2 = Tensor<T>::scalar(T(gt.y2()));

    auto iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)));
    auto ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)));
    auto inter = mul(iw, ih);
    auto area_p = mul(parts[2], parts[3]);
    auto uni = sub(add_const(area_p, T(gt.w * gt.h)), inter);
    auto ew = sub(maximum(px2, gx2), minimum(px1, gx1));
    auto eh = sub(maximum(py2, gy2), minimum(py1, gy1));
    auto enclose = mul(ew, eh);
    auto giou = sub(div(inter, uni), div(sub(enclose, uni), enclose));
    return add_const(neg(giou), T(1));
}

// --------------------------------------------------------------- alignment ---

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
        T ss = T(0);
        for (std::size_t j = 0; j < n; ++j) ss += x.ptr()[i * n + j] * x.ptr()[i * n + j];
        if (!(ss > T(1e-24)))
            throw ValueError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    }
    return mul(x, powc(sum_cols(mul(x, x)), T(-0.5)));
}

inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

// Symmetric temperature-scaled contrastive loss over pooled batch rows.
// logit_scale is the learnable log of 1/tau.
template <typename T>
Tensor<T> ita_loss(const Tensor<T>& v_pool, const Tensor<T>& t_pool,
                   const Tensor<T>& logit_scale) {
    if (v_pool.rows() != t_pool.rows() || v_pool.cols() != t_pool.cols())
        throw ShapeError("ita_loss: pooled shapes disagree, " + shape_str(v_pool.shape()) +
                         " vs " + shape_str(t_pool.shape()));
    if (v_pool.rows() < 1) throw ShapeError("ita_loss: empty batch");
    auto vn = l2_normalize_rows(v_pool);
    auto tn = l2_normalize_rows(t_pool);
    auto logits = mul(matmul_nt(tn, vn), exp_of(logit_scale));  // rows: text anchors
    auto pick = [](const Tensor<T>& lg) {
        return neg(mean_all(
            log_of(clamp(diagonal(softmax_rows(lg)), T(kProbClampLo), T(kProbClampHi)))));
    };
    auto t2i = pick(logits);
    auto i2t = pick(transpose(logits));
    return scale(add(t2i, i2t), T(0.5));
}

// Mean of -alpha_t * (1 - p_t)^gamma * log(p_t). Probabilities are clamped
// away from {0, 1} before powers and logs; values outside [0, 1] are a
// domain error.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& p, const Tensor<T>& g, T gamma, T alpha_bal) {
    if (p.rows() != g.rows() || p.cols() != g.cols())
        throw ShapeError("focal_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(g.shape()));
    for (std::size_t i = 0; i < p.numel(); ++i)
        if (!(p.ptr()[i] >= T(0)) || !(p.ptr()[i] <= T(1)))
            throw ValueError("focal_loss: probability outside [0,1]: " +
                             std::to_string(double(p.ptr()[i])));
    auto ones = Tensor<T>::constant(p.shape(), T(1));
    // p_t = p where g=1, 1-p where g=0
    auto pt = clamp(add(mul(p, g), mul(sub(ones, p), sub(ones, g))), T(kProbClampLo),
                    T(kProbClampHi));
    Tensor<T> alpha_t(p.shape());
    for (std::size_t i = 0; i < p.numel(); ++i)
        alpha_t.ptr_mut()[i] = g.ptr()[i] != T(0) ? alpha_bal : T(1) - alpha_bal;
    auto mod = powc(sub(ones, pt), gamma);
    return neg(mean_all(mul(alpha_t, mul(mod, log_of(pt)))));
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& g, T eps) {
    if (p.rows() != g.rows() || p.cols() != g.cols())
        throw ShapeError("dice_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(g.shape()));
    T sum_g = T(0);
    for (std::size_t i = 0; i < g.numel(); ++i) sum_g += g.ptr()[i];
    auto num = add_const(scale(sum_all(mul(p, g)), T(2)), eps);
    auto den = add_const(sum_all(p), sum_g + eps);
    return add_const(neg(div(num, den)), T(1));
}

// Region-text alignment: cosine of the normalized [EOS] feature against each
// normalized patch feature, through a learnable pre-sigmoid scale, optimized
// with focal + dice against the patch-grid box mask.
template <typename T>
Tensor<T> rta_loss(const Tensor<T>& t_eos, const Tensor<T>& v_patches,
                   const std::vector<std::uint8_t>& patch_mask, const Tensor<T>& sigmoid_scale,
                   const LossConfig& lc) {
    if (t_eos.rows() != 1 || t_eos.cols() != v_patches.cols())
        throw ShapeError("rta_loss: eos feature " + shape_str(t_eos.shape()) +
                         " incompatible with patches " + shape_str(v_patches.shape()));
    if (patch_mask.size() != v_patches.rows())
        throw ShapeError("rta_loss: mask has " + std::to_string(patch_mask.size()) +
                         " entries for " + std::to_string(v_patches.rows()) + " patches");
    auto sims = matmul_nt(l2_normalize_rows(v_patches), l2_normalize_rows(t_eos));  // Nx1
    auto s = sigmoid(mul(sims, sigmoid_scale));
    auto g = mask_tensor<T>(patch_mask);
    return add(scale(focal_loss(s, g, T(lc.focal_gamma), T(lc.focal_alpha)), T(lc.lambda_focal)),
               scale(dice_loss(s, g, T(lc.dice_eps)), T(lc.lambda_dice)));
}

// Pixel-text alignment: learned per-patch scalar projection + sigmoid,
// nearest-neighbor upsampled to raster resolution, focal + dice against the
// pixel box mask.
template <typename T>
Tensor<T> pta_loss(const Tensor<T>& v_patches, const Tensor<T>& proj_w, const Tensor<T>& proj_b,
                   const AlignTargets& targets, const LossConfig& lc) {
    const std::size_t n = v_patches.rows();
    if (targets.grid * targets.grid != n)
        throw ShapeError("pta_loss: " + std::to_string(n) + " patches do not form a " +
                         std::to_string(targets.grid) + "-wide grid");
    const std::size_t factor = targets.raster / targets.grid;
    auto probs = sigmoid(add(matmul(v_patches, proj_w), proj_b));
    auto m_v = nn_upsample(probs, targets.grid, targets.grid, factor);
    auto g = mask_tensor<T>(targets.pixel_mask);
    return add(
        scale(focal_loss(m_v, g, T(lc.focal_gamma), T(lc.focal_alpha)), T(lc.lambda_focal)),
        scale(dice_loss(m_v, g, T(lc.dice_eps)), T(lc.lambda_dice)));
}

// -------------------------------------------------------------- composition ---

template <typename T>
struct SampleLossInput {
    Tensor<T> box_pred;   // 1x4
    Box gt;
    Tensor<T> v_patches;  // NxC visual rows of the encoder output
    Tensor<T> t_eos;      // 1xC [EOS] row of the encoder output
    Tensor<T> v_pool;     // 1xC pooled visual feature
    AlignTargets targets;
};

struct LossBreakdown {
    double total = 0, l1 = 0, giou = 0, ita = 0, rta = 0, pta = 0;
};

// Per-sample part of the objective (everything except the batch-level ITA),
// with the lambda weights already applied.
template <typename T>
Tensor<T> sample_loss(const SampleLossInput<T>& s, const Tensor<T>& pta_w, const Tensor<T>& pta_b,
                      const Tensor<T>& rta_scale, const LossConfig& lc, double* l1_out = nullptr,
                      double* giou_out = nullptr, double* rta_out = nullptr,
                      double* pta_out = nullptr) {
    auto l1 = scale(smooth_l1_loss(s.box_pred, s.gt, T(lc.smooth_l1_beta)), T(lc.lambda_l1));
    auto gi = scale(giou_loss(s.box_pred, s.gt), T(lc.lambda_giou));
    auto rta = rta_loss(s.t_eos, s.v_patches, s.targets.patch_mask, rta_scale, lc);
    auto pta = pta_loss(s.v_patches, pta_w, pta_b, s.targets, lc);
    if (l1_out) *l1_out = double(l1.item());
    if (giou_out) *giou_out = double(gi.item());
    if (rta_out) *rta_out = double(rta.item());
    if (pta_out) *pta_out = double(pta.item());
    return add(add(l1, gi), add(rta, pta));
}

// Full objective on one tape: batch mean of the per-sample losses plus the
// batch-level contrastive term. Reports the weighted per-term breakdown.
template <typename T>
Tensor<T> total_loss(const std::vector<SampleLossInput<T>>& batch, const Tensor<T>& logit_scale,
                     const Tensor<T>& rta_scale, const Tensor<T>& pta_w, const Tensor<T>& pta_b,
                     const LossConfig& lc, LossBreakdown* breakdown = nullptr) {
    if (batch.empty()) throw ShapeError("total_loss: empty batch");
    const T inv_b = T(1) / T(batch.size());
    Tensor<T> acc;
    LossBreakdown bd;
    std::vector<Tensor<T>> v_rows, t_rows;
    for (const auto& s : batch) {
        double l1 = 0, gi = 0, rta = 0, pta = 0;
        auto piece = sample_loss(s, pta_w, pta_b, rta_scale, lc, &l1, &gi, &rta, &pta);
        bd.l1 += l1 / double(batch.size());
        bd.giou += gi / double(batch.size());
        bd.rta += rta / double(batch.size());
        bd.pta += pta / double(batch.size());
        acc = acc.numel() ? add(acc, piece) : piece;
        v_rows.push_back(s.v_pool);
        t_rows.push_back(s.t_eos);
    }
    auto ita = ita_loss(concat_rows(v_rows), concat_rows(t_rows), logit_scale);
    bd.ita = double(ita.item());
    auto total = add(scale(acc, inv_b), ita);
    bd.total = double(total.item());
    if (breakdown) *breakdown = bd;
    return total;
}

}  // namespace bare
