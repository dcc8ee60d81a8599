#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bare/gradcheck.hpp"
#include "bare/losses.hpp"

#include <cmath>
#include <random>

using namespace bare;

namespace {

Tensor<double> randn(Shape shape, std::uint64_t seed, double stdev = 1.0) {
    Tensor<double> t(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, stdev);
    for (auto& v : t.data_mut()) v = d(rng);
    return t;
}

LossConfig default_losses() { return LossConfig{}; }

}  // namespace

TEST_CASE("iou and giou on the worked example") {
    const Box a = Box::from_corners(0, 0, 2, 2);
    const Box b = Box::from_corners(1, 1, 3, 3);
    CHECK(box_iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(box_giou(a, b) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-12));
    auto loss = giou_loss(box_tensor<double>(a), b);
    CHECK(std::abs(loss.item() - 1.079365079365079) < 1e-6);
}

TEST_CASE("identical boxes give unit overlap and zero loss") {
    const Box a{0.5, 0.5, 0.2, 0.3};
    CHECK(box_iou(a, a) == doctest::Approx(1.0));
    CHECK(box_giou(a, a) == doctest::Approx(1.0));
    CHECK(giou_loss(box_tensor<double>(a), a).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("giou tends to -1 for far-separated boxes") {
    const Box a{0.0, 0.0, 1.0, 1.0};
    double prev = 1.0;
    for (double d : {5.0, 50.0, 500.0}) {
        const Box b{d, 0.0, 1.0, 1.0};
        CHECK(box_iou(a, b) == 0.0);
        const double g = box_giou(a, b);
        CHECK(g < prev);
        prev = g;
    }
    CHECK(prev < -0.99);
}

TEST_CASE("giou equals iou under containment and never exceeds it") {
    const Box outer{0.5, 0.5, 0.6, 0.6};
    const Box inner{0.5, 0.5, 0.2, 0.2};
    CHECK(box_giou(outer, inner) == doctest::Approx(box_iou(outer, inner)).epsilon(1e-12));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.2, 0.8), s(0.05, 0.4);
    for (int i = 0; i < 50; ++i) {
        const Box a{u(rng), u(rng), s(rng), s(rng)};
        const Box b{u(rng), u(rng), s(rng), s(rng)};
        CHECK(box_giou(a, b) <= box_iou(a, b) + 1e-12);
        CHECK(box_giou(a, b) > -1.0);
        CHECK(box_giou(a, b) <= 1.0);
    }
}

TEST_CASE("degenerate boxes are rejected") {
    const Box bad{0.5, 0.5, 0.0, 0.2};
    const Box good{0.5, 0.5, 0.2, 0.2};
    CHECK_THROWS_AS(box_iou(bad, good), ValueError);
    CHECK_THROWS_AS(giou_loss(box_tensor<double>(good), bad), ValueError);
    CHECK_THROWS_AS(
        giou_loss(Tensor<double>({1, 4}, {0.5, 0.5, -0.1, 0.2}), good), ValueError);
}

TEST_CASE("smooth l1 worked values") {
    const Box gt{0.5, 0.5, 0.2, 0.2};
    CHECK(smooth_l1_loss(box_tensor<double>(gt), gt, 1.0).item() == 0.0);

    Tensor<double> off_half({1, 4}, {1.0, 1.0, 0.7, 0.7});
    const Box gt2{0.5, 0.5, 0.2, 0.2};
    CHECK(smooth_l1_loss(off_half, gt2, 1.0).item() == doctest::Approx(0.125).epsilon(1e-12));

    Tensor<double> off_two({1, 4}, {2.5, 2.5, 2.2, 2.2});
    CHECK(smooth_l1_loss(off_two, gt2, 1.0).item() == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("ita degenerate batch is (numerically) zero") {
    auto v = randn({1, 6}, 11);
    auto t = randn({1, 6}, 12);
    auto loss = ita_loss(v, t, Tensor<double>::scalar(0.0));
    CHECK(std::abs(loss.item()) < 1e-6);
}

TEST_CASE("ita enumeration oracle at B=2") {
    Tensor<double> v({2, 2}, {1, 0, 0, 1});
    Tensor<double> t({2, 2}, {1, 0, 0, 1});
    auto loss = ita_loss(v, t, Tensor<double>::scalar(0.0));  // tau = 1
    CHECK(std::abs(loss.item() - std::log(1.0 + std::exp(-1.0))) < 1e-6);
}

TEST_CASE("ita is invariant to positive rescaling of a row") {
    auto v = randn({3, 5}, 21);
    auto t = randn({3, 5}, 22);
    auto base = ita_loss(v, t, Tensor<double>::scalar(0.7)).item();
    auto v2 = v;
    Tensor<double> scaled(v.shape(), v.data());
    for (std::size_t j = 0; j < 5; ++j) scaled.data_mut()[j] *= 37.5;
    auto rescaled = ita_loss(scaled, t, Tensor<double>::scalar(0.7)).item();
    CHECK(std::abs(base - rescaled) < 1e-12);
}

TEST_CASE("ita is symmetric under exchanging image and text") {
    auto v = randn({4, 6}, 31);
    auto t = randn({4, 6}, 32);
    auto ab = ita_loss(v, t, Tensor<double>::scalar(0.3)).item();
    auto ba = ita_loss(t, v, Tensor<double>::scalar(0.3)).item();
    CHECK(std::abs(ab - ba) < 1e-12);
}

TEST_CASE("ita rejects zero-norm rows") {
    Tensor<double> v({2, 3}, {0, 0, 0, 1, 0, 0});
    auto t = randn({2, 3}, 41);
    CHECK_THROWS_AS(ita_loss(v, t, Tensor<double>::scalar(0.0)), ValueError);
}

TEST_CASE("focal worked value and bce limit") {
    Tensor<double> p({1, 1}, {0.5});
    Tensor<double> g({1, 1}, {1.0});
    auto f = focal_loss(p, g, 2.0, 0.25);
    CHECK(std::abs(f.item() - 0.25 * 0.25 * std::log(2.0)) < 1e-6);

    // gamma = 0, alpha = 0.5 halves binary cross-entropy on every input
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor<double> probs({4, 1});
        Tensor<double> targets({4, 1});
        double bce = 0;
        for (int i = 0; i < 4; ++i) {
            probs.data_mut()[i] = u(rng);
            targets.data_mut()[i] = (rng() & 1) ? 1.0 : 0.0;
            const double pt =
                targets.data()[i] != 0.0 ? probs.data()[i] : 1.0 - probs.data()[i];
            bce += -std::log(pt) / 4.0;
        }
        auto f0 = focal_loss(probs, targets, 0.0, 0.5);
        CHECK(f0.item() == doctest::Approx(0.5 * bce).epsilon(1e-10));
    }
}

TEST_CASE("focal rejects probabilities outside [0,1]") {
    Tensor<double> g({1, 1}, {1.0});
    CHECK_THROWS_AS(focal_loss(Tensor<double>({1, 1}, {1.5}), g, 2.0, 0.25), ValueError);
    CHECK_THROWS_AS(focal_loss(Tensor<double>({1, 1}, {-0.1}), g, 2.0, 0.25), ValueError);
}

TEST_CASE("dice on perfect binary overlap is exactly zero") {
    Tensor<double> p({4, 1}, {1, 0, 1, 0});
    Tensor<double> g({4, 1}, {1, 0, 1, 0});
    CHECK(dice_loss(p, g, 1.0).item() == 0.0);
}

TEST_CASE("rta: orthogonal features sit at the sigmoid midpoint") {
    Tensor<double> t_eos({1, 2}, {1, 0});
    Tensor<double> v({2, 2}, {0, 1, 0, -1});
    std::vector<std::uint8_t> mask = {1, 0};
    // probe the probabilities through the loss at gamma=0, alpha=0.5:
    // focal = 0.5*BCE and BCE(0.5) = ln 2 for both entries
    LossConfig lc;
    lc.focal_gamma = 0;
    lc.focal_alpha = 0.5;
    lc.lambda_dice = 0;
    auto loss = rta_loss(t_eos, v, mask, Tensor<double>::scalar(10.0), lc);
    CHECK(loss.item() == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("rta matches a direct transcription") {
    auto t_eos = randn({1, 5}, 61);
    auto v = randn({4, 5}, 62);
    std::vector<std::uint8_t> mask = {1, 0, 0, 1};
    const double s_scale = 7.5;
    LossConfig lc = default_losses();
    auto loss = rta_loss(t_eos, v, mask, Tensor<double>::scalar(s_scale), lc);

    // independent recomputation
    auto norm_row = [](const std::vector<double>& row) {
        double ss = 0;
        for (double x : row) ss += x * x;
        std::vector<double> out;
        for (double x : row) out.push_back(x / std::sqrt(ss));
        return out;
    };
    std::vector<double> tn = norm_row(t_eos.data());
    double focal = 0, sum_p = 0, sum_pg = 0, sum_g = 0;
    for (int j = 0; j < 4; ++j) {
        std::vector<double> row(v.data().begin() + j * 5, v.data().begin() + (j + 1) * 5);
        auto vn = norm_row(row);
        double dot = 0;
        for (int k = 0; k < 5; ++k) dot += vn[k] * tn[k];
        const double s = 1.0 / (1.0 + std::exp(-s_scale * dot));
        const double pt = mask[j] ? s : 1.0 - s;
        const double at = mask[j] ? lc.focal_alpha : 1.0 - lc.focal_alpha;
        focal += -at * std::pow(1.0 - pt, lc.focal_gamma) * std::log(pt) / 4.0;
        sum_p += s;
        sum_pg += s * mask[j];
        sum_g += mask[j];
    }
    const double dice = 1.0 - (2 * sum_pg + lc.dice_eps) / (sum_p + sum_g + lc.dice_eps);
    CHECK(std::abs(loss.item() - (focal + dice)) < 1e-12);
}

TEST_CASE("pta upsampled map is constant on patch blocks") {
    auto v = randn({4, 3}, 71);
    auto w = randn({3, 1}, 72);
    auto b = Tensor<double>::scalar(0.1);
    auto probs = sigmoid(add(matmul(v, w), b));
    auto up = nn_upsample(probs, 2, 2, 4);  // 2x2 grid, factor 4 -> 8x8
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(up.data()[i * 8 + j] == probs.data()[(i / 4) * 2 + (j / 4)]);
}

TEST_CASE("pta matches a direct transcription") {
    auto v = randn({4, 3}, 81);
    auto w = randn({3, 1}, 82);
    const double bias = -0.2;
    LossConfig lc = default_losses();
    AlignTargets targets = box_to_masks(Box{0.5, 0.5, 0.5, 0.5}, 8, 4);
    auto loss = pta_loss(v, w, Tensor<double>::scalar(bias), targets, lc);

    double probs[4];
    for (int p = 0; p < 4; ++p) {
        double dot = bias;
        for (int k = 0; k < 3; ++k) dot += v.data()[p * 3 + k] * w.data()[k];
        probs[p] = 1.0 / (1.0 + std::exp(-dot));
    }
    double focal = 0, sum_p = 0, sum_pg = 0, sum_g = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const double pv = probs[(y / 4) * 2 + (x / 4)];
            const int gv = targets.pixel_mask[y * 8 + x];
            const double pt = gv ? pv : 1.0 - pv;
            const double at = gv ? lc.focal_alpha : 1.0 - lc.focal_alpha;
            focal += -at * std::pow(1.0 - pt, lc.focal_gamma) * std::log(pt) / 64.0;
            sum_p += pv;
            sum_pg += pv * gv;
            sum_g += gv;
        }
    const double dice = 1.0 - (2 * sum_pg + lc.dice_eps) / (sum_p + sum_g + lc.dice_eps);
    CHECK(std::abs(loss.item() - (focal + dice)) < 1e-12);
}

TEST_CASE("box masks: full-image box covers everything") {
    auto t = box_to_masks(Box{0.5, 0.5, 1.0, 1.0}, 64, 8);
    for (auto v : t.pixel_mask) CHECK(v == 1);
    for (auto v : t.patch_mask) CHECK(v == 1);
}

TEST_CASE("box masks: quarter box on a 64/8 grid selects the 2x2 center block") {
    auto t = box_to_masks(Box{0.5, 0.5, 0.25, 0.25}, 64, 8);
    std::size_t patches = 0;
    for (std::size_t gy = 0; gy < 8; ++gy)
        for (std::size_t gx = 0; gx < 8; ++gx)
            if (t.patch_mask[gy * 8 + gx]) {
                ++patches;
                CHECK(gx >= 3);
                CHECK(gx <= 4);
                CHECK(gy >= 3);
                CHECK(gy <= 4);
            }
    CHECK(patches == 4);
    std::size_t pixels = 0;
    for (auto v : t.pixel_mask) pixels += v;
    CHECK(pixels == 256);  // 16x16 pixel centers inside
}

TEST_CASE("patch mask equals the center rule applied independently") {
    std::mt19937_64 rng(91);
    std::uniform_real_distribution<double> u(0.2, 0.8), s(0.1, 0.5);
    for (int rep = 0; rep < 25; ++rep) {
        const Box b{u(rng), u(rng), s(rng), s(rng)};
        auto t = box_to_masks(b, 64, 8);
        for (std::size_t gy = 0; gy < 8; ++gy)
            for (std::size_t gx = 0; gx < 8; ++gx) {
                const double cx = (gx + 0.5) / 8.0, cy = (gy + 0.5) / 8.0;
                const bool inside =
                    std::abs(cx - b.cx) <= b.w / 2 && std::abs(cy - b.cy) <= b.h / 2;
                CHECK(t.patch_mask[gy * 8 + gx] == (inside ? 1 : 0));
            }
    }
}

TEST_CASE("loss gradients match finite differences") {
    // generic position: no corner ties, away from kinks
    const Box gt{0.45, 0.55, 0.3, 0.25};
    ParamStore<double> store;
    store.add("box", ParamCategory::base, Tensor<double>({1, 4}, {0.52, 0.48, 0.37, 0.33}));
    store.add("v_pool", ParamCategory::base, randn({3, 6}, 101));
    store.add("t_pool", ParamCategory::base, randn({3, 6}, 102));
    store.add("logit_scale", ParamCategory::base, Tensor<double>::scalar(1.2));
    store.add("t_eos", ParamCategory::base, randn({1, 6}, 103));
    store.add("v", ParamCategory::base, randn({4, 6}, 104));
    store.add("rta_scale", ParamCategory::base, Tensor<double>::scalar(5.0));
    store.add("pta_w", ParamCategory::base, randn({6, 1}, 105));
    store.add("pta_b", ParamCategory::base, Tensor<double>::scalar(0.2));
    LossConfig lc = default_losses();
    AlignTargets targets = box_to_masks(gt, 8, 4);

    auto report = finite_diff_check(
        store,
        [&](BoundParams<double>& p) {
            auto a = smooth_l1_loss(p("box"), gt, 1.0);
            auto b = giou_loss(p("box"), gt);
            auto c = ita_loss(p("v_pool"), p("t_pool"), p("logit_scale"));
            auto d = rta_loss(p("t_eos"), p("v"), targets.patch_mask, p("rta_scale"), lc);
            auto e = pta_loss(p("v"), p("pta_w"), p("pta_b"), targets, lc);
            return add(add(add(a, b), add(c, d)), e);
        },
        1e-5, 1e-5);
    INFO("max rel err " << report.max_rel_err);
    CHECK(report.pass);
}

TEST_CASE("total loss: breakdown sums to the total and gradients check out") {
    const Box gt1{0.4, 0.5, 0.3, 0.25};
    const Box gt2{0.6, 0.45, 0.2, 0.35};
    ParamStore<double> store;
    store.add("b1", ParamCategory::base, Tensor<double>({1, 4}, {0.45, 0.5, 0.35, 0.3}));
    store.add("b2", ParamCategory::base, Tensor<double>({1, 4}, {0.55, 0.5, 0.25, 0.3}));
    store.add("v1", ParamCategory::base, randn({4, 6}, 111));
    store.add("v2", ParamCategory::base, randn({4, 6}, 112));
    store.add("e1", ParamCategory::base, randn({1, 6}, 113));
    store.add("e2", ParamCategory::base, randn({1, 6}, 114));
    store.add("logit_scale", ParamCategory::base, Tensor<double>::scalar(1.0));
    store.add("rta_scale", ParamCategory::base, Tensor<double>::scalar(6.0));
    store.add("pta_w", ParamCategory::base, randn({6, 1}, 115));
    store.add("pta_b", ParamCategory::base, Tensor<double>::scalar(0.0));
    LossConfig lc = default_losses();

    auto build = [&](BoundParams<double>& p) {
        std::vector<SampleLossInput<double>> batch(2);
        batch[0] = SampleLossInput<double>{p("b1"),    gt1, p("v1"), p("e1"),
                                           mean_rows(p("v1")), box_to_masks(gt1, 8, 4)};
        batch[1] = SampleLossInput<double>{p("b2"),    gt2, p("v2"), p("e2"),
                                           mean_rows(p("v2")), box_to_masks(gt2, 8, 4)};
        return total_loss(batch, p("logit_scale"), p("rta_scale"), p("pta_w"), p("pta_b"), lc);
    };

    {
        BoundParams<double> p(store, nullptr);
        std::vector<SampleLossInput<double>> batch(2);
        batch[0] = SampleLossInput<double>{p("b1"),    gt1, p("v1"), p("e1"),
                                           mean_rows(p("v1")), box_to_masks(gt1, 8, 4)};
        batch[1] = SampleLossInput<double>{p("b2"),    gt2, p("v2"), p("e2"),
                                           mean_rows(p("v2")), box_to_masks(gt2, 8, 4)};
        LossBreakdown bd;
        auto loss =
            total_loss(batch, p("logit_scale"), p("rta_scale"), p("pta_w"), p("pta_b"), lc, &bd);
        CHECK(std::isfinite(loss.item()));
        CHECK(std::abs((bd.l1 + bd.giou + bd.ita + bd.rta + bd.pta) - bd.total) < 1e-9);
    }

    auto report = finite_diff_check(store, build, 1e-5, 1e-5);
    INFO("max rel err " << report.max_rel_err);
    CHECK(report.pass);
}

TEST_CASE("losses stay finite on randomized valid inputs") {
    std::mt19937_64 rng(121);
    std::uniform_real_distribution<double> u(0.15, 0.85), s(0.05, 0.5);
    LossConfig lc = default_losses();
    for (int rep = 0; rep < 30; ++rep) {
        const Box gt{u(rng), u(rng), s(rng), s(rng)};
        Tensor<double> pred({1, 4}, {u(rng), u(rng), s(rng), s(rng)});
        auto v = randn({16, 8}, 200 + rep, 3.0);
        auto e = randn({1, 8}, 300 + rep, 3.0);
        auto targets = box_to_masks(gt, 16, 4);
        double val =
            sample_loss(SampleLossInput<double>{pred, gt, v, e, mean_rows(v), targets},
                        randn({8, 1}, 400 + rep), Tensor<double>::scalar(0.0),
                        Tensor<double>::scalar(10.0), lc)
                .item();
        CHECK(std::isfinite(val));
    }
}
