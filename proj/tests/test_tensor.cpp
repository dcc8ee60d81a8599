#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bare/gradcheck.hpp"
#include "bare/tensor.hpp"

#include <cmath>
#include <random>

using namespace bare;

namespace {

Tensor<double> randn64(Shape shape, std::uint64_t seed, double stdev = 1.0) {
    Tensor<double> t(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, stdev);
    for (auto& v : t.data_mut()) v = d(rng);
    return t;
}

Tensor<float> randn32(Shape shape, std::uint64_t seed, float stdev = 1.0f) {
    Tensor<float> t(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, stdev);
    for (auto& v : t.data_mut()) v = static_cast<float>(d(rng));
    return t;
}

// Checks d(sum(op_output * weights))/d(param) against central differences for
// every parameter fed to `build`.
void check_op_grads(const char* what,
                    std::vector<std::pair<std::string, Tensor<double>>> inputs,
                    std::function<Tensor<double>(BoundParams<double>&)> build,
                    double tol = 1e-5) {
    ParamStore<double> store;
    for (auto& [name, value] : inputs) store.add(name, ParamCategory::base, value);
    auto report = finite_diff_check(store, build, 1e-5, tol);
    INFO(what << " max rel err " << report.max_rel_err);
    CHECK(report.pass);
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<double> a = randn64({3, 4}, 11);
    auto out = matmul(eye, a);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("matmul forced arithmetic") {
    Tensor<double> a({2, 2}, {1, 2, 3, 4});
    Tensor<double> b({2, 1}, {1, 1});
    auto out = matmul(a, b);
    CHECK(out.at(0, 0) == 3.0);
    CHECK(out.at(1, 0) == 7.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    auto a = randn64({4, 5}, 21);
    auto b = randn64({5, 3}, 22);
    auto out = matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < 5; ++p) acc += a.at(i, p) * b.at(p, j);
            CHECK(std::abs(out.at(i, j) - acc) < 1e-12);
        }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor<double> a({2, 3});
    Tensor<double> b({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul transposed variants match the plain product") {
    auto a = randn64({4, 6}, 31);
    auto b = randn64({6, 5}, 32);
    auto ref = matmul(a, b);
    auto via_nt = matmul_nt(a, transpose(b));
    auto via_tn = matmul_tn(transpose(a), b);
    for (std::size_t i = 0; i < ref.numel(); ++i) {
        CHECK(std::abs(via_nt.data()[i] - ref.data()[i]) < 1e-12);
        CHECK(std::abs(via_tn.data()[i] - ref.data()[i]) < 1e-12);
    }
}

TEST_CASE("softmax of equal values is uniform") {
    Tensor<double> x({1, 4}, {2.5, 2.5, 2.5, 2.5});
    auto y = softmax_rows(x);
    for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("softmax of a single column is all ones") {
    auto x = randn64({5, 1}, 41);
    auto y = softmax_rows(x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(y.at(i, 0) == 1.0);
}

TEST_CASE("softmax matches direct exp/sum oracle") {
    Tensor<double> x({1, 3}, {1, 2, 3});
    auto y = softmax_rows(x);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(std::abs(y.at(0, j) - std::exp(1.0 + j) / z) < 1e-12);
}

TEST_CASE("softmax row sums within dtype tolerance") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x64 = randn64({6, 9}, 100 + seed, 3.0);
        auto y64 = softmax_rows(x64);
        auto x32 = randn32({6, 9}, 100 + seed, 3.0f);
        auto y32 = softmax_rows(x32);
        for (std::size_t i = 0; i < 6; ++i) {
            double s64 = 0.0;
            float s32 = 0.0f;
            for (std::size_t j = 0; j < 9; ++j) {
                s64 += y64.at(i, j);
                s32 += y32.at(i, j);
            }
            CHECK(std::abs(s64 - 1.0) < 1e-12);
            CHECK(std::abs(double(s32) - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("masked softmax zeros invalid entries and rejects empty rows") {
    Tensor<double> x({2, 3}, {5, 1, 2, 3, 4, 5});
    Tensor<double> mask({2, 3}, {1, 0, 1, 1, 1, 1});
    auto y = softmax_rows(x, &mask);
    CHECK(y.at(0, 1) == 0.0);
    CHECK(y.at(0, 0) + y.at(0, 2) == doctest::Approx(1.0).epsilon(1e-14));

    Tensor<double> none({2, 3}, {1, 0, 1, 0, 0, 0});
    CHECK_THROWS_AS(softmax_rows(x, &none), ValueError);
}

TEST_CASE("layer norm constant row collapses to bias") {
    Tensor<double> x({1, 4}, {7, 7, 7, 7});
    auto gain = Tensor<double>::constant({1, 4}, 1.0);
    auto bias = Tensor<double>::constant({1, 4}, 0.0);
    auto y = layer_norm(x, gain, bias, 1e-5);
    for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == 0.0);
}

TEST_CASE("layer norm two-point row") {
    Tensor<double> x({1, 2}, {1, 3});
    auto gain = Tensor<double>::constant({1, 2}, 1.0);
    auto bias = Tensor<double>::constant({1, 2}, 0.0);
    auto y = layer_norm(x, gain, bias, 1e-12);
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer norm matches mean/variance oracle") {
    auto x = randn64({3, 8}, 51, 2.0);
    auto gain = randn64({1, 8}, 52);
    auto bias = randn64({1, 8}, 53);
    const double eps = 1e-5;
    auto y = layer_norm(x, gain, bias, eps);
    for (std::size_t i = 0; i < 3; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mean += x.at(i, j);
        mean /= 8.0;
        double var = 0.0;
        for (std::size_t j = 0; j < 8; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= 8.0;
        for (std::size_t j = 0; j < 8; ++j) {
            const double want =
                (x.at(i, j) - mean) / std::sqrt(var + eps) * gain.at(0, j) + bias.at(0, j);
            CHECK(std::abs(y.at(i, j) - want) < 1e-10);
        }
    }
}

TEST_CASE("sigmoid symmetry point") {
    auto y = sigmoid(Tensor<double>::scalar(0.0));
    CHECK(y.item() == 0.5);
}

TEST_CASE("adding zero is the identity") {
    auto x = randn64({3, 3}, 61);
    auto y = add(x, Tensor<double>::constant({3, 3}, 0.0));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("gelu matches the Gaussian-CDF oracle") {
    auto y = gelu(Tensor<double>::scalar(1.0));
    const double want = 0.5 * 1.0 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(std::abs(y.item() - want) < 1e-10);
}

TEST_CASE("broadcast patterns") {
    Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> col({2, 1}, {10, 100});
    Tensor<double> row({1, 3}, {1, 2, 3});
    auto by_col = mul(a, col);
    CHECK(by_col.at(0, 2) == 30.0);
    CHECK(by_col.at(1, 0) == 400.0);
    auto by_row = mul(a, row);
    CHECK(by_row.at(0, 2) == 9.0);
    CHECK(by_row.at(1, 1) == 10.0);
    auto by_scalar = add(a, Tensor<double>::scalar(1.0));
    CHECK(by_scalar.at(1, 2) == 7.0);

    Tensor<double> bad({3, 2});
    CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("concat of a single part is the identity") {
    auto a = randn64({4, 3}, 71);
    auto out = concat_rows<double>({a});
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("concat shapes and round trip") {
    auto a = randn64({4, 5}, 72);
    auto b = randn64({2, 5}, 73);
    auto joined = concat_rows<double>({a, b});
    CHECK(joined.rows() == 6);
    CHECK(joined.cols() == 5);
    auto parts = split_rows(joined, {4, 2});
    REQUIRE(parts.size() == 2);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(parts[0].data()[i] == a.data()[i]);
    for (std::size_t i = 0; i < b.numel(); ++i) CHECK(parts[1].data()[i] == b.data()[i]);

    auto c1 = randn64({3, 4}, 74);
    auto c2 = randn64({3, 2}, 75);
    auto wide = concat_cols<double>({c1, c2});
    CHECK(wide.cols() == 6);
    auto back = split_cols(wide, {4, 2});
    for (std::size_t i = 0; i < c1.numel(); ++i) CHECK(back[0].data()[i] == c1.data()[i]);
    for (std::size_t i = 0; i < c2.numel(); ++i) CHECK(back[1].data()[i] == c2.data()[i]);

    CHECK_THROWS_AS(split_rows(joined, {4, 3}), ShapeError);
}

TEST_CASE("backward of sum is all ones") {
    Tape<double> tape;
    auto x = tape.leaf(randn64({3, 4}, 81));
    auto loss = sum_all(x);
    tape.backward(loss);
    for (double g : tape.grad_of(x)) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({1, 2}, {1, 2}));
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
    auto g = tape.grad_of(x);
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape<double> tape;
    auto x = tape.leaf(randn64({2, 2}, 82));
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ValueError);
}

TEST_CASE("untouched leaves get zero gradients") {
    Tape<double> tape;
    auto x = tape.leaf(randn64({2, 2}, 83));
    auto unused = tape.leaf(randn64({3, 3}, 84));
    tape.backward(sum_all(x));
    for (double g : tape.grad_of(unused)) CHECK(g == 0.0);
}

TEST_CASE("finite differences: quadratic is exact") {
    ParamStore<double> store;
    store.add("x", ParamCategory::base, Tensor<double>::scalar(3.0));
    auto report = finite_diff_check(
        store, [](BoundParams<double>& p) { return mul(p("x"), p("x")); }, 1e-5, 1e-9);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("gradients of every op match finite differences") {
    check_op_grads("matmul",
                   {{"a", randn64({4, 5}, 201)}, {"b", randn64({5, 3}, 202)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(matmul(p("a"), p("b")), randn64({4, 3}, 203)));
                   });
    check_op_grads("matmul_nt",
                   {{"a", randn64({4, 5}, 204)}, {"b", randn64({3, 5}, 205)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(matmul_nt(p("a"), p("b")), randn64({4, 3}, 206)));
                   });
    check_op_grads("matmul_tn",
                   {{"a", randn64({5, 4}, 207)}, {"b", randn64({5, 3}, 208)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(matmul_tn(p("a"), p("b")), randn64({4, 3}, 209)));
                   });
    check_op_grads("transpose", {{"a", randn64({3, 5}, 210)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(transpose(p("a")), randn64({5, 3}, 211)));
                   });
    check_op_grads("add broadcast col",
                   {{"a", randn64({4, 3}, 212)}, {"b", randn64({4, 1}, 213)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(add(p("a"), p("b")), randn64({4, 3}, 214)));
                   });
    check_op_grads("sub broadcast row",
                   {{"a", randn64({4, 3}, 215)}, {"b", randn64({1, 3}, 216)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(sub(p("a"), p("b")), randn64({4, 3}, 217)));
                   });
    check_op_grads("mul broadcast scalar",
                   {{"a", randn64({4, 3}, 218)}, {"b", randn64({1, 1}, 219)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(mul(p("a"), p("b")), randn64({4, 3}, 220)));
                   });
    check_op_grads("div",
                   {{"a", randn64({3, 3}, 221)}, {"b", add_const(randn64({3, 3}, 222), 4.0)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(div(p("a"), p("b")), randn64({3, 3}, 223)));
                   });
    check_op_grads("sigmoid", {{"a", randn64({3, 4}, 224)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(sigmoid(p("a")), randn64({3, 4}, 225)));
                   });
    check_op_grads("gelu", {{"a", randn64({3, 4}, 226)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(gelu(p("a")), randn64({3, 4}, 227)));
                   });
    check_op_grads("exp", {{"a", randn64({3, 4}, 228)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(exp_of(p("a")), randn64({3, 4}, 229)));
                   });
    check_op_grads("log", {{"a", add_const(mul(randn64({3, 4}, 230), randn64({3, 4}, 230)), 0.5)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(log_of(p("a")), randn64({3, 4}, 231)));
                   });
    check_op_grads("powc", {{"a", add_const(mul(randn64({3, 4}, 232), randn64({3, 4}, 232)), 0.5)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(powc(p("a"), 1.7), randn64({3, 4}, 233)));
                   });
    check_op_grads("softmax", {{"a", randn64({4, 6}, 234, 2.0)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(softmax_rows(p("a")), randn64({4, 6}, 235)));
                   });
    check_op_grads("masked softmax", {{"a", randn64({3, 5}, 236, 2.0)}},
                   [](BoundParams<double>& p) {
                       Tensor<double> mask({3, 5}, {1, 1, 0, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1});
                       return sum_all(mul(softmax_rows(p("a"), &mask), randn64({3, 5}, 237)));
                   });
    check_op_grads("layer_norm",
                   {{"x", randn64({3, 6}, 238, 2.0)},
                    {"g", add_const(randn64({1, 6}, 239, 0.3), 1.0)},
                    {"b", randn64({1, 6}, 240)}},
                   [](BoundParams<double>& p) {
                       return sum_all(
                           mul(layer_norm(p("x"), p("g"), p("b"), 1e-5), randn64({3, 6}, 241)));
                   });
    check_op_grads("concat/split",
                   {{"a", randn64({3, 4}, 242)}, {"b", randn64({2, 4}, 243)}},
                   [](BoundParams<double>& p) {
                       auto joined = concat_rows<double>({p("a"), p("b")});
                       auto parts = split_rows(joined, {2, 3});
                       return add(sum_all(mul(parts[0], randn64({2, 4}, 244))),
                                  sum_all(mul(parts[1], randn64({3, 4}, 245))));
                   });
    check_op_grads("concat/split cols",
                   {{"a", randn64({3, 4}, 246)}, {"b", randn64({3, 2}, 247)}},
                   [](BoundParams<double>& p) {
                       auto wide = concat_cols<double>({p("a"), p("b")});
                       auto parts = split_cols(wide, {2, 4});
                       return add(sum_all(mul(parts[0], randn64({3, 2}, 248))),
                                  sum_all(mul(parts[1], randn64({3, 4}, 249))));
                   });
    check_op_grads("reductions", {{"a", randn64({4, 5}, 250)}},
                   [](BoundParams<double>& p) {
                       auto s = sum_cols(p("a"));
                       auto m = mean_rows(p("a"));
                       auto r = row_select(p("a"), 2);
                       return add(add(sum_all(mul(s, randn64({4, 1}, 251))),
                                      sum_all(mul(m, randn64({1, 5}, 252)))),
                                  add(sum_all(mul(r, randn64({1, 5}, 253))), mean_all(p("a"))));
                   });
    check_op_grads("diagonal", {{"a", randn64({4, 4}, 254)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(diagonal(p("a")), randn64({4, 1}, 255)));
                   });
    check_op_grads("gather", {{"t", randn64({6, 3}, 256)}},
                   [](BoundParams<double>& p) {
                       auto rows = gather_rows(p("t"), {0, 2, 2, 5});
                       return sum_all(mul(rows, randn64({4, 3}, 257)));
                   });
    check_op_grads("upsample", {{"a", randn64({6, 1}, 258)}},
                   [](BoundParams<double>& p) {
                       auto up = nn_upsample(p("a"), 2, 3, 2);
                       return sum_all(mul(up, randn64({24, 1}, 259)));
                   });
    check_op_grads("clamp", {{"a", randn64({3, 4}, 260)}},
                   [](BoundParams<double>& p) {
                       return sum_all(mul(clamp(p("a"), -0.5, 0.5), randn64({3, 4}, 261)));
                   });
}

TEST_CASE("forward and backward are deterministic") {
    auto run = [] {
        Tape<double> tape;
        auto x = tape.leaf(randn64({5, 6}, 301));
        auto w = tape.leaf(randn64({6, 4}, 302));
        auto y = softmax_rows(matmul(gelu(x), w));
        auto loss = mean_all(mul(y, y));
        tape.backward(loss);
        auto gx = tape.grad_of(x);
        auto gw = tape.grad_of(w);
        gx.insert(gx.end(), gw.begin(), gw.end());
        gx.push_back(loss.item());
        return gx;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("gather rejects out-of-range ids") {
    Tensor<double> t({3, 2});
    CHECK_THROWS_AS(gather_rows(t, {3}), ShapeError);
}
