#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "cadenceforge/nn.hpp"
#include "cadenceforge/rng.hpp"
#include "cadenceforge/tensor.hpp"
#include "oracles.hpp"

using namespace cforge;
using T64 = Tensor<double>;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Verifies tape gradients of a scalar-valued builder against central
// differences over every input tensor jointly.
void gradcheck(const std::function<T64(std::vector<T64>&)>& build,
               const std::vector<std::vector<std::size_t>>& shapes, std::uint64_t seed,
               double tol = 1e-4, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<std::vector<double>> init;
    std::size_t total = 0;
    for (const auto& s : shapes) {
        const std::size_t n = T64::count(s);
        init.push_back(random_vec(n, rng, lo, hi));
        total += n;
    }
    // tape pass
    std::vector<T64> leaves;
    for (std::size_t i = 0; i < shapes.size(); ++i)
        leaves.push_back(T64::from(shapes[i], init[i], true));
    auto loss = build(leaves);
    loss.backward();
    std::vector<double> tape;
    tape.reserve(total);
    for (auto& l : leaves)
        for (double g : l.grad()) tape.push_back(g);

    // finite differences on the flattened parameter vector
    std::vector<double> theta;
    theta.reserve(total);
    for (const auto& v : init) theta.insert(theta.end(), v.begin(), v.end());
    const auto f = [&](const std::vector<double>& th) {
        NoGradGuard ng;
        std::vector<T64> xs;
        std::size_t off = 0;
        for (const auto& s : shapes) {
            const std::size_t n = T64::count(s);
            xs.push_back(T64::from(s, {th.begin() + std::ptrdiff_t(off),
                                       th.begin() + std::ptrdiff_t(off + n)}));
            off += n;
        }
        return build(xs).item();
    };
    const auto numeric = oracle::finite_diff_grad(f, theta, 1e-5);

    REQUIRE(tape.size() == numeric.size());
    for (std::size_t i = 0; i < tape.size(); ++i) {
        const double denom = std::max({std::abs(tape[i]), std::abs(numeric[i]), 1.0});
        INFO("component " << i << ": tape=" << tape[i] << " numeric=" << numeric[i]);
        REQUIRE(std::abs(tape[i] - numeric[i]) <= tol * denom);
    }
}

// Collapse any tensor to a scalar with fixed random weights, so upstream
// gradients are non-uniform.
T64 weigh(const T64& y, std::uint64_t seed) {
    Rng rng(seed);
    auto c = T64::from(y.shape(), random_vec(y.numel(), rng));
    return sum_all(mul(y, c));
}

}  // namespace

TEST_CASE("backward accumulates: two passes double every gradient") {
    auto x = T64::from({4}, {1.0, -2.0, 3.0, 0.5}, true);
    auto loss = sum_all(mul(x, x));
    loss.backward();
    const auto g1 = x.grad();
    loss.backward();
    const auto g2 = x.grad();
    for (std::size_t i = 0; i < g1.size(); ++i) REQUIRE(g2[i] == 2.0 * g1[i]);
    x.zero_grad();
    loss.backward();
    REQUIRE(x.grad() == g1);
}

TEST_CASE("no-grad mode skips recording") {
    auto x = T64::from({3}, {1.0, 2.0, 3.0}, true);
    {
        NoGradGuard ng;
        auto y = mul(x, x);
        REQUIRE_FALSE(y.requires_grad());
        REQUIRE_THROWS_AS(sum_all(y).backward(), ValidationError);
    }
    auto y = mul(x, x);
    REQUIRE(y.requires_grad());
}

TEST_CASE("backward requires a scalar") {
    auto x = T64::from({2}, {1.0, 2.0}, true);
    auto y = mul(x, x);
    REQUIRE_THROWS_AS(y.backward(), ValidationError);
}

TEST_CASE("elementwise op gradients match finite differences") {
    gradcheck([](std::vector<T64>& v) { return weigh(add(v[0], v[1]), 1); },
              {{3, 4}, {3, 4}}, 101);
    gradcheck([](std::vector<T64>& v) { return weigh(sub(v[0], v[1]), 2); },
              {{2, 5}, {2, 5}}, 102);
    gradcheck([](std::vector<T64>& v) { return weigh(mul(v[0], v[1]), 3); },
              {{4, 3}, {4, 3}}, 103);
    gradcheck([](std::vector<T64>& v) { return weigh(scale(v[0], 2.7), 4); }, {{6}}, 104);
    gradcheck([](std::vector<T64>& v) { return weigh(sigmoid(v[0]), 5); }, {{7}}, 105);
    gradcheck([](std::vector<T64>& v) { return weigh(gelu(v[0]), 6); }, {{9}}, 106, 1e-4, -2.0,
              2.0);
    // relu: keep inputs away from the kink
    gradcheck([](std::vector<T64>& v) { return weigh(relu(v[0]), 7); }, {{8}}, 107, 1e-4, 0.2,
              1.0);
    gradcheck([](std::vector<T64>& v) { return weigh(relu(v[0]), 8); }, {{8}}, 108, 1e-4, -1.0,
              -0.2);
}

TEST_CASE("softmax family gradients match finite differences") {
    gradcheck([](std::vector<T64>& v) { return weigh(softmax_lastdim(v[0]), 11); }, {{3, 5}},
              111);
    gradcheck([](std::vector<T64>& v) { return weigh(log_softmax_lastdim(v[0]), 12); }, {{4, 6}},
              112);
}

TEST_CASE("linear gradients match finite differences") {
    gradcheck(
        [](std::vector<T64>& v) {
            return weigh(linear(v[0], v[1], &v[2]), 21);
        },
        {{4, 3}, {5, 3}, {5}}, 121);
    // 3D input, no bias
    gradcheck([](std::vector<T64>& v) { return weigh(linear(v[0], v[1]), 22); },
              {{2, 3, 4}, {6, 4}}, 122);
}

TEST_CASE("batched matmul gradients match finite differences") {
    gradcheck([](std::vector<T64>& v) { return weigh(bmm_nn(v[0], v[1]), 31); },
              {{2, 3, 4}, {2, 4, 5}}, 131);
    gradcheck([](std::vector<T64>& v) { return weigh(bmm_nt(v[0], v[1]), 32); },
              {{2, 3, 4}, {2, 5, 4}}, 132);
}

TEST_CASE("shape ops route gradients correctly") {
    gradcheck([](std::vector<T64>& v) { return weigh(reshape(v[0], {6, 2}), 41); }, {{3, 4}},
              141);
    gradcheck([](std::vector<T64>& v) { return weigh(concat_lastdim(v[0], v[1]), 42); },
              {{3, 4}, {3, 2}}, 142);
    gradcheck(
        [](std::vector<T64>& v) {
            std::vector<T64> toks{v[0], v[1], v[2]};
            return weigh(stack_tokens(toks), 43);
        },
        {{2, 5}, {2, 5}, {2, 5}}, 143);
    gradcheck([](std::vector<T64>& v) { return weigh(merge_heads(split_heads(v[0], 2), 2), 44); },
              {{2, 3, 6}}, 144);
    gradcheck([](std::vector<T64>& v) { return weigh(scale_planes(v[0], v[1]), 45); },
              {{2, 3, 4}, {2, 3}}, 145);
}

TEST_CASE("split/merge heads is an exact round trip") {
    Rng rng(7);
    auto x = T64::from({3, 4, 8}, random_vec(96, rng));
    auto y = merge_heads(split_heads(x, 4), 4);
    REQUIRE(y.value() == x.value());
}

TEST_CASE("conv2d forward matches the direct convolution oracle") {
    Rng rng(55);
    for (const std::size_t k : {std::size_t(3), std::size_t(5)}) {
        const std::size_t B = 2, C = 3, H = 7, W = 6, O = 4;
        auto x = T64::from({B, C, H, W}, random_vec(B * C * H * W, rng));
        auto w = T64::from({O, C, k, k}, random_vec(O * C * k * k, rng));
        auto b = T64::from({O}, random_vec(O, rng));
        auto y = conv2d(x, w, &b);
        for (std::size_t bb = 0; bb < B; ++bb) {
            const std::vector<double> xb(x.value().begin() + std::ptrdiff_t(bb * C * H * W),
                                         x.value().begin() + std::ptrdiff_t((bb + 1) * C * H * W));
            const auto want = oracle::conv2d(xb, C, H, W, w.value(), O, k, b.value());
            for (std::size_t i = 0; i < want.size(); ++i)
                REQUIRE(y.value()[bb * O * H * W + i] == Catch::Approx(want[i]).margin(1e-10));
        }
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    gradcheck(
        [](std::vector<T64>& v) { return weigh(conv2d(v[0], v[1], &v[2]), 51); },
        {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}, 151);
    gradcheck(
        [](std::vector<T64>& v) { return weigh(conv2d(v[0], v[1], &v[2]), 52); },
        {{1, 2, 6, 6}, {2, 2, 5, 5}, {2}}, 152);
}

TEST_CASE("pooling forward and gradients") {
    auto x = T64::from({1, 1, 2, 4}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0});
    auto y = avg_pool2d(x);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 1, 2});
    REQUIRE(y.value()[0] == Catch::Approx((1 + 2 + 5 + 6) / 4.0));
    REQUIRE(y.value()[1] == Catch::Approx((3 + 4 + 7 + 8) / 4.0));

    gradcheck([](std::vector<T64>& v) { return weigh(avg_pool2d(v[0]), 61); }, {{2, 3, 4, 6}},
              161);
    gradcheck([](std::vector<T64>& v) { return weigh(global_avg_pool(v[0]), 62); },
              {{2, 3, 4, 4}}, 162);
}

TEST_CASE("layer norm normalizes rows and backpropagates") {
    Rng rng(31);
    auto x = T64::from({4, 8}, random_vec(32, rng, -3.0, 3.0));
    auto gamma = T64::from({8}, std::vector<double>(8, 1.0));
    auto beta = T64::from({8}, std::vector<double>(8, 0.0));
    auto y = layer_norm_lastdim(x, gamma, beta);
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0.0, v = 0.0;
        for (std::size_t i = 0; i < 8; ++i) m += y.value()[r * 8 + i];
        m /= 8.0;
        for (std::size_t i = 0; i < 8; ++i) {
            const double d = y.value()[r * 8 + i] - m;
            v += d * d;
        }
        REQUIRE(m == Catch::Approx(0.0).margin(1e-9));
        REQUIRE(v / 8.0 == Catch::Approx(1.0).margin(1e-4));
    }
    gradcheck(
        [](std::vector<T64>& v) { return weigh(layer_norm_lastdim(v[0], v[1], v[2]), 71); },
        {{3, 6}, {6}, {6}}, 171);
}

TEST_CASE("batch norm train normalizes per channel and backpropagates") {
    Rng rng(41);
    auto x = T64::from({3, 2, 4, 4}, random_vec(96, rng, -2.0, 2.0));
    auto gamma = T64::from({2}, {1.0, 1.0});
    auto beta = T64::from({2}, {0.0, 0.0});
    std::vector<double> bm, bv;
    auto y = batch_norm_train(x, gamma, beta, bm, bv);
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0.0, v = 0.0;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t i = 0; i < 16; ++i) m += y.value()[(b * 2 + c) * 16 + i];
        m /= 48.0;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t i = 0; i < 16; ++i) {
                const double d = y.value()[(b * 2 + c) * 16 + i] - m;
                v += d * d;
            }
        REQUIRE(m == Catch::Approx(0.0).margin(1e-9));
        REQUIRE(v / 48.0 == Catch::Approx(1.0).margin(1e-3));
    }
    gradcheck(
        [](std::vector<T64>& v) {
            std::vector<double> m, var;
            return weigh(batch_norm_train(v[0], v[1], v[2], m, var), 81);
        },
        {{2, 2, 3, 3}, {2}, {2}}, 181);
    gradcheck(
        [](std::vector<T64>& v) {
            const std::vector<double> m{0.2, -0.1}, var{1.5, 0.7};
            return weigh(batch_norm_eval(v[0], v[1], v[2], m, var), 82);
        },
        {{2, 2, 3, 3}, {2}, {2}}, 182);
}

TEST_CASE("dropout semantics") {
    Rng rng(3);
    auto x = T64::from({10000}, std::vector<double>(10000, 1.0), true);
    Rng d1(17);
    auto y = dropout(x, 0.25, d1);
    double mean = 0.0;
    std::size_t zeros = 0;
    for (double v : y.value()) {
        REQUIRE((v == 0.0 || v == Catch::Approx(1.0 / 0.75)));
        mean += v;
        zeros += v == 0.0;
    }
    REQUIRE(mean / 10000.0 == Catch::Approx(1.0).margin(0.02));
    REQUIRE(double(zeros) / 10000.0 == Catch::Approx(0.25).margin(0.02));
    // identical seed, identical mask
    Rng d2(17);
    auto y2 = dropout(x, 0.25, d2);
    REQUIRE(y.value() == y2.value());
    // p = 0 is the identity
    Rng d3(1);
    REQUIRE(dropout(x, 0.0, d3).value() == x.value());
}

TEST_CASE("cross entropy equals log C on uniform logits") {
    const std::size_t B = 3, C = 126;
    auto logits = T64::from({B, C}, std::vector<double>(B * C, 0.37), true);
    std::vector<double> t(B * C, 0.0);
    // arbitrary normalized soft targets
    for (std::size_t b = 0; b < B; ++b) {
        t[b * C + (b % C)] = 0.9;
        for (std::size_t c = 0; c < C; ++c) t[b * C + c] += 0.1 / C;
    }
    auto targets = T64::from({B, C}, t);
    auto loss = cross_entropy_soft(logits, targets);
    REQUIRE(loss.item() == Catch::Approx(std::log(126.0)).margin(1e-9));

    gradcheck(
        [&](std::vector<T64>& v) {
            auto tt = T64::from({2, 5}, {0.7, 0.1, 0.1, 0.05, 0.05, 0.2, 0.2, 0.2, 0.2, 0.2});
            return cross_entropy_soft(v[0], tt);
        },
        {{2, 5}}, 191);
}

TEST_CASE("multi-head attention gradcheck end to end") {
    // exercise the whole q/k/v/softmax/merge pipeline through one scalar
    gradcheck(
        [](std::vector<T64>& v) {
            auto qh = split_heads(v[0], 2);
            auto kh = split_heads(v[1], 2);
            auto vh = split_heads(v[2], 2);
            auto scores = scale(bmm_nt(qh, kh), 1.0 / std::sqrt(2.0));
            auto ctx = merge_heads(bmm_nn(softmax_lastdim(scores), vh), 2);
            return weigh(ctx, 91);
        },
        {{2, 3, 4}, {2, 5, 4}, {2, 5, 4}}, 201);
}

TEST_CASE("argmax rows") {
    auto x = Tensor<float>::from({2, 3}, {0.1f, 0.9f, 0.3f, 2.0f, -1.0f, 1.5f});
    const auto idx = argmax_rows(x);
    REQUIRE(idx == std::vector<std::size_t>{1, 0});
}
