#include "doctest.h"

#include <cmath>
#include <set>
#include <stdexcept>

#include "lremap/ndcore.hpp"
#include "test_support.hpp"

using namespace lremap;

namespace {

double leaky(double z, double slope) { return z > 0 ? z : slope * z; }

// Straight-line forward for a 3-layer net, written without the library's helpers.
Vector replay3(const Mlp& net, const Vector& x) {
    Vector h = x;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& W = net.layers[k].weight;
        const auto& b = net.layers[k].bias;
        Vector z(W.rows());
        for (std::size_t r = 0; r < W.rows(); ++r) {
            double acc = b[r];
            for (std::size_t c = 0; c < W.cols(); ++c) acc += W(r, c) * h[c];
            z[r] = k < 2 ? leaky(acc, net.leaky_slope) : (net.output == Activation::tanh ? std::tanh(acc) : acc);
        }
        h = z;
    }
    return h;
}

}  // namespace

TEST_CASE("rng is reproducible and forks independently") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        CHECK(x != c.next_u64());
    }
    // Known first output of the documented construction: splitmix64 finalizer of seed + 1*gamma.
    auto mix = [](std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    };
    Rng d(7);
    const std::uint64_t first = d.next_u64();
    CHECK(first == mix(7 + 0x9E3779B97F4A7C15ull));
    Rng e(5);
    const Rng f1 = e.fork(1), f2 = e.fork(2);
    Rng f1c = f1, f2c = f2;
    CHECK(f1c.next_u64() != f2c.next_u64());
    CHECK(e.counter() == 0);
}

TEST_CASE("rng distributions") {
    Rng rng(9);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(7) < 7);
    }
    auto p = permutation(50, rng);
    std::set<std::size_t> s(p.begin(), p.end());
    CHECK(s.size() == 50);
    CHECK(*s.rbegin() == 49);
}

TEST_CASE("mlp_apply trivial cases") {
    SUBCASE("zero net with tanh output is zero") {
        Rng rng(1);
        const std::size_t widths[] = {4, 8, 8, 3};
        Mlp net = make_mlp(widths, Activation::tanh, 0.01, rng);
        for (auto& l : net.layers) {
            std::fill(l.weight.values().begin(), l.weight.values().end(), 0.0);
            std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }
        const Vector y = mlp_apply(net, Vector{1.0, -2.0, 3.0, 0.5});
        for (double v : y) CHECK(v == 0.0);
    }
    SUBCASE("single identity layer") {
        Mlp net;
        net.layers.push_back({Matrix::identity(2), Vector{0.0, 0.0}});
        const Vector y = mlp_apply(net, Vector{2.0, -3.0});
        CHECK(y == Vector{2.0, -3.0});
    }
    SUBCASE("dimension mismatch names the shapes") {
        Rng rng(1);
        const std::size_t widths[] = {4, 8, 3};
        const Mlp net = make_mlp(widths, Activation::identity, 0.01, rng);
        try {
            mlp_apply(net, Vector{1.0, 2.0});
            FAIL("expected throw");
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2") != std::string::npos);
            CHECK(msg.find("8x4") != std::string::npos);
        }
    }
}

TEST_CASE("mlp_apply matches a straight-line replay") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const std::size_t widths[] = {6, 16, 16, 5};
        for (Activation act : {Activation::identity, Activation::tanh}) {
            const Mlp net = make_mlp(widths, act, 0.01, rng);
            Vector x(6, 0.0);
            x[0] = 1.0;
            const Vector got = mlp_apply(net, x);
            const Vector want = replay3(net, x);
            CHECK(testing::max_abs_diff(got, want) < 1e-14);
        }
    }
}

TEST_CASE("mlp_grad analytic cases") {
    Rng rng(4);
    const std::size_t widths[] = {3, 7, 7, 2};
    const Mlp net = make_mlp(widths, Activation::tanh, 0.01, rng);
    SUBCASE("zero upstream gives zero gradients") {
        const auto g = mlp_grad(net, Vector{0.3, -0.2, 1.0}, Vector{0.0, 0.0});
        for (double v : g.input) CHECK(v == 0.0);
        for (const auto& w : g.params.weight)
            for (double v : w.values()) CHECK(v == 0.0);
    }
    SUBCASE("single linear layer") {
        Mlp lin;
        Matrix W(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
        lin.layers.push_back({W, Vector{0.5, -0.5}});
        const Vector x{1.0, -1.0, 2.0}, u{0.25, -2.0};
        const auto g = mlp_grad(lin, x, u);
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 0; c < 3; ++c) CHECK(g.params.weight[0](r, c) == doctest::Approx(u[r] * x[c]));
        CHECK(g.params.bias[0] == u);
        for (std::size_t c = 0; c < 3; ++c) CHECK(g.input[c] == doctest::Approx(W(0, c) * u[0] + W(1, c) * u[1]));
    }
}

TEST_CASE("mlp_grad matches central differences on 100 seeded nets") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t widths[] = {6, 10, 10, 6};
        Mlp net = make_mlp(widths, seed % 2 ? Activation::tanh : Activation::identity, 0.01, rng);
        Vector x(6), u(6);
        for (double& v : x) v = rng.uniform(-1.5, 1.5);
        for (double& v : u) v = rng.uniform(-1.0, 1.0);
        const auto g = mlp_grad(net, x, u);
        auto f = [&] { return dot(u, mlp_apply(net, x)); };
        const double fs = f();
        for (std::size_t i = 0; i < x.size(); ++i)
            worst = std::max(worst, testing::rel_error(g.input[i], testing::central_difference(f, x[i]), fs));
        for (std::size_t k = 0; k < net.layers.size(); ++k) {
            auto& W = net.layers[k].weight.values();
            for (std::size_t j = 0; j < W.size(); j += 3)
                worst = std::max(worst, testing::rel_error(g.params.weight[k].values()[j],
                                                           testing::central_difference(f, W[j]), fs));
            auto& b = net.layers[k].bias;
            for (std::size_t j = 0; j < b.size(); ++j)
                worst = std::max(worst, testing::rel_error(g.params.bias[k][j], testing::central_difference(f, b[j]), fs));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("adam single step matches the closed form") {
    // p=1, g=0.5, fresh state: m=0.05, v=0.00025, mhat=0.5, vhat=0.25.
    Vector p{1.0}, g{0.5};
    AdamState st(AdamConfig{}, 1);
    std::vector<std::span<double>> ps{std::span<double>(p)}, gs{std::span<double>(g)};
    adam_step(ps, gs, st);
    const double m = 0.1 * 0.5, v = 0.001 * 0.25;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    const double want = 1.0 - 1e-4 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK(st.t == 1);
    CHECK(st.m[0] == doctest::Approx(m));
    CHECK(st.v[0] == doctest::Approx(v));
}

TEST_CASE("adam defaults and fixed point") {
    const AdamConfig c;
    CHECK(c.lr == 1e-4);
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.999);
    Vector p{0.3, -1.2, 4.0}, g(3, 0.0);
    const Vector p0 = p;
    AdamState st(c, 3);
    std::vector<std::span<double>> ps{std::span<double>(p)}, gs{std::span<double>(g)};
    for (int i = 0; i < 50; ++i) adam_step(ps, gs, st);
    CHECK(p == p0);
    CHECK(st.t == 50);
}

TEST_CASE("adam rejects shape mismatches") {
    Vector p(3), g(2);
    AdamState st(AdamConfig{}, 3);
    std::vector<std::span<double>> ps{std::span<double>(p)}, gs{std::span<double>(g)};
    CHECK_THROWS_AS(adam_step(ps, gs, st), std::invalid_argument);
}

TEST_CASE("identical seeds give bit-identical trajectories") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        const std::size_t widths[] = {4, 8, 8, 4};
        Mlp net = make_mlp(widths, Activation::tanh, 0.01, rng);
        std::vector<std::span<double>> ps;
        collect_params(net, ps);
        std::size_t n = 0;
        for (auto s : ps) n += s.size();
        AdamState st(AdamConfig{1e-2}, n);
        for (int step = 0; step < 20; ++step) {
            Vector x(4), u(4);
            for (double& v : x) v = rng.normal();
            for (double& v : u) v = rng.normal();
            auto g = mlp_grad(net, x, u);
            std::vector<std::span<double>> gs;
            collect_grads(g.params, gs);
            adam_step(ps, gs, st);
        }
        return net;
    };
    CHECK(run(11) == run(11));
    CHECK_FALSE(run(11) == run(12));
}
