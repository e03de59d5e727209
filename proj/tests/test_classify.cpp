#include "doctest.h"

#include <cmath>
#include <numbers>

#include "lremap/binary_io.hpp"
#include "lremap/classify.hpp"
#include "test_support.hpp"

using namespace lremap;

namespace {

// Two Gaussian blobs at +-offset along `axis`, unit noise elsewhere.
struct Blobs {
    Matrix x;
    std::vector<std::uint8_t> y;
};

Blobs blobs(std::size_t n, std::size_t d, std::size_t axis, double offset, double noise, std::uint64_t seed) {
    Rng rng(seed);
    Blobs b{Matrix(n, d), std::vector<std::uint8_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        b.y[i] = i % 2;
        for (std::size_t j = 0; j < d; ++j) b.x(i, j) = noise * rng.normal();
        b.x(i, axis) += b.y[i] ? offset : -offset;
    }
    return b;
}

LabelMatrix single_column(const std::vector<std::uint8_t>& y) {
    LabelMatrix m(0, 1);
    for (auto v : y) m.append(std::vector<std::uint8_t>{v});
    return m;
}

}  // namespace

TEST_CASE("label matrix") {
    LabelMatrix m(0, 3);
    m.append(std::vector<std::uint8_t>{1, 0, 1});
    m.append(std::vector<std::uint8_t>{0, 0, 1});
    CHECK(m.rows() == 2);
    CHECK(m.column(0) == std::vector<std::uint8_t>{1, 0});
    CHECK(m.column(2) == std::vector<std::uint8_t>{1, 1});
    CHECK_THROWS_AS(m.append(std::vector<std::uint8_t>{1}), std::invalid_argument);
}

TEST_CASE("probe_predict") {
    LinearProbe p{Vector(3, 0.0), 0.0, 0};
    CHECK(probe_predict(p, Vector{1.0, 2.0, 3.0}) == 0.5);
    p.bias = 20.0;
    CHECK(probe_predict(p, Vector{1.0, 2.0, 3.0}) > 0.999);
    const LinearProbe q{Vector{0.5, -1.25, 2.0}, 0.3, 1};
    const Vector w{0.7, 0.1, -0.4};
    const double z = 0.5 * 0.7 - 1.25 * 0.1 + 2.0 * -0.4 + 0.3;
    CHECK(probe_predict(q, w) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-15));
    CHECK(probe_predict(LinearProbe{Vector{1.0}, -800.0, 0}, Vector{0.0}) >= 0.0);
    CHECK(std::isfinite(probe_predict(LinearProbe{Vector{1.0}, 800.0, 0}, Vector{0.0})));
    CHECK_THROWS_AS(probe_predict(q, Vector{1.0}), std::invalid_argument);
}

TEST_CASE("hyperplane_direction") {
    const Vector n = hyperplane_direction(LinearProbe{Vector{3.0, 4.0}, 1.0, 0});
    CHECK(n[0] == doctest::Approx(0.6));
    CHECK(n[1] == doctest::Approx(0.8));
    const Vector n7 = hyperplane_direction(LinearProbe{Vector{21.0, 28.0}, 1.0, 0});
    CHECK(testing::max_abs_diff(n, n7) < 1e-15);
    CHECK_THROWS_AS(hyperplane_direction(LinearProbe{Vector{0.0, 0.0}, 1.0, 0}), std::invalid_argument);
}

TEST_CASE("pretrain_probes separates blobs and returns a frozen bank") {
    const Blobs train = blobs(1000, 2, 0, 3.0, 0.5, 1);
    const Blobs val = blobs(400, 2, 0, 3.0, 0.5, 2);
    Rng rng(3);
    ProbeBank bank = pretrain_probes(train.x, single_column(train.y), rng);
    CHECK(bank.size() == 1);
    CHECK(bank.frozen());
    CHECK(bank.kind() == BankKind::pretrained);
    CHECK(probe_accuracy(bank[0], val.x, val.y) >= 0.99);
    CHECK(norm2(bank[0].weight) > 0.0);
    CHECK_THROWS_AS(bank.mutable_probe(0), std::logic_error);

    std::vector<std::uint8_t> flipped(train.y);
    for (auto& v : flipped) v = 1 - v;
    Rng rng2(3);
    const ProbeBank fb = pretrain_probes(train.x, single_column(flipped), rng2);
    CHECK(dot(fb[0].weight, bank[0].weight) < 0.0);
    std::vector<std::uint8_t> vflip(val.y);
    for (auto& v : vflip) v = 1 - v;
    CHECK(probe_accuracy(fb[0], val.x, vflip) == doctest::Approx(probe_accuracy(bank[0], val.x, val.y)).epsilon(0.01));
}

TEST_CASE("pretrain_probes fits one probe per attribute") {
    const std::size_t K = 40, d = 48;
    Rng rng(5);
    Matrix x(600, d);
    LabelMatrix y(0, K);
    for (std::size_t i = 0; i < 600; ++i) {
        std::vector<std::uint8_t> row(K);
        for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
        for (std::size_t k = 0; k < K; ++k) row[k] = x(i, k) > 0.0;
        y.append(row);
    }
    const ProbeBank bank = pretrain_probes(x, y, rng);
    REQUIRE(bank.size() == K);
    for (std::size_t k = 0; k < K; ++k) {
        CHECK(bank[k].attribute_index == k);
        CHECK(probe_accuracy(bank[k], x, y.column(k)) > 0.9);
    }
}

TEST_CASE("random banks") {
    Rng a(4), b(4);
    const ProbeBank r = random_probes(3, 5, a, false);
    CHECK(r.frozen());
    CHECK(r.kind() == BankKind::random);
    CHECK(r == random_probes(3, 5, b, false));
    const double bound = 1.0 / std::sqrt(5.0);
    for (const auto& p : r.probes())
        for (double v : p.weight) CHECK(std::abs(v) <= bound);
    Rng c(4);
    CHECK(random_probes(3, 5, c, true).kind() == BankKind::random_shared);
    CHECK_THROWS_AS(random_probes(0, 5, c, false), std::invalid_argument);
}

TEST_CASE("svm on separable blobs") {
    const Blobs b = blobs(2000, 2, 0, 2.0, 0.3, 7);
    Rng rng(1);
    const LinearProbe p = svm_train(b.x, b.y, rng);
    CHECK(probe_accuracy(p, b.x, b.y) >= 0.99);
    // Positive margin: every point on its own side.
    double min_margin = 1e300;
    for (std::size_t i = 0; i < b.y.size(); ++i)
        min_margin = std::min(min_margin, (b.y[i] ? 1.0 : -1.0) * probe_logit(p, b.x.row(i)));
    CHECK(min_margin > 0.0);
}

TEST_CASE("svm direction recovers an axis-aligned boundary") {
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const Blobs b = blobs(3000, 3, axis, 1.5, 1.0, 11 + axis);
        Rng rng(2);
        const Vector n = hyperplane_direction(svm_train(b.x, b.y, rng));
        const double angle = std::acos(std::min(1.0, n[axis])) * 180.0 / std::numbers::pi;
        CHECK(angle < 5.0);
    }
}

TEST_CASE("svm predictions are unchanged by scaling the inputs") {
    const Blobs b = blobs(500, 4, 1, 1.0, 1.0, 21);
    for (double c : {0.25, 4.0, 64.0}) {
        Matrix scaled = b.x;
        for (double& v : scaled.values()) v *= c;
        Rng r1(9), r2(9);
        const LinearProbe p = svm_train(b.x, b.y, r1);
        const LinearProbe q = svm_train(scaled, b.y, r2);
        std::size_t same = 0;
        for (std::size_t i = 0; i < b.y.size(); ++i)
            same += (probe_logit(p, b.x.row(i)) > 0.0) == (probe_logit(q, scaled.row(i)) > 0.0);
        CHECK(same == b.y.size());
    }
}

TEST_CASE("svm rejects degenerate input") {
    const Blobs b = blobs(100, 2, 0, 1.0, 1.0, 3);
    Rng rng(1);
    std::vector<std::uint8_t> ones(100, 1);
    CHECK_THROWS_AS(svm_train(b.x, ones, rng), std::invalid_argument);
    CHECK_THROWS_AS(svm_train(b.x, std::vector<std::uint8_t>(3, 0), rng), std::invalid_argument);
    SvmOptions o;
    o.reg_lambda = 0.0;
    CHECK_THROWS_AS(svm_train(b.x, b.y, rng, o), std::invalid_argument);
}

TEST_CASE("LRPB round trips and loads frozen") {
    Rng rng(8);
    const ProbeBank bank = random_probes(4, 6, rng, false);
    const auto bytes = encode_probes(bank);
    CHECK(bytes.size() == 4 + 4 + 4 + 4 * (6 * 8 + 8));
    const ProbeBank back = decode_probes(bytes);
    CHECK(back.frozen());
    CHECK(back.probes() == bank.probes());
    CHECK(encode_probes(back) == bytes);

    auto kind_of = [](const std::vector<std::uint8_t>& b) {
        try {
            decode_probes(b);
        } catch (const FormatError& e) {
            return e.kind();
        }
        return FormatErrorKind::io;
    };
    auto bad = bytes;
    bad[1] = 'Q';
    CHECK(kind_of(bad) == FormatErrorKind::bad_magic);
    CHECK(kind_of({bytes.begin(), bytes.end() - 1}) == FormatErrorKind::truncated);
    bad = bytes;
    bad.push_back(7);
    CHECK(kind_of(bad) == FormatErrorKind::invalid);
}
