#include "doctest.h"

#include <cmath>

#include "lremap/binary_io.hpp"
#include "lremap/oracle.hpp"
#include "test_support.hpp"

using namespace lremap;

namespace {

WorldConfig small_config(std::uint64_t seed = 3) {
    WorldConfig c;
    c.seed = seed;
    c.dim = 8;
    c.n_attributes = 3;
    return c;
}

}  // namespace

TEST_CASE("make_world rejects bad shapes") {
    WorldConfig c = small_config();
    c.n_attributes = 9;
    CHECK_THROWS_AS(make_world(c), std::invalid_argument);
    c.n_attributes = 0;
    CHECK_THROWS_AS(make_world(c), std::invalid_argument);
    c = small_config();
    c.dim = 1;
    c.n_attributes = 1;
    CHECK_THROWS_AS(make_world(c), std::invalid_argument);
    c = small_config();
    c.rescale = 0.0;
    CHECK_THROWS_AS(make_world(c), std::invalid_argument);
}

TEST_CASE("worlds are fully determined by the seed") {
    CHECK(make_world(small_config(5)) == make_world(small_config(5)));
    CHECK_FALSE(make_world(small_config(5)) == make_world(small_config(6)));
}

TEST_CASE("sample_factors") {
    const ToyWorld w = make_world(small_config());
    Rng rng(1);
    CHECK(sample_factors(w, 0, rng).empty());
    const auto z = sample_factors(w, 100000, rng);
    for (std::size_t j = 0; j < w.dim(); ++j) {
        double mean = 0.0;
        for (const auto& v : z) mean += v[j];
        mean /= static_cast<double>(z.size());
        CHECK(std::abs(mean) < 0.02);
    }
}

TEST_CASE("attributes follow the sign rule") {
    WorldConfig c = small_config();
    c.dim = 4;
    c.n_attributes = 2;
    const ToyWorld w = make_world(c);
    CHECK(attributes(w, Vector{1.0, -1.0, 0.3, 0.4}) == std::vector<std::uint8_t>{1, 0});
    Rng rng(9);
    std::vector<std::size_t> pos(2, 0);
    for (const auto& z : sample_factors(w, 10000, rng)) {
        const auto a = attributes(w, z);
        Vector neg(z);
        for (double& x : neg) x = -x;
        const auto b = attributes(w, neg);
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(a[k] != b[k]);
            pos[k] += a[k];
        }
    }
    for (auto p : pos) {
        CHECK(p > 4500);
        CHECK(p < 5500);
    }
}

TEST_CASE("embed and decode") {
    WorldConfig flat = small_config();
    flat.warp_amplitudes = {0.0, 0.0, 0.0};
    const ToyWorld id = make_world(flat);
    const ToyWorld w = make_world(small_config());
    Rng rng(4);
    for (const auto& z : sample_factors(w, 200, rng)) {
        CHECK(embed(id, z) == z);
        const Vector x = embed(w, z);
        CHECK(testing::max_abs_diff(decode(w, x), z) < 1e-8);
        CHECK(testing::max_abs_diff(x, testing::replay_flow(w.warp, z, false)) < 1e-12);
    }
}

TEST_CASE("the default warp actually moves codes") {
    const ToyWorld w = make_world(small_config());
    Rng rng(6);
    double moved = 0.0;
    for (const auto& z : sample_factors(w, 100, rng)) moved = std::max(moved, testing::max_abs_diff(embed(w, z), z));
    CHECK(moved > 0.5);
}

TEST_CASE("perceptual distance") {
    WorldConfig c = small_config();
    c.rescale = 1.0;
    const ToyWorld w1 = make_world(c);
    const ToyWorld w10 = make_world(small_config());
    CHECK(w10.config.rescale == 10.0);
    Rng rng(2);
    const auto z = sample_factors(w1, 40, rng);
    for (std::size_t i = 0; i + 1 < z.size(); ++i) {
        const Vector a = embed(w1, z[i]), b = embed(w1, z[i + 1]);
        CHECK(perceptual_distance(w1, a, a) == 0.0);
        double direct = 0.0;
        for (std::size_t j = 0; j < 8; ++j) direct += (z[i][j] - z[i + 1][j]) * (z[i][j] - z[i + 1][j]);
        CHECK(perceptual_distance(w1, a, b) == doctest::Approx(direct).epsilon(1e-9));
        CHECK(perceptual_distance(w1, a, b) == doctest::Approx(perceptual_distance(w1, b, a)).epsilon(1e-15));
        // Explicit rotation path agrees with the norm shortcut.
        const Vector fa = features(w1, z[i]), fb = features(w1, z[i + 1]);
        CHECK(squared_distance(fa, fb) == doctest::Approx(direct).epsilon(1e-9));
    }
}

TEST_CASE("stress features are a frozen nonlinear map") {
    WorldConfig c = small_config();
    c.feature_mode = FeatureMode::stress;
    const ToyWorld w = make_world(c);
    Rng rng(3);
    const auto z = sample_factors(w, 2, rng);
    CHECK(testing::max_abs_diff(features(w, z[0]), testing::replay_mlp(w.feature_net, z[0])) < 1e-12);
    CHECK(factor_distance(w, z[0], z[1]) ==
          doctest::Approx(10.0 * squared_distance(features(w, z[0]), features(w, z[1]))).epsilon(1e-12));
}

TEST_CASE("identity features read only the non-attribute factors") {
    const ToyWorld w = make_world(small_config());
    Rng rng(8);
    const auto z = sample_factors(w, 20, rng);
    for (const auto& zi : z) {
        const Vector x = embed(w, zi);
        const Vector f = identity_features(w, x);
        CHECK(f == identity_features(w, x));
        const Vector dz = decode(w, x);
        const Vector tail(dz.begin() + 3, dz.end());
        CHECK(testing::max_abs_diff(f, testing::replay_mlp(w.id_net, tail)) < 1e-12);
        // Changing an attribute factor leaves the identity untouched.
        Vector zz = zi;
        zz[0] = -zz[0];
        CHECK(testing::max_abs_diff(identity_features(w, embed(w, zz)), f) < 1e-9);
    }
    ToyWorld zeroed = w;
    zero_output_layer(zeroed.id_net);
    for (double v : identity_features(zeroed, embed(w, z[0]))) CHECK(v == 0.0);
}

TEST_CASE("identity_features_vjp matches finite differences") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ToyWorld w = make_world(small_config(seed));
        Rng rng(seed + 100);
        Vector x = embed(w, sample_factors(w, 1, rng)[0]);
        Vector up(w.config.id_width);
        for (double& u : up) u = rng.normal();
        const Vector g = identity_features_vjp(w, x, up);
        auto f = [&] { return dot(up, identity_features(w, x)); };
        const double fs = f();
        for (std::size_t j = 0; j < x.size(); ++j)
            worst = std::max(worst, testing::rel_error(g[j], testing::central_difference(f, x[j]), fs));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("exact solution map unfolds distances and separates attributes") {
    const ToyWorld w = make_world(small_config());
    const ExactSolutionMap T(w);
    CHECK(T.scale() == doctest::Approx(std::sqrt(10.0)));
    Rng rng(12);
    const auto z = sample_factors(w, 50, rng);
    for (std::size_t i = 0; i + 1 < z.size(); ++i) {
        const Vector a = embed(w, z[i]), b = embed(w, z[i + 1]);
        const double latent = squared_distance(T.forward(a), T.forward(b));
        CHECK(std::abs(latent - perceptual_distance(w, a, b)) < 1e-6);
        CHECK(testing::max_abs_diff(T.inverse(T.forward(a)), a) < 1e-9);
        const Vector ta = T.forward(a);
        const auto attr = attributes(w, z[i]);
        for (std::size_t k = 0; k < 3; ++k) CHECK((ta[k] > 0.0) == (attr[k] == 1));
    }
}

TEST_CASE("LRTW round trips bit-exactly") {
    for (FeatureMode mode : {FeatureMode::linear, FeatureMode::stress}) {
        WorldConfig c = small_config();
        c.feature_mode = mode;
        c.warp_scale_amplitude = 0.2;
        c.fold_count = 2;
        const ToyWorld w = make_world(c);
        const auto bytes = encode_world(w);
        const ToyWorld back = decode_world(bytes);
        CHECK(back == w);
        CHECK(encode_world(back) == bytes);
    }
}

TEST_CASE("LRTW errors are distinguished") {
    const auto bytes = encode_world(make_world(small_config()));
    auto kind_of = [](const std::vector<std::uint8_t>& b) {
        try {
            decode_world(b);
        } catch (const FormatError& e) {
            return e.kind();
        }
        FAIL("decode accepted corrupt bytes");
        return FormatErrorKind::io;
    };
    auto bad = bytes;
    bad[0] = 'X';
    CHECK(kind_of(bad) == FormatErrorKind::bad_magic);
    bad = bytes;
    bad[4] = 9;
    CHECK(kind_of(bad) == FormatErrorKind::version_mismatch);
    CHECK(kind_of({bytes.begin(), bytes.end() - 5}) == FormatErrorKind::truncated);
    bad = bytes;
    bad.push_back(0);
    CHECK(kind_of(bad) == FormatErrorKind::invalid);
}
