#include "doctest.h"

#include <cmath>
#include <numbers>

#include "lremap/losses.hpp"
#include "test_support.hpp"

using namespace lremap;

namespace {

WorldConfig flat_config(std::size_t d, std::size_t k) {
    WorldConfig c;
    c.dim = d;
    c.n_attributes = k;
    c.alpha = 1.0;
    c.rescale = 1.0;
    c.warp_amplitudes = {0.0, 0.0};
    c.id_width = 6;
    return c;
}

WorldConfig warped_config(std::size_t d, std::size_t k, std::uint64_t seed) {
    WorldConfig c;
    c.seed = seed;
    c.dim = d;
    c.n_attributes = k;
    c.id_width = 6;
    return c;
}

std::vector<Vector> codes_from(const ToyWorld& w, std::size_t n, Rng& rng) {
    std::vector<Vector> out;
    for (const auto& z : sample_factors(w, n, rng)) out.push_back(embed(w, z));
    return out;
}

LabelMatrix labels_from(const ToyWorld& w, std::span<const Vector> codes) {
    LabelMatrix y(0, w.n_attributes());
    for (const auto& c : codes) y.append(attributes(w, decode(w, c)));
    return y;
}

FlowModel small_flow(std::size_t d, std::uint64_t seed) {
    FlowOptions o;
    o.hidden_width = 12;
    o.init_gain = 0.5;
    return flow_init(d, 2, seed, InitMode::random, o);
}

ProbeBank frozen_bank(std::vector<LinearProbe> probes) {
    ProbeBank b(std::move(probes));
    b.freeze();
    return b;
}

// Largest relative error between analytic parameter gradients and central
// differences of `f` over every parameter.
double fd_error(FlowModel& flow, const FlowGrads& analytic, const std::function<double()>& f) {
    FlowGrads g = analytic;
    std::vector<std::span<double>> params, grads;
    collect_params(flow, params);
    collect_grads(g, grads);
    const double fs = f();
    double worst = 0.0;
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i)
            worst = std::max(worst, testing::rel_error(grads[b][i], testing::central_difference(f, params[b][i]), fs));
    return worst;
}

// Psi^{-1} written as a coupling flow. Valid when every warp layer is a pure
// translation (zero scale amplitude): reverse the layers and negate t.
FlowModel inverse_warp(const ToyWorld& w) {
    FlowModel f;
    f.dim = w.dim();
    for (auto it = w.warp.layers.rbegin(); it != w.warp.layers.rend(); ++it) {
        CouplingLayer l = *it;
        auto& last = l.translate_net.layers.back();
        for (double& v : last.weight.values()) v = -v;
        for (double& v : last.bias) v = -v;
        f.layers.push_back(std::move(l));
    }
    return f;
}

}  // namespace

TEST_CASE("mode and pairing names") {
    CHECK(parse_mode("Wstar") == TrainMode::wstar);
    CHECK(parse_mode("Wstar_ID") == TrainMode::wstar_id);
    CHECK(parse_mode("Wstar_a") == TrainMode::wstar_a);
    CHECK(mode_name(TrainMode::wstar_id) == "Wstar_ID");
    CHECK_THROWS_AS(parse_mode("wstar"), std::invalid_argument);
    CHECK(parse_pairing("all_pairs") == Pairing::all_pairs);
    CHECK(pairing_name(Pairing::consecutive) == "consecutive");
    CHECK_THROWS_AS(parse_pairing("pairs"), std::invalid_argument);
}

TEST_CASE("loss weights") {
    const LossWeights w;
    CHECK(w.lambda_d == 10.0);
    CHECK_NOTHROW(validate(w));
    LossWeights bad;
    bad.lambda_d = -1.0;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    bad = {};
    bad.lambda_id = std::nan("");
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("distance loss: coinciding distances give zero") {
    const ToyWorld w = make_world(flat_config(6, 2));
    const FlowModel id = flow_init(6, 3, 1, InitMode::identity);
    Rng rng(1);
    const auto codes = codes_from(w, 10, rng);
    CHECK(distance_unfolding_loss(id, codes, w).value < 1e-24);
    CHECK(distance_unfolding_loss(id, codes, w, Pairing::all_pairs).value < 1e-24);
}

TEST_CASE("distance loss: two hand-set codes") {
    WorldConfig c = flat_config(2, 1);
    c.alpha = 0.5;
    const ToyWorld w = make_world(c);
    const FlowModel id = flow_init(2, 2, 1, InitMode::identity);
    const std::vector<Vector> codes{{0.0, 0.0}, {2.0, 0.0}};
    CHECK(perceptual_distance(w, codes[0], codes[1]) == doctest::Approx(1.0));
    CHECK(distance_unfolding_loss(id, codes, w).value == doctest::Approx(9.0).epsilon(1e-12));
    CHECK_THROWS_AS(distance_unfolding_loss(id, std::span(codes).first(1), w), std::invalid_argument);
}

TEST_CASE("distance loss with identity flow equals an independent pairwise scan") {
    const ToyWorld w = make_world(warped_config(6, 2, 4));
    const FlowModel id = flow_init(6, 2, 1, InitMode::identity);
    Rng rng(2);
    const auto codes = codes_from(w, 9, rng);
    double consecutive = 0.0, all = 0.0;
    std::size_t n_all = 0;
    for (std::size_t i = 0; i < codes.size(); ++i)
        for (std::size_t j = i + 1; j < codes.size(); ++j) {
            double latent = 0.0;
            for (std::size_t k = 0; k < 6; ++k) latent += (codes[i][k] - codes[j][k]) * (codes[i][k] - codes[j][k]);
            const double dev = latent - perceptual_distance(w, codes[i], codes[j]);
            all += dev * dev;
            ++n_all;
            if (j == i + 1) consecutive += dev * dev;
        }
    CHECK(distance_unfolding_loss(id, codes, w).value == doctest::Approx(consecutive / 8.0).epsilon(1e-12));
    CHECK(distance_unfolding_loss(id, codes, w, Pairing::all_pairs).value ==
          doctest::Approx(all / static_cast<double>(n_all)).epsilon(1e-12));
    CHECK(distance_unfolding_loss(id, codes, w, Pairing::consecutive, 3.0).value > 0.0);
}

TEST_CASE("attribute loss: zero probes and saturated probes") {
    const std::size_t K = 4, d = 6;
    const FlowModel id = flow_init(d, 2, 1, InitMode::identity);
    std::vector<LinearProbe> zero;
    for (std::size_t k = 0; k < K; ++k) zero.push_back({Vector(d, 0.0), 0.0, k});
    Rng rng(3);
    std::vector<Vector> codes(5, Vector(d));
    LabelMatrix y(0, K);
    for (auto& c : codes) {
        for (double& x : c) x = rng.normal();
        std::vector<std::uint8_t> row(K);
        for (std::size_t k = 0; k < K; ++k) row[k] = rng.uniform() < 0.5;
        y.append(row);
    }
    CHECK(attribute_loss(id, codes, y, frozen_bank(zero)).value == doctest::Approx(K * std::numbers::ln2).epsilon(1e-14));

    // Every logit is +-20 on the correct side.
    std::vector<LinearProbe> sat;
    for (std::size_t k = 0; k < K; ++k) sat.push_back({Vector(d, 0.0), 0.0, k});
    LabelMatrix ones(0, K);
    std::vector<Vector> unit(3, Vector(d, 0.0));
    for (auto& c : unit) c[0] = 1.0;
    for (std::size_t i = 0; i < 3; ++i) ones.append(std::vector<std::uint8_t>{1, 0, 1, 0});
    for (std::size_t k = 0; k < K; ++k) sat[k].weight[0] = k % 2 ? -20.0 : 20.0;
    CHECK(attribute_loss(id, unit, ones, frozen_bank(sat)).value < K * 3e-9);

    ProbeBank open(zero);
    CHECK_THROWS_AS(attribute_loss(id, codes, y, open), std::logic_error);
}

TEST_CASE("identity loss vanishes without noise") {
    const ToyWorld w = make_world(warped_config(6, 2, 2));
    const FlowModel f = small_flow(6, 5);
    Rng rng(4);
    const auto codes = codes_from(w, 4, rng);
    const LossTerm t = identity_loss(f, codes, w, 0.0, rng);
    CHECK(t.value == 0.0);
    CHECK(t.grads.squared_norm() == 0.0);
    CHECK(identity_loss(f, codes, w, 1.0, rng).value > 0.0);
    CHECK_THROWS_AS(identity_loss(f, codes, w, -1.0, rng), std::invalid_argument);
}

TEST_CASE("total loss combines the terms per mode") {
    const ToyWorld w = make_world(warped_config(6, 2, 3));
    const FlowModel f = small_flow(6, 6);
    Rng rng(5), bank_rng(6);
    Batch b;
    b.codes = codes_from(w, 6, rng);
    b.labels = labels_from(w, b.codes);
    const ProbeBank bank = random_probes(2, 6, bank_rng, false);
    FlowGrads g;

    LossWeights lw;
    lw.lambda_d = 0.0;
    lw.lambda_id = 0.0;
    for (TrainMode m : {TrainMode::wstar, TrainMode::wstar_id, TrainMode::wstar_a}) {
        Rng r(1);
        const LossReport rep = total_loss(f, b, bank, w, lw, m, r, g);
        CHECK(rep.total == rep.l_a);
    }

    lw = {};
    lw.lambda_id = 0.7;
    Rng r1(9);
    const LossReport id = total_loss(f, b, bank, w, lw, TrainMode::wstar_id, r1, g);
    CHECK(id.l_id > 0.0);
    CHECK(std::abs(id.total - (id.l_a + 10.0 * id.l_d + 0.7 * id.l_id)) < 1e-10 * std::max(1.0, id.total));
    Rng r2(9);
    const LossReport plain = total_loss(f, b, bank, w, lw, TrainMode::wstar, r2, g);
    CHECK(plain.l_id == 0.0);
    CHECK(plain.lambda_id == 0.0);
    CHECK(plain.total == doctest::Approx(plain.l_a + 10.0 * plain.l_d).epsilon(1e-12));
    Rng r3(9);
    const LossReport a = total_loss(f, b, bank, w, lw, TrainMode::wstar_a, r3, g);
    CHECK(a.lambda_d == 0.0);
    CHECK(a.total == a.l_a);
    CHECK(a.l_d >= 0.0);

    // Gradient of total is the weighted sum of the term gradients.
    const FlowGrads gd = distance_unfolding_loss(f, b.codes, w).grads;
    const FlowGrads ga = attribute_loss(f, b.codes, b.labels, bank).grads;
    Rng r4(9);
    total_loss(f, b, bank, w, lw, TrainMode::wstar, r4, g);
    FlowGrads expect = gd;
    expect.scale_by(10.0);
    expect.add(ga);
    FlowGrads diff = g;
    diff.scale_by(-1.0);
    diff.add(expect);
    CHECK(std::sqrt(diff.squared_norm()) < 1e-10 * std::max(1.0, std::sqrt(g.squared_norm())));

    Rng r5(1);
    Batch one;
    one.codes = {b.codes[0]};
    one.labels = LabelMatrix(0, 2);
    one.labels.append(b.labels.row(0));
    CHECK_THROWS_AS(total_loss(f, one, bank, w, lw, TrainMode::wstar, r5, g), std::invalid_argument);
    lw.lambda_d = -0.5;
    CHECK_THROWS_AS(total_loss(f, b, bank, w, lw, TrainMode::wstar, r5, g), std::invalid_argument);
}

TEST_CASE("fresh identity noise per call, reproducible per seed") {
    const ToyWorld w = make_world(warped_config(6, 2, 3));
    const FlowModel f = small_flow(6, 6);
    Rng rng(5);
    const auto codes = codes_from(w, 4, rng);
    Rng a(1), b(1);
    const double first = identity_loss(f, codes, w, 1.0, a).value;
    CHECK(first == identity_loss(f, codes, w, 1.0, b).value);
    CHECK(first != identity_loss(f, codes, w, 1.0, a).value);
}

TEST_CASE("every loss term matches finite differences on 20 seeded configurations") {
    const std::size_t d = 8, K = 4;
    double worst_d = 0.0, worst_a = 0.0, worst_id = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const ToyWorld w = make_world(warped_config(d, K, seed));
        FlowModel f = small_flow(d, 100 + seed);
        Rng rng(seed);
        const auto codes = codes_from(w, 8, rng);
        const LabelMatrix y = labels_from(w, std::span(codes).first(3));
        Rng bank_rng(seed + 50);
        const ProbeBank bank = random_probes(K, d, bank_rng, false);
        std::vector<Vector> noise(3, Vector(d));
        for (auto& e : noise)
            for (double& x : e) x = 0.5 * rng.normal();
        const auto three = std::span(codes).first(3);

        const LossTerm ld = distance_unfolding_loss(f, codes, w);
        worst_d = std::max(worst_d, fd_error(f, ld.grads, [&] { return distance_unfolding_loss(f, codes, w).value; }));
        const LossTerm la = attribute_loss(f, three, y, bank);
        worst_a = std::max(worst_a, fd_error(f, la.grads, [&] { return attribute_loss(f, three, y, bank).value; }));
        Rng unused(0);
        const LossTerm li = identity_loss(f, three, w, 0.5, unused, &noise);
        worst_id = std::max(worst_id, fd_error(f, li.grads, [&] {
            Rng u(0);
            return identity_loss(f, three, w, 0.5, u, &noise).value;
        }));
    }
    CHECK(worst_d < 1e-4);
    CHECK(worst_a < 1e-4);
    CHECK(worst_id < 1e-4);
}

TEST_CASE("the explicit inverse-warp flow drives both losses to zero") {
    WorldConfig c = warped_config(8, 3, 7);
    c.rescale = 1.0;
    const ToyWorld w = make_world(c);
    const FlowModel t = inverse_warp(w);
    REQUIRE_NOTHROW(validate(t));
    Rng rng(8);
    const auto codes = codes_from(w, 16, rng);
    for (const auto& x : codes) CHECK(testing::max_abs_diff(flow_forward(t, x), decode(w, x)) < 1e-9);
    CHECK(distance_unfolding_loss(t, codes, w).value < 1e-6);

    std::vector<LinearProbe> axis;
    for (std::size_t k = 0; k < 3; ++k) {
        Vector v(8, 0.0);
        v[k] = 1e6;
        axis.push_back({v, 0.0, k});
    }
    CHECK(attribute_loss(t, codes, labels_from(w, codes), frozen_bank(axis)).value < 1e-6);
}
