#include "lremap/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lremap/kernels.hpp"
#include "lremap/parallel.hpp"

namespace lremap {

std::string_view mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::wstar: return "Wstar";
        case TrainMode::wstar_id: return "Wstar_ID";
        case TrainMode::wstar_a: return "Wstar_a";
    }
    return "?";
}

TrainMode parse_mode(std::string_view s) {
    if (s == "Wstar") return TrainMode::wstar;
    if (s == "Wstar_ID") return TrainMode::wstar_id;
    if (s == "Wstar_a") return TrainMode::wstar_a;
    throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected Wstar, Wstar_ID or Wstar_a)");
}

std::string_view pairing_name(Pairing p) { return p == Pairing::consecutive ? "consecutive" : "all_pairs"; }

Pairing parse_pairing(std::string_view s) {
    if (s == "consecutive") return Pairing::consecutive;
    if (s == "all_pairs") return Pairing::all_pairs;
    throw std::invalid_argument("unknown pairing '" + std::string(s) + "' (expected consecutive or all_pairs)");
}

void validate(const LossWeights& w) {
    auto ok = [](double x) { return std::isfinite(x) && x >= 0.0; };
    if (!ok(w.lambda_d) || !ok(w.lambda_id))
        throw std::invalid_argument("loss weights must be finite and >= 0 (lambda_d=" + std::to_string(w.lambda_d) +
                                    ", lambda_id=" + std::to_string(w.lambda_id) + ")");
    if (!(w.perceptual_rescale > 0.0) || !std::isfinite(w.perceptual_rescale))
        throw std::invalid_argument("perceptual_rescale must be finite and > 0");
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct Request {
    // Gradient coefficients; a term is evaluated when its flag is set.
    bool d = false, a = false, id = false;
    double coef_d = 0.0, coef_a = 0.0, coef_id = 0.0;
    Pairing pairing = Pairing::consecutive;
    double perceptual_rescale = 1.0;
    const LabelMatrix* labels = nullptr;
    const ProbeBank* bank = nullptr;
    const std::vector<Vector>* noise = nullptr;  // per-sample eps, required when id
};

struct Values {
    double l_d = 0.0, l_a = 0.0, l_id = 0.0;
};

Values evaluate(const FlowModel& flow, std::span<const Vector> codes, const ToyWorld& world, const Request& q,
                FlowGrads* grads) {
    const std::size_t n = codes.size();
    const std::size_t d = flow.dim;
    for (std::size_t i = 0; i < n; ++i)
        if (codes[i].size() != d)
            throw std::invalid_argument("loss: code " + std::to_string(i) + " has length " +
                                        std::to_string(codes[i].size()) + ", flow has d=" + std::to_string(d));
    if (q.d && world.dim() != d)
        throw std::invalid_argument("loss: world d=" + std::to_string(world.dim()) + " vs flow d=" + std::to_string(d));

    std::vector<FlowTape> tapes(n);
    std::vector<Vector> y(n), z;
    if (q.d) z.resize(n);
    parallel_for(n, [&](std::size_t i) {
        y[i] = flow_forward_taped(flow, codes[i], tapes[i]);
        if (q.d) z[i] = decode(world, codes[i]);
    });

    Values v;
    std::vector<Vector> g(n, Vector(d, 0.0));
    const auto& kt = kernels::active();

    if (q.d) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        if (q.pairing == Pairing::consecutive) {
            for (std::size_t i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
        } else {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        }
        const double inv = 1.0 / static_cast<double>(pairs.size());
        Vector diff(d);
        for (auto [i, j] : pairs) {
            const double latent = kt.sq_dist(y[i].data(), y[j].data(), d);
            const double target = q.perceptual_rescale * factor_distance(world, z[i], z[j]);
            const double delta = latent - target;
            v.l_d += delta * delta;
            const double c = q.coef_d * inv * 4.0 * delta;
            for (std::size_t k = 0; k < d; ++k) diff[k] = y[i][k] - y[j][k];
            kt.axpy(c, diff.data(), g[i].data(), d);
            kt.axpy(-c, diff.data(), g[j].data(), d);
        }
        v.l_d *= inv;
    }

    if (q.a) {
        const ProbeBank& bank = *q.bank;
        const LabelMatrix& labels = *q.labels;
        if (!bank.frozen()) throw std::logic_error("attribute loss needs a frozen probe bank");
        if (bank.dim() != d)
            throw std::invalid_argument("attribute loss: probes of width " + std::to_string(bank.dim()) +
                                        " for flow d=" + std::to_string(d));
        if (labels.rows() != n || labels.cols() != bank.size())
            throw std::invalid_argument("attribute loss: labels " + shape_string(labels.rows(), labels.cols()) +
                                        " for batch of " + std::to_string(n) + " and " +
                                        std::to_string(bank.size()) + " probes");
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < bank.size(); ++k) {
                const auto& p = bank[k];
                const double logit = kt.dot(p.weight.data(), y[i].data(), d) + p.bias;
                const double target = labels(i, k) ? 1.0 : 0.0;
                v.l_a += softplus(logit) - target * logit;
                kt.axpy(q.coef_a * inv * (sigmoid(logit) - target), p.weight.data(), g[i].data(), d);
            }
        }
        v.l_a *= inv;
    }

    std::vector<double> id_terms(n, 0.0);
    std::vector<FlowGrads> per(grads ? n : 0);
    parallel_for(n, [&](std::size_t i) {
        if (grads) per[i] = FlowGrads::zeros_like(flow);
        if (q.id) {
            const Vector& eps = (*q.noise)[i];
            Vector u = y[i];
            for (std::size_t k = 0; k < d; ++k) u[k] += eps[k];
            FlowTape inv_tape;
            const Vector back = flow_inverse_taped(flow, u, inv_tape);
            const Vector f0 = identity_features(world, codes[i]);
            const Vector f1 = identity_features(world, back);
            Vector up(f0.size());
            for (std::size_t k = 0; k < f0.size(); ++k) {
                const double e = f1[k] - f0[k];
                id_terms[i] += e * e;
                up[k] = q.coef_id * 2.0 * e / static_cast<double>(n);
            }
            if (grads) {
                const Vector dback = identity_features_vjp(world, back, up);
                Vector du(d);
                flow_backward(flow, inv_tape, dback, &per[i], du);
                kt.axpy(1.0, du.data(), g[i].data(), d);
            }
        }
        if (grads) {
            Vector dw(d);
            flow_backward(flow, tapes[i], g[i], &per[i], dw);
        }
    });
    if (q.id) {
        for (double t : id_terms) v.l_id += t;
        v.l_id /= static_cast<double>(n);
    }
    if (grads) {
        *grads = FlowGrads::zeros_like(flow);
        for (const auto& p : per) grads->add(p);
    }
    return v;
}

std::vector<Vector> draw_noise(std::size_t n, std::size_t d, double sigma, Rng& rng) {
    std::vector<Vector> eps(n, Vector(d));
    for (auto& e : eps)
        for (double& x : e) x = sigma * rng.normal();
    return eps;
}

}  // namespace

LossTerm distance_unfolding_loss(const FlowModel& flow, std::span<const Vector> codes, const ToyWorld& world,
                                 Pairing pairing, double perceptual_rescale) {
    if (codes.size() < 2)
        throw std::invalid_argument("distance loss needs at least 2 codes, got " + std::to_string(codes.size()));
    Request q;
    q.d = true;
    q.coef_d = 1.0;
    q.pairing = pairing;
    q.perceptual_rescale = perceptual_rescale;
    LossTerm t;
    t.value = evaluate(flow, codes, world, q, &t.grads).l_d;
    return t;
}

LossTerm attribute_loss(const FlowModel& flow, std::span<const Vector> codes, const LabelMatrix& labels,
                        const ProbeBank& bank) {
    if (!bank.frozen()) throw std::logic_error("attribute loss needs a frozen probe bank");
    if (codes.empty()) throw std::invalid_argument("attribute loss on an empty batch");
    Request q;
    q.a = true;
    q.coef_a = 1.0;
    q.labels = &labels;
    q.bank = &bank;
    static const ToyWorld unused;
    LossTerm t;
    t.value = evaluate(flow, codes, unused, q, &t.grads).l_a;
    return t;
}

LossTerm identity_loss(const FlowModel& flow, std::span<const Vector> codes, const ToyWorld& world,
                       double noise_sigma, Rng& rng, const std::vector<Vector>* pinned_noise) {
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    if (codes.empty()) throw std::invalid_argument("identity loss on an empty batch");
    LossTerm t;
    if (!pinned_noise && noise_sigma == 0.0) {
        // T^{-1}(T(w)) = w exactly in real arithmetic: the term and its gradient vanish.
        t.grads = FlowGrads::zeros_like(flow);
        return t;
    }
    std::vector<Vector> drawn;
    if (pinned_noise) {
        if (pinned_noise->size() != codes.size())
            throw std::invalid_argument("pinned noise has " + std::to_string(pinned_noise->size()) +
                                        " vectors for " + std::to_string(codes.size()) + " codes");
    } else {
        drawn = draw_noise(codes.size(), flow.dim, noise_sigma, rng);
    }
    Request q;
    q.id = true;
    q.coef_id = 1.0;
    q.noise = pinned_noise ? pinned_noise : &drawn;
    t.value = evaluate(flow, codes, world, q, &t.grads).l_id;
    return t;
}

LossReport total_loss(const FlowModel& flow, const Batch& batch, const ProbeBank& bank, const ToyWorld& world,
                      const LossWeights& weights, TrainMode mode, Rng& rng, FlowGrads& grads,
                      const TotalLossOptions& o) {
    validate(weights);
    const std::size_t n = batch.codes.size();
    if (n < 2) throw std::invalid_argument("total loss needs a batch of at least 2, got " + std::to_string(n));
    if (!bank.frozen()) throw std::logic_error("attribute loss needs a frozen probe bank");

    LossReport r;
    r.lambda_d = mode == TrainMode::wstar_a ? 0.0 : weights.lambda_d;
    r.lambda_id = mode == TrainMode::wstar_id ? weights.lambda_id : 0.0;
    const bool use_id = mode == TrainMode::wstar_id && (o.noise_sigma > 0.0 || o.pinned_noise);

    std::vector<Vector> drawn;
    if (use_id && !o.pinned_noise) drawn = draw_noise(n, flow.dim, o.noise_sigma, rng);

    Request q;
    q.d = true;
    q.a = true;
    q.id = use_id;
    q.coef_d = r.lambda_d;
    q.coef_a = 1.0;
    q.coef_id = r.lambda_id;
    q.pairing = o.pairing;
    q.perceptual_rescale = weights.perceptual_rescale;
    q.labels = &batch.labels;
    q.bank = &bank;
    q.noise = o.pinned_noise ? o.pinned_noise : &drawn;
    const Values v = evaluate(flow, batch.codes, world, q, &grads);
    r.l_d = v.l_d;
    r.l_a = v.l_a;
    r.l_id = v.l_id;
    r.total = r.l_a + r.lambda_d * r.l_d + r.lambda_id * r.l_id;
    r.grad_norm_total = std::sqrt(grads.squared_norm());

    if (o.term_grad_norms) {
        auto term_norm = [&](Request t) {
            FlowGrads g;
            evaluate(flow, batch.codes, world, t, &g);
            return std::sqrt(g.squared_norm());
        };
        Request only = q;
        only.a = only.id = false;
        only.coef_d = 1.0;
        r.grad_norm_d = term_norm(only);
        only = q;
        only.d = only.id = false;
        r.grad_norm_a = term_norm(only);
        if (use_id) {
            only = q;
            only.d = only.a = false;
            only.coef_id = 1.0;
            r.grad_norm_id = term_norm(only);
        }
    }
    return r;
}

}  // namespace lremap
