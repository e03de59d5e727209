#include "lremap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

#include "lremap/kernels.hpp"
#include "lremap/parallel.hpp"

namespace lremap {

AccuracyStats accuracy_suite(const Matrix& latents, const LabelMatrix& labels, Rng& rng, const SvmOptions& svm,
                             double train_fraction) {
    const std::size_t n = latents.rows(), K = labels.cols();
    if (labels.rows() != n)
        throw std::invalid_argument("accuracy_suite: " + std::to_string(labels.rows()) + " label rows for " +
                                    std::to_string(n) + " codes");
    if (K == 0) throw std::invalid_argument("accuracy_suite: no attributes");
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) pos += labels(i, k);
        if (pos < 10 || n - pos < 10)
            throw std::invalid_argument("accuracy_suite: attribute " + std::to_string(k) + " has " +
                                        std::to_string(pos) + " positive / " + std::to_string(n - pos) +
                                        " negative samples, need >= 10 of each");
    }
    const auto perm = permutation(n, rng);
    const std::size_t n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n) throw std::invalid_argument("accuracy_suite: degenerate split");
    Matrix xtr(n_train, latents.cols()), xva(n - n_train, latents.cols());
    for (std::size_t r = 0; r < n; ++r) {
        auto src = latents.row(perm[r]);
        auto dst = r < n_train ? xtr.row(r) : xva.row(r - n_train);
        std::copy(src.begin(), src.end(), dst.begin());
    }

    AccuracyStats s;
    s.per_attribute.assign(K, 0.0);
    const Rng base = rng.fork(0xacc);
    parallel_for(K, [&](std::size_t k) {
        std::vector<std::uint8_t> ytr(n_train), yva(n - n_train);
        for (std::size_t r = 0; r < n; ++r) (r < n_train ? ytr[r] : yva[r - n_train]) = labels(perm[r], k);
        Rng r = base.fork(k);
        const LinearProbe p = svm_train(xtr, ytr, r, svm, k);
        s.per_attribute[k] = probe_accuracy(p, xva, yva);
    });
    s.min_acc = *std::min_element(s.per_attribute.begin(), s.per_attribute.end());
    s.max_acc = *std::max_element(s.per_attribute.begin(), s.per_attribute.end());
    double sum = 0.0;
    for (double a : s.per_attribute) sum += a;
    s.avg_acc = sum / static_cast<double>(K);
    return s;
}

LassoFit lasso_fit(const Matrix& x, std::span<const double> y, double alpha, const LassoOptions& o) {
    const std::size_t n = x.rows(), d = x.cols();
    if (y.size() != n) throw std::invalid_argument("lasso: " + std::to_string(y.size()) + " targets for " + std::to_string(n) + " rows");
    if (n == 0) throw std::invalid_argument("lasso: no rows");
    if (!(alpha >= 0.0)) throw std::invalid_argument("lasso: alpha must be >= 0");

    // Centre so the intercept drops out; columns stored contiguously.
    Vector xmean(d, 0.0);
    double ymean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) xmean[j] += x(i, j);
        ymean += y[i];
    }
    for (double& m : xmean) m /= static_cast<double>(n);
    ymean /= static_cast<double>(n);
    std::vector<Vector> col(d, Vector(n));
    Vector sq(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[j][i] = x(i, j) - xmean[j];
        sq[j] = dot(col[j], col[j]) / static_cast<double>(n);
    }
    Vector resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - ymean;

    LassoFit fit;
    fit.weight.assign(d, 0.0);
    const auto& kt = kernels::active();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (fit.sweeps = 1; fit.sweeps <= o.max_sweeps; ++fit.sweeps) {
        double max_change = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            if (sq[j] == 0.0) continue;
            const double old = fit.weight[j];
            const double rho = kt.dot(col[j].data(), resid.data(), n) * inv_n + sq[j] * old;
            const double next = (rho > alpha ? rho - alpha : rho < -alpha ? rho + alpha : 0.0) / sq[j];
            if (next != old) {
                kt.axpy(old - next, col[j].data(), resid.data(), n);
                fit.weight[j] = next;
                max_change = std::max(max_change, std::abs(next - old));
            }
        }
        if (max_change < o.tol) break;
    }
    fit.sweeps = std::min(fit.sweeps, o.max_sweeps);
    fit.intercept = ymean - dot(fit.weight, xmean);
    return fit;
}

namespace {

double entropy(std::span<const double> p, double base) {
    if (base <= 1.0) return 0.0;
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h / std::log(base);
}

}  // namespace

DciResult dci(const Matrix& latents, const LabelMatrix& labels, double l1_alpha, double train_fraction,
              const LassoOptions& o) {
    const std::size_t n = latents.rows(), d = latents.cols(), K = labels.cols();
    if (d < 2) throw std::invalid_argument("dci: needs at least 2 latent dimensions");
    if (K < 1) throw std::invalid_argument("dci: needs at least 1 attribute");
    if (labels.rows() != n)
        throw std::invalid_argument("dci: " + std::to_string(labels.rows()) + " label rows for " + std::to_string(n) + " codes");
    const std::size_t n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n) throw std::invalid_argument("dci: degenerate split");

    Matrix xtr(n_train, d);
    std::copy(latents.data(), latents.data() + n_train * d, xtr.data());

    DciResult res;
    res.importance = Matrix(d, K);
    std::vector<double> errors(K, 0.0);
    parallel_for(K, [&](std::size_t k) {
        Vector y(n_train);
        for (std::size_t i = 0; i < n_train; ++i) y[i] = labels(i, k);
        const LassoFit fit = lasso_fit(xtr, y, l1_alpha, o);
        for (std::size_t j = 0; j < d; ++j) res.importance(j, k) = std::abs(fit.weight[j]);
        std::size_t wrong = 0;
        for (std::size_t i = n_train; i < n; ++i) {
            const double pred = dot(fit.weight, latents.row(i)) + fit.intercept;
            wrong += ((pred > 0.5) != (labels(i, k) != 0)) ? 1 : 0;
        }
        errors[k] = static_cast<double>(wrong) / static_cast<double>(n - n_train);
    });
    for (double e : errors) res.i += e;
    res.i /= static_cast<double>(K);

    const Matrix& R = res.importance;
    double total = 0.0;
    for (double v : R.values()) total += v;
    if (!(total > 0.0)) {
        res.zero_importance = true;
        return res;
    }
    Vector p(K);
    for (std::size_t j = 0; j < d; ++j) {
        double row = 0.0;
        for (std::size_t k = 0; k < K; ++k) row += R(j, k);
        if (row == 0.0) continue;
        for (std::size_t k = 0; k < K; ++k) p[k] = R(j, k) / row;
        res.d += (row / total) * (1.0 - entropy(p, static_cast<double>(K)));
    }
    Vector q(d);
    for (std::size_t k = 0; k < K; ++k) {
        double colsum = 0.0;
        for (std::size_t j = 0; j < d; ++j) colsum += R(j, k);
        if (colsum == 0.0) continue;  // attribute not captured at all: completeness 0
        for (std::size_t j = 0; j < d; ++j) q[j] = R(j, k) / colsum;
        res.c += 1.0 - entropy(q, static_cast<double>(d));
    }
    res.c /= static_cast<double>(K);
    return res;
}

TwoAfcResult two_afc(std::span<const Triplet> triplets, const DistanceFn& candidate, const DistanceFn& oracle) {
    if (triplets.empty()) throw std::invalid_argument("two_afc: empty triplet list");
    TwoAfcResult r;
    double score = 0.0;
    for (const auto& t : triplets) {
        const double oa = oracle(t.ref, t.a), ob = oracle(t.ref, t.b);
        if (oa == ob) continue;
        ++r.counted;
        const double ca = candidate(t.ref, t.a), cb = candidate(t.ref, t.b);
        if (ca == cb) {
            ++r.candidate_ties;
            score += 0.5;
        } else if ((ca < cb) == (oa < ob)) {
            score += 1.0;
        }
    }
    r.score = r.counted ? score / static_cast<double>(r.counted) : 0.0;
    return r;
}

DeviationStats deviation_stats(std::span<const CodePair> pairs, const LatentMap* map, const ToyWorld& world) {
    if (pairs.size() < 2) throw std::invalid_argument("deviation_stats: needs at least 2 pairs");
    DeviationStats s;
    s.values.resize(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
        const auto& p = pairs[i];
        s.values[i] = squared_distance(apply_map(map, p.a), apply_map(map, p.b)) - perceptual_distance(world, p.a, p.b);
    });
    const double n = static_cast<double>(pairs.size());
    for (double x : s.values) {
        s.mean += x;
        s.mean_abs += std::abs(x);
    }
    s.mean /= n;
    s.mean_abs /= n;
    double ss = 0.0;
    for (double x : s.values) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
    return s;
}

std::vector<std::array<std::size_t, 3>> sample_triplet_indices(std::size_t n, std::size_t count, Rng& rng) {
    if (n < 3) throw std::invalid_argument("triplets need a pool of at least 3 codes");
    std::vector<std::array<std::size_t, 3>> out(count);
    for (auto& t : out) {
        t[0] = rng.below(n);
        do t[1] = rng.below(n);
        while (t[1] == t[0]);
        do t[2] = rng.below(n);
        while (t[2] == t[0] || t[2] == t[1]);
    }
    return out;
}

std::vector<std::array<std::size_t, 2>> sample_pair_indices(std::size_t n, std::size_t count, Rng& rng) {
    if (n < 2) throw std::invalid_argument("pairs need a pool of at least 2 codes");
    std::vector<std::array<std::size_t, 2>> out(count);
    for (auto& p : out) {
        p[0] = rng.below(n);
        do p[1] = rng.below(n);
        while (p[1] == p[0]);
    }
    return out;
}

void write_pairs_csv(std::ostream& out, std::span<const CodePair> pairs, const LatentMap* map, const ToyWorld& world,
                     const std::string& space, bool header) {
    if (header) out << "latent_sq_dist,perceptual_dist,space\n";
    char buf[64];
    for (const auto& p : pairs) {
        const double latent = squared_distance(apply_map(map, p.a), apply_map(map, p.b));
        const double perc = perceptual_distance(world, p.a, p.b);
        std::snprintf(buf, sizeof buf, "%.17g", latent);
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", perc);
        out << buf << ',' << space << '\n';
    }
}

}  // namespace lremap
