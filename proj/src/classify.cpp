#include "lremap/classify.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lremap/binary_io.hpp"
#include "lremap/kernels.hpp"
#include "lremap/parallel.hpp"

namespace lremap {

std::vector<std::uint8_t> LabelMatrix::column(std::size_t k) const {
    std::vector<std::uint8_t> c(n_);
    for (std::size_t i = 0; i < n_; ++i) c[i] = (*this)(i, k);
    return c;
}

void LabelMatrix::append(std::span<const std::uint8_t> row) {
    if (n_ == 0 && k_ == 0) k_ = row.size();
    if (row.size() != k_)
        throw std::invalid_argument("labels: row of " + std::to_string(row.size()) + " attributes, expected " +
                                    std::to_string(k_));
    data_.insert(data_.end(), row.begin(), row.end());
    ++n_;
}

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_probe_input(const LinearProbe& p, std::size_t n) {
    if (n != p.weight.size())
        throw std::invalid_argument("probe: input of length " + std::to_string(n) + " for weight of length " +
                                    std::to_string(p.weight.size()));
}

void require_both_classes(std::span<const std::uint8_t> y, std::size_t attribute, const char* who) {
    std::size_t pos = 0;
    for (auto v : y) pos += v ? 1 : 0;
    if (pos == 0 || pos == y.size())
        throw std::invalid_argument(std::string(who) + ": attribute " + std::to_string(attribute) +
                                    " has a single class (" + std::to_string(pos) + " of " +
                                    std::to_string(y.size()) + " positive)");
}

}  // namespace

double probe_logit(const LinearProbe& probe, std::span<const double> w) {
    check_probe_input(probe, w.size());
    return dot(probe.weight, w) + probe.bias;
}

double probe_predict(const LinearProbe& probe, std::span<const double> w) {
    return sigmoid(probe_logit(probe, w));
}

Vector hyperplane_direction(const LinearProbe& probe) {
    const double n = norm2(probe.weight);
    if (!(n > 0.0) || !std::isfinite(n))
        throw std::invalid_argument("hyperplane_direction: probe " + std::to_string(probe.attribute_index) +
                                    " has zero or non-finite weight");
    Vector d = probe.weight;
    for (double& x : d) x /= n;
    return d;
}

double probe_accuracy(const LinearProbe& probe, const Matrix& latents, std::span<const std::uint8_t> labels) {
    if (labels.size() != latents.rows())
        throw std::invalid_argument("probe_accuracy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(latents.rows()) + " codes");
    if (latents.rows() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < latents.rows(); ++i)
        hits += ((probe_logit(probe, latents.row(i)) > 0.0) == (labels[i] != 0)) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(latents.rows());
}

ProbeBank::ProbeBank(std::vector<LinearProbe> probes, BankKind kind) : probes_(std::move(probes)), kind_(kind) {
    for (std::size_t k = 0; k < probes_.size(); ++k) {
        if (probes_[k].weight.size() != probes_[0].weight.size())
            throw std::invalid_argument("probe bank: probe " + std::to_string(k) + " has width " +
                                        std::to_string(probes_[k].weight.size()) + ", probe 0 has " +
                                        std::to_string(probes_[0].weight.size()));
        probes_[k].attribute_index = k;
    }
}

LinearProbe& ProbeBank::mutable_probe(std::size_t k) {
    if (frozen_) throw std::logic_error("probe bank is frozen; probe " + std::to_string(k) + " cannot be modified");
    return probes_.at(k);
}

ProbeBank pretrain_probes(const Matrix& latents, const LabelMatrix& labels, Rng& rng, const PretrainOptions& o) {
    const std::size_t n = latents.rows(), d = latents.cols(), K = labels.cols();
    if (labels.rows() != n)
        throw std::invalid_argument("pretrain_probes: " + std::to_string(labels.rows()) + " label rows for " +
                                    std::to_string(n) + " codes");
    if (o.epochs == 0 || o.batch_size == 0) throw std::invalid_argument("pretrain_probes: epochs and batch size must be >= 1");
    for (std::size_t k = 0; k < K; ++k) require_both_classes(labels.column(k), k, "pretrain_probes");

    std::vector<LinearProbe> probes(K);
    const Rng base = rng.fork(0x9e7a);
    parallel_for(K, [&](std::size_t k) {
        Rng r = base.fork(k);
        LinearProbe p{Vector(d, 0.0), 0.0, k};
        Vector grad(d + 1);
        AdamState st(AdamConfig{o.lr}, d + 1);
        std::vector<std::span<double>> ps{std::span<double>(p.weight), std::span<double>(&p.bias, 1)};
        std::vector<std::span<double>> gs{std::span<double>(grad.data(), d), std::span<double>(grad.data() + d, 1)};
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t e = 0; e < o.epochs; ++e) {
            r.shuffle(order);
            for (std::size_t start = 0; start < n; start += o.batch_size) {
                const std::size_t stop = std::min(n, start + o.batch_size);
                std::fill(grad.begin(), grad.end(), 0.0);
                for (std::size_t b = start; b < stop; ++b) {
                    const std::size_t i = order[b];
                    const auto x = latents.row(i);
                    const double err = sigmoid(dot(p.weight, x) + p.bias) - (labels(i, k) ? 1.0 : 0.0);
                    for (std::size_t j = 0; j < d; ++j) grad[j] += err * x[j];
                    grad[d] += err;
                }
                const double inv = 1.0 / static_cast<double>(stop - start);
                for (double& g : grad) g *= inv;
                adam_step(ps, gs, st);
            }
        }
        probes[k] = std::move(p);
    });
    ProbeBank bank(std::move(probes), BankKind::pretrained);
    bank.freeze();
    return bank;
}

ProbeBank random_probes(std::size_t k, std::size_t d, Rng& rng, bool shared) {
    if (k == 0 || d == 0) throw std::invalid_argument("random_probes: K and d must be >= 1");
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<LinearProbe> probes(k);
    Rng shared_stream = rng.fork(0x1a7e);
    for (std::size_t i = 0; i < k; ++i) {
        Rng own = rng.fork(0x7a00 + i);
        Rng& r = shared ? shared_stream : own;
        probes[i].weight.resize(d);
        for (double& w : probes[i].weight) w = r.uniform(-a, a);
        probes[i].bias = r.uniform(-a, a);
    }
    ProbeBank bank(std::move(probes), shared ? BankKind::random_shared : BankKind::random);
    bank.freeze();
    return bank;
}

LinearProbe svm_train(const Matrix& latents, std::span<const std::uint8_t> labels, Rng& rng,
                      const SvmOptions& o, std::size_t attribute_index) {
    const std::size_t n = latents.rows(), d = latents.cols();
    if (labels.size() != n)
        throw std::invalid_argument("svm_train: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " codes");
    if (!(o.reg_lambda > 0.0)) throw std::invalid_argument("svm_train: reg_lambda must be positive");
    if (o.epochs == 0) throw std::invalid_argument("svm_train: epochs must be >= 1");
    require_both_classes(labels, attribute_index, "svm_train");

    // Centre, then one isotropic scale so the mean squared norm is d.
    Vector mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) kernels::active().axpy(1.0, latents.row(i).data(), mu.data(), d);
    for (double& x : mu) x /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += squared_distance(latents.row(i), mu);
    double scale = std::sqrt(ss / static_cast<double>(n * d));
    if (!(scale > 0.0)) scale = 1.0;

    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x(i, j) = (latents(i, j) - mu[j]) / scale;

    // Bias as an extra constant feature; Pegasos with projection onto the
    // 1/sqrt(lambda) ball and averaging over the final epoch.
    const double lambda = o.reg_lambda;
    const double radius = 1.0 / std::sqrt(lambda);
    Vector w(d, 0.0), avg(d, 0.0);
    double b = 0.0, avg_b = 0.0;
    std::size_t n_avg = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::uint64_t t = 0;
    const auto& kt = kernels::active();
    for (std::size_t e = 0; e < o.epochs; ++e) {
        rng.shuffle(order);
        for (std::size_t i : order) {
            ++t;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double y = labels[i] ? 1.0 : -1.0;
            const double* xi = x.row(i).data();
            const double margin = y * (kt.dot(w.data(), xi, d) + b);
            const double shrink = 1.0 - eta * lambda;
            for (double& v : w) v *= shrink;
            b *= shrink;
            if (margin < 1.0) {
                kt.axpy(eta * y, xi, w.data(), d);
                b += eta * y;
            }
            const double norm = std::sqrt(kt.dot(w.data(), w.data(), d) + b * b);
            if (norm > radius) {
                const double f = radius / norm;
                for (double& v : w) v *= f;
                b *= f;
            }
            if (e + 1 == o.epochs) {
                kt.axpy(1.0, w.data(), avg.data(), d);
                avg_b += b;
                ++n_avg;
            }
        }
    }
    for (double& v : avg) v /= static_cast<double>(n_avg);
    avg_b /= static_cast<double>(n_avg);

    LinearProbe p;
    p.attribute_index = attribute_index;
    p.weight.resize(d);
    for (std::size_t j = 0; j < d; ++j) p.weight[j] = avg[j] / scale;
    p.bias = avg_b - dot(p.weight, mu);

    // Orient toward the positive class mean.
    Vector diff(d, 0.0);
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) n_pos += labels[i] ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wgt = labels[i] ? 1.0 / static_cast<double>(n_pos) : -1.0 / static_cast<double>(n - n_pos);
        kt.axpy(wgt, latents.row(i).data(), diff.data(), d);
    }
    if (dot(p.weight, diff) < 0.0) {
        for (double& v : p.weight) v = -v;
        p.bias = -p.bias;
    }
    return p;
}

std::vector<std::uint8_t> encode_probes(const ProbeBank& bank) {
    ByteWriter w;
    w.magic("LRPB");
    w.u32(static_cast<std::uint32_t>(bank.size()));
    w.u32(static_cast<std::uint32_t>(bank.dim()));
    for (const auto& p : bank.probes()) {
        for (double x : p.weight) w.f64(x);
        w.f64(p.bias);
    }
    return w.bytes();
}

ProbeBank decode_probes(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "LRPB");
    r.expect_magic("LRPB");
    const std::uint32_t K = r.u32();
    const std::uint32_t d = r.u32();
    if (K == 0 || d == 0) r.fail(FormatErrorKind::invalid, "empty probe bank");
    if (static_cast<std::size_t>(K) * (d + 1) > r.remaining() / 8)
        r.fail(FormatErrorKind::truncated, std::to_string(K) + " probes of width " + std::to_string(d) +
                                               " exceed remaining bytes");
    std::vector<LinearProbe> probes(K);
    for (std::uint32_t k = 0; k < K; ++k) {
        probes[k].weight.resize(d);
        for (double& x : probes[k].weight) x = r.f64();
        probes[k].bias = r.f64();
    }
    r.expect_end();
    ProbeBank bank(std::move(probes));
    bank.freeze();
    return bank;
}

void save_probes(const std::filesystem::path& path, const ProbeBank& bank) {
    write_file_bytes(path, encode_probes(bank));
}

ProbeBank load_probes(const std::filesystem::path& path) { return decode_probes(read_file_bytes(path)); }

}  // namespace lremap
