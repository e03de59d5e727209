#include "lremap/ndcore.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lremap/kernels.hpp"

namespace lremap {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string(rows, cols));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string shape_string(std::size_t rows, std::size_t cols) {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

Vector matvec(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.cols())
        throw std::invalid_argument("matvec: matrix " + shape_string(m.rows(), m.cols()) +
                                    " vs vector of length " + std::to_string(x.size()));
    Vector y(m.rows());
    kernels::active().gemv(m.data(), m.rows(), m.cols(), x.data(), nullptr, y.data());
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("dot: length " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    return kernels::active().dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("squared_distance: length " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    return kernels::active().sq_dist(a.data(), b.data(), a.size());
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Rng

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::fork(std::uint64_t stream) const {
    return Rng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ull)));
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    rng.shuffle(p);
    return p;
}

// ---------------------------------------------------------------------------
// Mlp

std::size_t Mlp::in_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
std::size_t Mlp::out_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

void validate(const Mlp& net) {
    if (net.layers.empty()) throw std::invalid_argument("Mlp: no layers");
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& l = net.layers[k];
        if (l.bias.size() != l.weight.rows())
            throw std::invalid_argument("Mlp layer " + std::to_string(k) + ": weight " +
                                        shape_string(l.weight.rows(), l.weight.cols()) +
                                        " with bias of length " + std::to_string(l.bias.size()));
        if (k > 0 && net.layers[k - 1].weight.rows() != l.weight.cols())
            throw std::invalid_argument(
                "Mlp layer " + std::to_string(k) + ": input width " +
                std::to_string(l.weight.cols()) + " does not chain with previous output " +
                std::to_string(net.layers[k - 1].weight.rows()));
    }
}

Mlp make_mlp(std::span<const std::size_t> widths, Activation output, double leaky_slope,
             Rng& rng, double gain) {
    if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least in and out widths");
    Mlp net;
    net.leaky_slope = leaky_slope;
    net.output = output;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        const std::size_t in = widths[k];
        const std::size_t out = widths[k + 1];
        const double a = gain / std::sqrt(static_cast<double>(in));
        DenseLayer layer{Matrix(out, in), Vector(out)};
        for (double& w : layer.weight.values()) w = rng.uniform(-a, a);
        for (double& b : layer.bias) b = rng.uniform(-a, a);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

void zero_output_layer(Mlp& net) {
    auto& last = net.layers.back();
    std::fill(last.weight.values().begin(), last.weight.values().end(), 0.0);
    std::fill(last.bias.begin(), last.bias.end(), 0.0);
}

namespace {

void check_input(const Mlp& net, std::size_t n) {
    if (net.layers.empty()) throw std::invalid_argument("mlp: network has no layers");
    if (n != net.in_dim())
        throw std::invalid_argument("mlp: input of length " + std::to_string(n) +
                                    " for first layer " +
                                    shape_string(net.layers[0].weight.rows(), net.in_dim()));
}

}  // namespace

void mlp_forward(const Mlp& net, std::span<const double> x, MlpTape& tape) {
    check_input(net, x.size());
    const auto& kt = kernels::active();
    const std::size_t n = net.layers.size();
    tape.pre.resize(n);
    tape.post.resize(n + 1);
    tape.post[0].assign(x.begin(), x.end());
    for (std::size_t k = 0; k < n; ++k) {
        const auto& l = net.layers[k];
        Vector& z = tape.pre[k];
        z.resize(l.weight.rows());
        kt.gemv(l.weight.data(), l.weight.rows(), l.weight.cols(), tape.post[k].data(),
                l.bias.data(), z.data());
        Vector& a = tape.post[k + 1];
        a.resize(z.size());
        if (k + 1 < n) {
            for (std::size_t i = 0; i < z.size(); ++i)
                a[i] = z[i] > 0.0 ? z[i] : net.leaky_slope * z[i];
        } else if (net.output == Activation::tanh) {
            for (std::size_t i = 0; i < z.size(); ++i) a[i] = std::tanh(z[i]);
        } else {
            a = z;
        }
    }
}

Vector mlp_apply(const Mlp& net, std::span<const double> x) {
    MlpTape tape;
    mlp_forward(net, x, tape);
    return std::move(tape.post.back());
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
    MlpGrads g;
    for (const auto& l : net.layers) {
        g.weight.emplace_back(l.weight.rows(), l.weight.cols());
        g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
}

void MlpGrads::set_zero() {
    for (auto& w : weight) std::fill(w.values().begin(), w.values().end(), 0.0);
    for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void MlpGrads::add(const MlpGrads& other) {
    const auto& kt = kernels::active();
    for (std::size_t k = 0; k < weight.size(); ++k) {
        kt.axpy(1.0, other.weight[k].data(), weight[k].data(), weight[k].size());
        kt.axpy(1.0, other.bias[k].data(), bias[k].data(), bias[k].size());
    }
}

void MlpGrads::scale(double s) {
    for (auto& w : weight)
        for (double& x : w.values()) x *= s;
    for (auto& b : bias)
        for (double& x : b) x *= s;
}

void mlp_backward(const Mlp& net, const MlpTape& tape, std::span<const double> upstream,
                  MlpGrads* grads, std::span<double> dx) {
    const std::size_t n = net.layers.size();
    if (upstream.size() != net.out_dim())
        throw std::invalid_argument("mlp_backward: upstream of length " +
                                    std::to_string(upstream.size()) + " for output width " +
                                    std::to_string(net.out_dim()));
    if (dx.size() != net.in_dim())
        throw std::invalid_argument("mlp_backward: input gradient buffer of length " +
                                    std::to_string(dx.size()) + " for input width " +
                                    std::to_string(net.in_dim()));
    if (tape.pre.size() != n) throw std::invalid_argument("mlp_backward: tape does not match network");

    const auto& kt = kernels::active();
    Vector delta(upstream.begin(), upstream.end());
    // Output nonlinearity.
    if (net.output == Activation::tanh) {
        const Vector& y = tape.post[n];
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= 1.0 - y[i] * y[i];
    }
    Vector below;
    for (std::size_t k = n; k-- > 0;) {
        const auto& l = net.layers[k];
        const std::size_t rows = l.weight.rows();
        const std::size_t cols = l.weight.cols();
        if (grads) {
            kt.ger_acc(grads->weight[k].data(), rows, cols, delta.data(), tape.post[k].data());
            kt.axpy(1.0, delta.data(), grads->bias[k].data(), rows);
        }
        below.assign(cols, 0.0);
        kt.gemv_t_acc(l.weight.data(), rows, cols, delta.data(), below.data());
        if (k > 0) {
            const Vector& z = tape.pre[k - 1];
            for (std::size_t i = 0; i < cols; ++i)
                if (!(z[i] > 0.0)) below[i] *= net.leaky_slope;
        }
        delta.swap(below);
    }
    std::copy(delta.begin(), delta.end(), dx.begin());
}

MlpGradient mlp_grad(const Mlp& net, std::span<const double> x, std::span<const double> upstream) {
    MlpTape tape;
    mlp_forward(net, x, tape);
    MlpGradient g{MlpGrads::zeros_like(net), Vector(net.in_dim())};
    mlp_backward(net, tape, upstream, &g.params, g.input);
    return g;
}

void collect_params(Mlp& net, std::vector<std::span<double>>& out) {
    for (auto& l : net.layers) {
        out.emplace_back(l.weight.values());
        out.emplace_back(l.bias);
    }
}

void collect_grads(MlpGrads& g, std::vector<std::span<double>>& out) {
    for (std::size_t k = 0; k < g.weight.size(); ++k) {
        out.emplace_back(g.weight[k].values());
        out.emplace_back(g.bias[k]);
    }
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, AdamState& state, double lr_scale) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                    " parameter blocks vs " + std::to_string(grads.size()) +
                                    " gradient blocks");
    std::size_t total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size())
            throw std::invalid_argument("adam_step: block " + std::to_string(i) + " has " +
                                        std::to_string(params[i].size()) + " params vs " +
                                        std::to_string(grads[i].size()) + " grads");
        total += params[i].size();
    }
    if (state.m.size() != total || state.v.size() != total)
        throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                    " moments for " + std::to_string(total) + " parameters");

    state.t += 1;
    const auto& c = state.config;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const auto& kt = kernels::active();
    std::size_t off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t n = params[i].size();
        kt.adam_update(params[i].data(), grads[i].data(), state.m.data() + off,
                       state.v.data() + off, n, c.lr * lr_scale, c.beta1, c.beta2, c.eps, bc1,
                       bc2);
        off += n;
    }
}

}  // namespace lremap
