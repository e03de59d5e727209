#pragma once

// Small dense numerical core: vectors/matrices, a counter-based RNG, fixed-depth
// MLPs with exact reverse-mode gradients, and Adam.
//
// Everything is f64. Shape errors throw std::invalid_argument with the offending
// shapes in the message.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lremap {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// y = M x
Vector matvec(const Matrix& m, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
bool all_finite(std::span<const double> a);

std::string shape_string(std::size_t rows, std::size_t cols);

// Counter-based generator: output n is splitmix64's finalizer applied to
// seed + n * 0x9E3779B97F4A7C15. The integer stream depends only on (seed, n),
// so it is identical on every platform. Doubles are built from the top 53 bits;
// normals use Box-Muller on two uniforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    // [0, 1)
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Independent child stream keyed by `stream`; does not advance this one.
    Rng fork(std::uint64_t stream) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

enum class Activation : std::uint8_t { identity = 0, tanh = 1 };

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// LeakyReLU between layers, `output` on the last layer.
struct Mlp {
    std::vector<DenseLayer> layers;
    double leaky_slope = 0.01;
    Activation output = Activation::identity;

    std::size_t in_dim() const;
    std::size_t out_dim() const;
    std::size_t param_count() const;

    friend bool operator==(const Mlp&, const Mlp&) = default;
};

// widths = {in, hidden..., out}. Weights and biases ~ U(-a, a), a = gain / sqrt(fan_in).
Mlp make_mlp(std::span<const std::size_t> widths, Activation output, double leaky_slope,
             Rng& rng, double gain = 1.0);

// Zero the last layer (weights and bias).
void zero_output_layer(Mlp& net);

void validate(const Mlp& net);

Vector mlp_apply(const Mlp& net, std::span<const double> x);

// Activations recorded by a forward pass; post[0] is the input, post.back() the
// output, pre[k] the affine result of layer k.
struct MlpTape {
    std::vector<Vector> pre;
    std::vector<Vector> post;

    const Vector& output() const { return post.back(); }
};

void mlp_forward(const Mlp& net, std::span<const double> x, MlpTape& tape);

struct MlpGrads {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;

    static MlpGrads zeros_like(const Mlp& net);
    void set_zero();
    void add(const MlpGrads& other);
    void scale(double s);
};

// Accumulates d(upstream . out)/dparams into *grads (when non-null) and writes
// d(upstream . out)/dx into dx (overwritten).
void mlp_backward(const Mlp& net, const MlpTape& tape, std::span<const double> upstream,
                  MlpGrads* grads, std::span<double> dx);

struct MlpGradient {
    MlpGrads params;
    Vector input;
};

MlpGradient mlp_grad(const Mlp& net, std::span<const double> x, std::span<const double> upstream);

// Parameter and gradient blocks in a fixed traversal order, for the optimizer.
void collect_params(Mlp& net, std::vector<std::span<double>>& out);
void collect_grads(MlpGrads& g, std::vector<std::span<double>>& out);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    Vector m;
    Vector v;
    std::uint64_t t = 0;

    AdamState() = default;
    AdamState(AdamConfig cfg, std::size_t n) : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam step over the concatenation of `params`. `lr_scale`
// multiplies config.lr for this step (schedules).
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, AdamState& state,
               double lr_scale = 1.0);

}  // namespace lremap
