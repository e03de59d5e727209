#pragma once

// Linear attribute probes: logistic probes pretrained in W+ and frozen, and a
// hinge-loss linear "SVM" used for evaluation and edit directions.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lremap/ndcore.hpp"

namespace lremap {

// n x K binary labels, row-major.
class LabelMatrix {
public:
    LabelMatrix() = default;
    LabelMatrix(std::size_t n, std::size_t k) : n_(n), k_(k), data_(n * k, 0) {}

    std::size_t rows() const { return n_; }
    std::size_t cols() const { return k_; }
    std::uint8_t& operator()(std::size_t i, std::size_t k) { return data_[i * k_ + k]; }
    std::uint8_t operator()(std::size_t i, std::size_t k) const { return data_[i * k_ + k]; }
    std::span<const std::uint8_t> row(std::size_t i) const { return {data_.data() + i * k_, k_}; }
    std::vector<std::uint8_t> column(std::size_t k) const;
    void append(std::span<const std::uint8_t> row);

    friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::size_t k_ = 0;
    std::vector<std::uint8_t> data_;
};

struct LinearProbe {
    Vector weight;
    double bias = 0.0;
    std::size_t attribute_index = 0;

    friend bool operator==(const LinearProbe&, const LinearProbe&) = default;
};

double probe_logit(const LinearProbe& probe, std::span<const double> w);
// sigmoid(weight . w + bias)
double probe_predict(const LinearProbe& probe, std::span<const double> w);
// weight / ||weight||; throws on a zero weight.
Vector hyperplane_direction(const LinearProbe& probe);
double probe_accuracy(const LinearProbe& probe, const Matrix& latents, std::span<const std::uint8_t> labels);

enum class BankKind : std::uint8_t { pretrained = 0, random = 1, random_shared = 2 };

class ProbeBank {
public:
    ProbeBank() = default;
    ProbeBank(std::vector<LinearProbe> probes, BankKind kind = BankKind::pretrained);

    std::size_t size() const { return probes_.size(); }
    std::size_t dim() const { return probes_.empty() ? 0 : probes_[0].weight.size(); }
    BankKind kind() const { return kind_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    const LinearProbe& operator[](std::size_t k) const { return probes_[k]; }
    const std::vector<LinearProbe>& probes() const { return probes_; }
    // Throws std::logic_error once frozen.
    LinearProbe& mutable_probe(std::size_t k);

    friend bool operator==(const ProbeBank&, const ProbeBank&) = default;

private:
    std::vector<LinearProbe> probes_;
    BankKind kind_ = BankKind::pretrained;
    bool frozen_ = false;
};

struct PretrainOptions {
    std::size_t epochs = 200;
    std::size_t batch_size = 256;
    double lr = 1e-2;
};

// One logistic probe per attribute (sigmoid + BCE, Adam), returned frozen.
ProbeBank pretrain_probes(const Matrix& latents, const LabelMatrix& labels, Rng& rng,
                          const PretrainOptions& options = {});

// Untrained frozen banks for the random-classifier ablations. `shared` draws one
// K x d layer from a single stream instead of K independent probes.
ProbeBank random_probes(std::size_t k, std::size_t d, Rng& rng, bool shared);

struct SvmOptions {
    std::size_t epochs = 20;
    double reg_lambda = 1e-3;
};

// L2-regularised hinge loss by Pegasos subgradient steps over a seeded shuffle.
// Inputs are centred and scaled by one isotropic factor before solving; the
// returned probe acts on raw inputs and points toward the positive class.
LinearProbe svm_train(const Matrix& latents, std::span<const std::uint8_t> labels, Rng& rng,
                      const SvmOptions& options = {}, std::size_t attribute_index = 0);

// LRPB file: magic, K u32, d u32, then per probe weights f64[d] and bias f64.
// Loaded banks are frozen.
std::vector<std::uint8_t> encode_probes(const ProbeBank& bank);
ProbeBank decode_probes(const std::vector<std::uint8_t>& bytes);
void save_probes(const std::filesystem::path& path, const ProbeBank& bank);
ProbeBank load_probes(const std::filesystem::path& path);

}  // namespace lremap
