#pragma once

// Synthetic stand-in for the generator / encoder / perceptual net / identity net.
//
// Factors z ~ N(0, I_m). Attribute k is the sign of z_k (k < K). Latent codes are
// w = Psi(z) where Psi is a frozen coupling flow. The perceptual distance is
// rescale * ||phi(z_i) - phi(z_j)||^2 with phi = alpha * R (R a rotation) in
// linear mode or a frozen MLP in stress mode. Identity features read only the
// non-attribute factors z[K:].

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lremap/flow.hpp"
#include "lremap/ndcore.hpp"

namespace lremap {

enum class FeatureMode : std::uint8_t { linear = 0, stress = 1 };

struct WorldConfig {
    std::uint64_t seed = 1;
    std::size_t dim = 64;
    std::size_t n_attributes = 8;
    FeatureMode feature_mode = FeatureMode::linear;
    double alpha = 1.0;
    double rescale = 10.0;
    // One fold amplitude per warp layer; all zeros gives an identity warp.
    std::vector<double> warp_amplitudes{0.3, 0.9, 0.3, 0.3};
    double warp_scale_amplitude = 0.0;
    std::size_t fold_count = 0;  // folded outputs per layer; 0 means K
    std::size_t id_width = 32;

    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

class ToyWorld {
public:
    WorldConfig config;
    FlowModel warp;        // Psi: factors -> W+
    Matrix rotation;       // linear mode
    Mlp feature_net;       // stress mode
    Mlp id_net;            // identity features over z[id_begin():]

    std::size_t dim() const { return warp.dim; }
    std::size_t n_attributes() const { return config.n_attributes; }
    std::size_t id_begin() const;

    friend bool operator==(const ToyWorld&, const ToyWorld&) = default;
};

ToyWorld make_world(const WorldConfig& config);

std::vector<Vector> sample_factors(const ToyWorld& world, std::size_t n, Rng& rng);
std::vector<std::uint8_t> attributes(const ToyWorld& world, std::span<const double> z);

Vector embed(const ToyWorld& world, std::span<const double> z);
Vector decode(const ToyWorld& world, std::span<const double> w);

// phi(z)
Vector features(const ToyWorld& world, std::span<const double> z);
// rescale * ||phi(z_i) - phi(z_j)||^2, on factors.
double factor_distance(const ToyWorld& world, std::span<const double> z_i, std::span<const double> z_j);
// Same, on latent codes (decodes both).
double perceptual_distance(const ToyWorld& world, std::span<const double> w_i, std::span<const double> w_j);

Vector identity_features(const ToyWorld& world, std::span<const double> w);
// d(upstream . identity_features(w)) / dw.
Vector identity_features_vjp(const ToyWorld& world, std::span<const double> w,
                             std::span<const double> upstream);

// The analytic solution in linear mode: T(w) = c * Psi^{-1}(w), c = alpha*sqrt(rescale).
// Squared distances then equal the perceptual distance exactly and every
// attribute is a coordinate sign.
class ExactSolutionMap final : public LatentMap {
public:
    explicit ExactSolutionMap(const ToyWorld& world);
    std::size_t dim() const override { return world_.dim(); }
    Vector forward(std::span<const double> w) const override;
    Vector inverse(std::span<const double> w_star) const override;
    double scale() const { return c_; }

private:
    const ToyWorld& world_;
    double c_;
};

// LRTW file.
std::vector<std::uint8_t> encode_world(const ToyWorld& world);
ToyWorld decode_world(const std::vector<std::uint8_t>& bytes);
void save_world(const std::filesystem::path& path, const ToyWorld& world);
ToyWorld load_world(const std::filesystem::path& path);

}  // namespace lremap
