#pragma once

// Training objectives for the flow T, with exact parameter gradients.
//
//   L_d  = mean over pairs of (||T(w_i) - T(w_j)||^2 - D(w_i, w_j))^2
//   L_a  = mean over samples of sum_k BCE(sigmoid(c_k . T(w) + b_k), y_k)
//   L_ID = mean over samples of ||F(w) - F(T^{-1}(T(w) + eps))||^2
//   total = L_a + lambda_d L_d + lambda_id L_ID
//
// Pairs are consecutive batch neighbours (N-1 of them) unless all-pairs mode is
// selected. Per-sample work runs through parallel_for and is reduced in index
// order, so results do not depend on the worker count.

#include <span>
#include <string_view>
#include <vector>

#include "lremap/classify.hpp"
#include "lremap/flow.hpp"
#include "lremap/oracle.hpp"

namespace lremap {

enum class TrainMode { wstar, wstar_id, wstar_a };
enum class Pairing { consecutive, all_pairs };

std::string_view mode_name(TrainMode mode);
TrainMode parse_mode(std::string_view s);
std::string_view pairing_name(Pairing p);
Pairing parse_pairing(std::string_view s);

struct LossWeights {
    double lambda_d = 10.0;
    double lambda_id = 1.0;
    // Multiplies the world's perceptual distance inside L_d.
    double perceptual_rescale = 1.0;
};

void validate(const LossWeights& w);

struct LossTerm {
    double value = 0.0;
    FlowGrads grads;
};

struct LossReport {
    double l_d = 0.0;
    double l_a = 0.0;
    double l_id = 0.0;
    double total = 0.0;
    // Weights actually applied after the mode is taken into account.
    double lambda_d = 0.0;
    double lambda_id = 0.0;
    // Per-term gradient norms; filled only when requested.
    double grad_norm_d = 0.0;
    double grad_norm_a = 0.0;
    double grad_norm_id = 0.0;
    double grad_norm_total = 0.0;
};

struct Batch {
    std::vector<Vector> codes;  // W+
    LabelMatrix labels;         // may be empty when L_a is not needed
};

LossTerm distance_unfolding_loss(const FlowModel& flow, std::span<const Vector> codes, const ToyWorld& world,
                                 Pairing pairing = Pairing::consecutive, double perceptual_rescale = 1.0);

LossTerm attribute_loss(const FlowModel& flow, std::span<const Vector> codes, const LabelMatrix& labels,
                        const ProbeBank& bank);

// Noise is drawn from rng per sample in batch order, unless `pinned_noise`
// (one vector per sample, already scaled) is given.
LossTerm identity_loss(const FlowModel& flow, std::span<const Vector> codes, const ToyWorld& world,
                       double noise_sigma, Rng& rng, const std::vector<Vector>* pinned_noise = nullptr);

struct TotalLossOptions {
    Pairing pairing = Pairing::consecutive;
    double noise_sigma = 1.0;
    const std::vector<Vector>* pinned_noise = nullptr;
    bool term_grad_norms = false;
};

// Computes the report and writes the gradient of `total` into *grads.
LossReport total_loss(const FlowModel& flow, const Batch& batch, const ProbeBank& bank, const ToyWorld& world,
                      const LossWeights& weights, TrainMode mode, Rng& rng, FlowGrads& grads,
                      const TotalLossOptions& options = {});

}  // namespace lremap
