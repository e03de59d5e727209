#pragma once

// Evaluation suite: linear-separation accuracy, DCI, 2AFC agreement and
// distance-deviation statistics.

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lremap/classify.hpp"
#include "lremap/flow.hpp"
#include "lremap/oracle.hpp"

namespace lremap {

struct AccuracyStats {
    double min_acc = 0.0;
    double max_acc = 0.0;
    double avg_acc = 0.0;
    std::vector<double> per_attribute;
};

// Per attribute: svm_train on a seeded 80% split, accuracy on the other 20%.
AccuracyStats accuracy_suite(const Matrix& latents, const LabelMatrix& labels, Rng& rng,
                             const SvmOptions& svm = {}, double train_fraction = 0.8);

struct DciResult {
    double d = 0.0;
    double c = 0.0;
    double i = 0.0;
    bool zero_importance = false;
    Matrix importance;  // dims x attributes
};

struct LassoOptions {
    double tol = 1e-8;
    std::size_t max_sweeps = 10000;
};

struct LassoFit {
    Vector weight;
    double intercept = 0.0;
    std::size_t sweeps = 0;
};

// minimise (1/2n)||y - Xw - b||^2 + alpha ||w||_1 by cyclic coordinate descent.
LassoFit lasso_fit(const Matrix& x, std::span<const double> y, double alpha, const LassoOptions& o = {});

// First `train_fraction` of the rows fit the regressors, the rest measure I.
DciResult dci(const Matrix& latents, const LabelMatrix& labels, double l1_alpha = 0.02,
              double train_fraction = 0.8, const LassoOptions& o = {});

struct Triplet {
    Vector ref;
    Vector a;
    Vector b;
};

using DistanceFn = std::function<double(std::span<const double>, std::span<const double>)>;

struct TwoAfcResult {
    double score = 0.0;
    std::size_t counted = 0;       // triplets left after dropping oracle ties
    std::size_t candidate_ties = 0;
};

TwoAfcResult two_afc(std::span<const Triplet> triplets, const DistanceFn& candidate, const DistanceFn& oracle);

struct DeviationStats {
    double mean = 0.0;
    double mean_abs = 0.0;
    double std = 0.0;  // n-1 denominator
    std::vector<double> values;
};

struct CodePair {
    Vector a;
    Vector b;
};

// x = ||T(w_i) - T(w_j)||^2 - D(w_i, w_j); T is the identity when null.
DeviationStats deviation_stats(std::span<const CodePair> pairs, const LatentMap* map, const ToyWorld& world);

// Seeded index sampling over a pool of n codes (distinct members within each tuple).
std::vector<std::array<std::size_t, 3>> sample_triplet_indices(std::size_t n, std::size_t count, Rng& rng);
std::vector<std::array<std::size_t, 2>> sample_pair_indices(std::size_t n, std::size_t count, Rng& rng);

struct MetricsReport {
    double min_acc = 0.0, max_acc = 0.0, avg_acc = 0.0;
    double dci_d = 0.0, dci_c = 0.0, dci_i = 0.0;
    double mean_dev = 0.0, mean_abs_dev = 0.0, std_dev = 0.0;
    double two_afc = 0.0;
    std::size_t n_samples = 0, n_pairs = 0, n_triplets = 0;
    std::vector<double> per_attribute_acc;
};

// Writes `latent_sq_dist,perceptual_dist,space` rows.
void write_pairs_csv(std::ostream& out, std::span<const CodePair> pairs, const LatentMap* map,
                     const ToyWorld& world, const std::string& space, bool header);

}  // namespace lremap
