#pragma once

// Toy-data generation, the Adam training loop for the flow, and the per-space
// evaluation report.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lremap/classify.hpp"
#include "lremap/flow.hpp"
#include "lremap/losses.hpp"
#include "lremap/metrics.hpp"
#include "lremap/oracle.hpp"

namespace lremap {

struct ToyData {
    ToyWorld world;
    Matrix codes;  // W+, already rounded through f32
    LabelMatrix labels;
    AccuracyStats baseline;  // accuracy_suite directly in W+
    std::size_t attempts = 1;
};

struct HardnessCheck {
    double max_min_acc = 0.85;
    std::size_t max_attempts = 20;
};

// Samples n codes from make_world(config). If the W+ baseline min accuracy exceeds
// the bound, the world seed is bumped by one and the world rebuilt.
ToyData generate_toy(WorldConfig config, std::size_t n, std::uint64_t data_seed, const HardnessCheck& check = {});

enum class LrSchedule { constant, cosine };

struct TrainSchedule {
    std::size_t steps = 3000;
    std::size_t batch_size = 8;
    TrainMode mode = TrainMode::wstar;
    std::size_t eval_every = 500;  // 0: only the first and last step
    LossWeights weights;
    AdamConfig adam;
    LrSchedule lr_schedule = LrSchedule::constant;
    double noise_sigma = 1.0;
    Pairing pairing = Pairing::consecutive;
    std::uint64_t seed = 1;
};

void validate(const TrainSchedule& s);
double scheduled_lr(const TrainSchedule& s, std::size_t step);

// Fixed pairs and triplets for cheap progress readings during training.
struct ProbeSet {
    std::vector<CodePair> pairs;
    std::vector<Triplet> triplets;
};

ProbeSet make_probe_set(const Matrix& codes, std::size_t n_pairs, std::size_t n_triplets, std::uint64_t seed);

struct TimelineRow {
    std::size_t step = 0;
    double l_a = 0.0, l_d = 0.0, l_id = 0.0, total = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double dev_mean = 0.0, dev_mean_abs = 0.0, dev_std = 0.0;
    double two_afc = 0.0;
};

void write_timeline_header(std::ostream& out);
void write_timeline_row(std::ostream& out, const TimelineRow& row);

// Thrown when the loss or gradient stops being finite. `last_good` holds the
// parameters before the failing step.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, FlowModel last_good, std::size_t step)
        : std::runtime_error(what), last_good(std::move(last_good)), step(step) {}
    FlowModel last_good;
    std::size_t step;
};

struct TrainResult {
    FlowModel model;
    std::vector<TimelineRow> timeline;
};

using TimelineSink = std::function<void(const TimelineRow&)>;

TrainResult train_flow(FlowModel model, const Matrix& codes, const LabelMatrix& labels, const ProbeBank& bank,
                       const ToyWorld& world, const TrainSchedule& schedule, const ProbeSet& probes,
                       const TimelineSink& sink = {});

struct EvalOptions {
    std::size_t n_pairs = 600;
    std::size_t n_triplets = 2000;
    std::size_t dci_samples = 2000;
    double l1_alpha = 0.02;
    SvmOptions svm;
    std::uint64_t seed = 1;
};

// Full metric suite on `codes` (W+) seen through `map` (identity when null).
// Every random draw comes from options.seed, so the W+ and W* rows share splits,
// pairs and triplets.
MetricsReport evaluate_space(const Matrix& codes, const LabelMatrix& labels, const LatentMap* map,
                             const ToyWorld& world, const EvalOptions& options);

Matrix map_rows(const Matrix& codes, const LatentMap* map);

}  // namespace lremap
