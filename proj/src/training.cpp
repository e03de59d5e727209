#include "lremap/training.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "lremap/dataio.hpp"
#include "lremap/parallel.hpp"

namespace lremap {

ToyData generate_toy(WorldConfig config, std::size_t n, std::uint64_t data_seed, const HardnessCheck& check) {
    if (config.n_attributes < 1 || config.n_attributes > config.dim)
        throw std::invalid_argument("need 1 <= K <= d, got K=" + std::to_string(config.n_attributes) +
                                    " d=" + std::to_string(config.dim));
    if (n < 20) throw std::invalid_argument("need at least 20 samples, got " + std::to_string(n));
    for (std::size_t attempt = 1; attempt <= check.max_attempts; ++attempt, ++config.seed) {
        ToyData out;
        out.world = make_world(config);
        out.attempts = attempt;
        Rng rng = Rng(data_seed).fork(0xda7a);
        const auto z = sample_factors(out.world, n, rng);
        out.codes = Matrix(n, config.dim);
        out.labels = LabelMatrix(0, config.n_attributes);
        for (std::size_t i = 0; i < n; ++i) {
            const Vector w = embed(out.world, z[i]);
            std::copy(w.begin(), w.end(), out.codes.row(i).begin());
            out.labels.append(attributes(out.world, z[i]));
        }
        quantize_f32(out.codes);
        Rng acc_rng = Rng(data_seed).fork(0xba5e);
        out.baseline = accuracy_suite(out.codes, out.labels, acc_rng);
        if (out.baseline.min_acc <= check.max_min_acc) return out;
    }
    throw std::runtime_error("no world within " + std::to_string(check.max_attempts) +
                             " seeds keeps the W+ baseline min accuracy <= " + std::to_string(check.max_min_acc));
}

void validate(const TrainSchedule& s) {
    if (s.steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (s.batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (!(s.adam.lr > 0.0) || !std::isfinite(s.adam.lr)) throw std::invalid_argument("lr must be positive");
    if (!(s.noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    validate(s.weights);
}

double scheduled_lr(const TrainSchedule& s, std::size_t step) {
    if (s.lr_schedule == LrSchedule::constant) return s.adam.lr;
    const double t = static_cast<double>(step) / static_cast<double>(s.steps);
    return s.adam.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

ProbeSet make_probe_set(const Matrix& codes, std::size_t n_pairs, std::size_t n_triplets, std::uint64_t seed) {
    const Rng base(seed);
    ProbeSet p;
    Rng pr = base.fork(3);
    for (const auto& ij : sample_pair_indices(codes.rows(), n_pairs, pr)) {
        const auto a = codes.row(ij[0]), b = codes.row(ij[1]);
        p.pairs.push_back({Vector(a.begin(), a.end()), Vector(b.begin(), b.end())});
    }
    Rng tr = base.fork(2);
    for (const auto& t : sample_triplet_indices(codes.rows(), n_triplets, tr)) {
        const auto r = codes.row(t[0]), a = codes.row(t[1]), b = codes.row(t[2]);
        p.triplets.push_back({Vector(r.begin(), r.end()), Vector(a.begin(), a.end()), Vector(b.begin(), b.end())});
    }
    return p;
}

void write_timeline_header(std::ostream& out) {
    out << "step,l_a,l_d,l_id,total,grad_norm,lr,dev_mean,dev_mean_abs,dev_std,two_afc\n";
}

void write_timeline_row(std::ostream& out, const TimelineRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.l_a,
                  r.l_d, r.l_id, r.total, r.grad_norm, r.lr, r.dev_mean, r.dev_mean_abs, r.dev_std, r.two_afc);
    out << buf;
}

namespace {

TwoAfcResult mapped_two_afc(std::span<const Triplet> triplets, const LatentMap* map, const ToyWorld& world) {
    // Each member carries [T(w), w] so one triplet serves both distance functions.
    const std::size_t d = world.dim();
    auto pack = [&](const Vector& w) {
        Vector v = apply_map(map, w);
        v.insert(v.end(), w.begin(), w.end());
        return v;
    };
    std::vector<Triplet> packed(triplets.size());
    parallel_for(triplets.size(), [&](std::size_t i) {
        packed[i] = {pack(triplets[i].ref), pack(triplets[i].a), pack(triplets[i].b)};
    });
    const DistanceFn candidate = [d](std::span<const double> x, std::span<const double> y) {
        return squared_distance(x.first(d), y.first(d));
    };
    const DistanceFn oracle = [&world, d](std::span<const double> x, std::span<const double> y) {
        return perceptual_distance(world, x.subspan(d), y.subspan(d));
    };
    return two_afc(packed, candidate, oracle);
}

TimelineRow probe_row(const FlowModel& model, const ToyWorld& world, const ProbeSet& probes) {
    TimelineRow row;
    const FlowMap map(model);
    if (probes.pairs.size() >= 2) {
        const DeviationStats dev = deviation_stats(probes.pairs, &map, world);
        row.dev_mean = dev.mean;
        row.dev_mean_abs = dev.mean_abs;
        row.dev_std = dev.std;
    }
    if (!probes.triplets.empty()) row.two_afc = mapped_two_afc(probes.triplets, &map, world).score;
    return row;
}

}  // namespace

TrainResult train_flow(FlowModel model, const Matrix& codes, const LabelMatrix& labels, const ProbeBank& bank,
                       const ToyWorld& world, const TrainSchedule& s, const ProbeSet& probes,
                       const TimelineSink& sink) {
    validate(s);
    validate(model);
    if (!bank.frozen()) throw std::logic_error("training needs a frozen probe bank");
    if (codes.cols() != model.dim || world.dim() != model.dim || bank.dim() != model.dim)
        throw std::invalid_argument("dimension mismatch: codes " + std::to_string(codes.cols()) + ", model " +
                                    std::to_string(model.dim) + ", world " + std::to_string(world.dim()) +
                                    ", probes " + std::to_string(bank.dim()));
    if (labels.rows() != codes.rows() || labels.cols() != bank.size())
        throw std::invalid_argument("labels are " + shape_string(labels.rows(), labels.cols()) + ", expected " +
                                    shape_string(codes.rows(), bank.size()));
    if (codes.rows() < 2) throw std::invalid_argument("training needs at least 2 codes");

    std::vector<std::span<double>> params;
    collect_params(model, params);
    std::size_t n_params = 0;
    for (auto p : params) n_params += p.size();
    AdamState adam(s.adam, n_params);

    const Rng root(s.seed);
    Rng batch_rng = root.fork(10);
    Rng noise_rng = root.fork(11);
    FlowGrads grads = FlowGrads::zeros_like(model);
    std::vector<std::span<double>> grad_spans;
    TotalLossOptions opts;
    opts.pairing = s.pairing;
    opts.noise_sigma = s.noise_sigma;

    TrainResult result;
    auto emit = [&](std::size_t step, const LossReport& rep, double lr) {
        TimelineRow row = probe_row(model, world, probes);
        row.step = step;
        row.l_a = rep.l_a;
        row.l_d = rep.l_d;
        row.l_id = rep.l_id;
        row.total = rep.total;
        row.grad_norm = rep.grad_norm_total;
        row.lr = lr;
        result.timeline.push_back(row);
        if (sink) sink(row);
    };

    Batch batch;
    batch.codes.resize(s.batch_size);
    auto draw = [&] {
        batch.labels = LabelMatrix(0, labels.cols());
        for (std::size_t b = 0; b < s.batch_size; ++b) {
            const std::size_t i = batch_rng.below(codes.rows());
            const auto row = codes.row(i);
            batch.codes[b].assign(row.begin(), row.end());
            batch.labels.append(labels.row(i));
        }
    };

    for (std::size_t step = 0; step <= s.steps; ++step) {
        draw();
        const LossReport rep = total_loss(model, batch, bank, world, s.weights, s.mode, noise_rng, grads, opts);
        if (!std::isfinite(rep.total) || !std::isfinite(rep.grad_norm_total)) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "non-finite loss at step %zu (L_a=%g L_d=%g L_ID=%g |g|=%g)", step, rep.l_a,
                          rep.l_d, rep.l_id, rep.grad_norm_total);
            throw TrainingDiverged(buf, model, step);
        }
        const double lr = step < s.steps ? scheduled_lr(s, step) : 0.0;
        if (step == 0 || step == s.steps || (s.eval_every > 0 && step % s.eval_every == 0)) emit(step, rep, lr);
        if (step == s.steps) break;
        grad_spans.clear();
        collect_grads(grads, grad_spans);
        adam_step(params, grad_spans, adam, lr / s.adam.lr);
    }
    result.model = std::move(model);
    return result;
}

Matrix map_rows(const Matrix& codes, const LatentMap* map) {
    if (!map) return codes;
    if (map->dim() != codes.cols())
        throw std::invalid_argument("map dimension " + std::to_string(map->dim()) + " vs codes " +
                                    std::to_string(codes.cols()));
    Matrix out(codes.rows(), codes.cols());
    parallel_for(codes.rows(), [&](std::size_t i) {
        const Vector y = map->forward(codes.row(i));
        std::copy(y.begin(), y.end(), out.row(i).begin());
    });
    return out;
}

MetricsReport evaluate_space(const Matrix& codes, const LabelMatrix& labels, const LatentMap* map,
                             const ToyWorld& world, const EvalOptions& o) {
    if (codes.cols() != world.dim())
        throw std::invalid_argument("codes have dimension " + std::to_string(codes.cols()) + ", world " +
                                    std::to_string(world.dim()));
    const Matrix mapped = map_rows(codes, map);
    const Rng base(o.seed);
    MetricsReport r;
    r.n_samples = codes.rows();

    Rng acc_rng = base.fork(1);
    const AccuracyStats acc = accuracy_suite(mapped, labels, acc_rng, o.svm);
    r.min_acc = acc.min_acc;
    r.max_acc = acc.max_acc;
    r.avg_acc = acc.avg_acc;
    r.per_attribute_acc = acc.per_attribute;

    const std::size_t n_dci = std::min(o.dci_samples, codes.rows());
    Matrix dci_codes(n_dci, codes.cols());
    std::copy(mapped.data(), mapped.data() + n_dci * codes.cols(), dci_codes.data());
    LabelMatrix dci_labels(0, labels.cols());
    for (std::size_t i = 0; i < n_dci; ++i) dci_labels.append(labels.row(i));
    const DciResult d = dci(dci_codes, dci_labels, o.l1_alpha);
    r.dci_d = d.d;
    r.dci_c = d.c;
    r.dci_i = d.i;

    const ProbeSet probes = make_probe_set(codes, o.n_pairs, o.n_triplets, o.seed);
    const DeviationStats dev = deviation_stats(probes.pairs, map, world);
    r.mean_dev = dev.mean;
    r.mean_abs_dev = dev.mean_abs;
    r.std_dev = dev.std;
    r.n_pairs = probes.pairs.size();
    r.two_afc = mapped_two_afc(probes.triplets, map, world).score;
    r.n_triplets = probes.triplets.size();
    return r;
}

}  // namespace lremap
