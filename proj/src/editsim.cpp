#include "lremap/editsim.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

#include "lremap/parallel.hpp"

namespace lremap {

std::string_view space_name(EditSpace s) { return s == EditSpace::wplus ? "wplus" : "wstar"; }

void validate(const EditConfig& cfg) {
    if (!std::isfinite(cfg.step)) throw std::invalid_argument("edit: step must be finite");
    const double n = norm2(cfg.direction);
    if (std::abs(n - 1.0) > 1e-10)
        throw std::invalid_argument("edit: direction norm " + std::to_string(n) + " is not 1");
}

Vector edit(std::span<const double> w, const EditConfig& cfg, const LatentMap* map) {
    if (cfg.direction.size() != w.size())
        throw std::invalid_argument("edit: direction of length " + std::to_string(cfg.direction.size()) +
                                    " for code of length " + std::to_string(w.size()));
    if (cfg.space == EditSpace::wplus) {
        Vector out(w.begin(), w.end());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += cfg.step * cfg.direction[i];
        return out;
    }
    if (!map) throw std::invalid_argument("edit: W* editing needs a flow");
    Vector y = map->forward(w);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += cfg.step * cfg.direction[i];
    return map->inverse(y);
}

EditReport evaluate_edit(std::span<const Vector> samples, const EditConfig& cfg, const LatentMap* map,
                         const ToyWorld& world) {
    validate(cfg);
    if (samples.empty()) throw std::invalid_argument("evaluate_edit: no samples");
    const std::size_t k = cfg.attribute_index;
    if (k >= world.n_attributes())
        throw std::invalid_argument("evaluate_edit: attribute " + std::to_string(k) + " out of range (K=" +
                                    std::to_string(world.n_attributes()) + ")");
    EditReport rep;
    rep.n_samples = samples.size();
    rep.rows.resize(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const Vector& w = samples[i];
        const auto before = attributes(world, decode(world, w));
        EditConfig c = cfg;
        if (before[k]) c.step = -cfg.step;
        const Vector moved = edit(w, c, map);
        const auto after = attributes(world, decode(world, moved));
        EditRow& row = rep.rows[i];
        row.sample_id = i;
        row.target_flipped = after[k] != before[k];
        for (std::size_t j = 0; j < before.size(); ++j)
            if (j != k && after[j] != before[j]) ++row.n_offtarget_flips;
        row.identity_drift = squared_distance(identity_features(world, w), identity_features(world, moved));
    });
    for (const auto& r : rep.rows) {
        rep.target_flip_rate += r.target_flipped ? 1.0 : 0.0;
        rep.offtarget_flip_rate += r.n_offtarget_flips ? 1.0 : 0.0;
        rep.identity_drift += r.identity_drift;
    }
    const double n = static_cast<double>(samples.size());
    rep.target_flip_rate /= n;
    rep.offtarget_flip_rate /= n;
    rep.identity_drift /= n;
    return rep;
}

Vector edit_direction(const Matrix& codes, std::span<const std::uint8_t> labels, const LatentMap* map, Rng& rng,
                      const SvmOptions& svm) {
    if (!map) return hyperplane_direction(svm_train(codes, labels, rng, svm));
    Matrix mapped(codes.rows(), codes.cols());
    parallel_for(codes.rows(), [&](std::size_t i) {
        const Vector y = map->forward(codes.row(i));
        std::copy(y.begin(), y.end(), mapped.row(i).begin());
    });
    return hyperplane_direction(svm_train(mapped, labels, rng, svm));
}

void write_edit_csv_header(std::ostream& out) {
    out << "sample_id,space,attribute,step,target_flipped,n_offtarget_flips,identity_drift\n";
}

void write_edit_rows(std::ostream& out, const EditReport& report, const EditConfig& cfg) {
    char buf[64];
    for (const auto& r : report.rows) {
        out << r.sample_id << ',' << space_name(cfg.space) << ',' << cfg.attribute_index << ',';
        std::snprintf(buf, sizeof buf, "%.17g", cfg.step);
        out << buf << ',' << (r.target_flipped ? 1 : 0) << ',' << r.n_offtarget_flips << ',';
        std::snprintf(buf, sizeof buf, "%.17g", r.identity_drift);
        out << buf << '\n';
    }
}

}  // namespace lremap
