#pragma once

// Attribute editing along hyperplane normals, in W+ directly or in W* through
// the flow, scored with the toy world's labeler and identity features.

#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "lremap/classify.hpp"
#include "lremap/flow.hpp"
#include "lremap/oracle.hpp"

namespace lremap {

enum class EditSpace { wplus, wstar };

std::string_view space_name(EditSpace s);

struct EditConfig {
    std::size_t attribute_index = 0;
    double step = 0.0;
    EditSpace space = EditSpace::wplus;
    Vector direction;  // unit length
};

void validate(const EditConfig& cfg);

// wplus: w + step * n.  wstar: T^{-1}(T(w) + step * n). Result is in W+.
Vector edit(std::span<const double> w, const EditConfig& cfg, const LatentMap* map);

struct EditRow {
    std::size_t sample_id = 0;
    bool target_flipped = false;
    std::size_t n_offtarget_flips = 0;
    double identity_drift = 0.0;
};

struct EditReport {
    double target_flip_rate = 0.0;
    double offtarget_flip_rate = 0.0;  // samples with any other attribute changed
    double identity_drift = 0.0;       // mean ||F(w) - F(w_edit)||^2
    std::size_t n_samples = 0;
    std::vector<EditRow> rows;
};

// Each sample is pushed toward the opposite class of its current attribute
// value: step * n for negatives, -step * n for positives.
EditReport evaluate_edit(std::span<const Vector> samples, const EditConfig& cfg, const LatentMap* map,
                         const ToyWorld& world);

// Unit SVM normal fitted in the edit space (codes mapped through `map` when given),
// oriented toward the positive class.
Vector edit_direction(const Matrix& codes, std::span<const std::uint8_t> labels, const LatentMap* map, Rng& rng,
                      const SvmOptions& svm = {});

void write_edit_csv_header(std::ostream& out);
void write_edit_rows(std::ostream& out, const EditReport& report, const EditConfig& cfg);

}  // namespace lremap
