#pragma once

// Affine-coupling bijection (Real NVP without normalization layers).
//
// Each layer copies the coordinates where mask == 1 and transforms the rest:
//     y_free = x_free * exp(s(x_pass)) + t(x_pass)
// and is inverted exactly by
//     x_free = (y_free - t(y_pass)) * exp(-s(y_pass)).
// The scale net ends in tanh, so |s| < 1 per layer.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lremap/ndcore.hpp"

namespace lremap {

struct CouplingLayer {
    std::vector<std::uint8_t> mask;  // 1 = pass-through
    Mlp scale_net;                   // |pass| -> |free|, tanh output
    Mlp translate_net;               // |pass| -> |free|

    std::vector<std::size_t> pass_idx;
    std::vector<std::size_t> free_idx;

    // Rebuild pass_idx/free_idx from mask.
    void index_mask();

    friend bool operator==(const CouplingLayer& a, const CouplingLayer& b) {
        return a.mask == b.mask && a.scale_net == b.scale_net && a.translate_net == b.translate_net;
    }
};

struct FlowModel {
    std::size_t dim = 0;
    std::vector<CouplingLayer> layers;

    std::size_t param_count() const;
    friend bool operator==(const FlowModel&, const FlowModel&) = default;
};

// Throws std::invalid_argument when any structural invariant fails.
void validate(const FlowModel& flow);

enum class InitMode { identity, random };

struct FlowOptions {
    std::size_t hidden_width = 128;
    std::size_t hidden_layers = 2;  // 2 hidden layers => 3 dense layers per net
    double leaky_slope = 0.01;
    bool translate_tanh = false;
    double init_gain = 1.0;
};

// Alternating contiguous halves: even layers pass the first ceil(d/2)
// coordinates, odd layers the last ceil(d/2).
std::vector<std::uint8_t> half_mask(std::size_t dim, std::size_t layer_index);

FlowModel flow_init(std::size_t dim, std::size_t n_layers, std::uint64_t seed, InitMode mode,
                    const FlowOptions& options = {});

Vector flow_forward(const FlowModel& flow, std::span<const double> w);
Vector flow_inverse(const FlowModel& flow, std::span<const double> w_star);

// Single layer, for composition checks.
Vector coupling_forward(const CouplingLayer& layer, std::span<const double> x);
Vector coupling_inverse(const CouplingLayer& layer, std::span<const double> y);

struct CouplingTape {
    Vector input;   // layer input (x for forward, y for inverse)
    Vector output;  // layer output
    MlpTape scale;
    MlpTape translate;
};

struct FlowTape {
    std::vector<CouplingTape> layers;  // in evaluation order
    bool inverse = false;
};

Vector flow_forward_taped(const FlowModel& flow, std::span<const double> w, FlowTape& tape);
Vector flow_inverse_taped(const FlowModel& flow, std::span<const double> w_star, FlowTape& tape);

struct FlowGrads {
    std::vector<MlpGrads> scale;
    std::vector<MlpGrads> translate;

    static FlowGrads zeros_like(const FlowModel& flow);
    void set_zero();
    void add(const FlowGrads& other);
    void scale_by(double s);
    double squared_norm() const;
};

// Reverse pass for either direction (tape.inverse selects). Accumulates parameter
// gradients into *grads when non-null; writes the input gradient into dx.
void flow_backward(const FlowModel& flow, const FlowTape& tape, std::span<const double> upstream,
                   FlowGrads* grads, std::span<double> dx);

struct FlowGradient {
    FlowGrads params;
    Vector input;
};

FlowGradient flow_grad(const FlowModel& flow, std::span<const double> w,
                       std::span<const double> upstream);

void collect_params(FlowModel& flow, std::vector<std::span<double>>& out);
void collect_grads(FlowGrads& grads, std::vector<std::span<double>>& out);

// LRFM file. Version 1 is the default activation set (slope 0.01, identity
// translate output); version 2 appends translate activation u8 and slope f64
// after the layer count.
std::vector<std::uint8_t> encode_flow(const FlowModel& flow);
FlowModel decode_flow(const std::vector<std::uint8_t>& bytes);
void save_flow(const std::filesystem::path& path, const FlowModel& flow);
FlowModel load_flow(const std::filesystem::path& path);

class ByteWriter;
class ByteReader;
void write_flow_blob(ByteWriter& w, const FlowModel& flow);
FlowModel read_flow_blob(ByteReader& r);

// An invertible map W+ -> W*. FlowModel is the trained case; the toy world adds
// an analytic one.
class LatentMap {
public:
    virtual ~LatentMap() = default;
    virtual std::size_t dim() const = 0;
    virtual Vector forward(std::span<const double> w) const = 0;
    virtual Vector inverse(std::span<const double> w_star) const = 0;
};

class FlowMap final : public LatentMap {
public:
    explicit FlowMap(const FlowModel& flow) : flow_(flow) {}
    std::size_t dim() const override { return flow_.dim; }
    Vector forward(std::span<const double> w) const override { return flow_forward(flow_, w); }
    Vector inverse(std::span<const double> w) const override { return flow_inverse(flow_, w); }

private:
    const FlowModel& flow_;
};

// Applies `map` (identity when null).
Vector apply_map(const LatentMap* map, std::span<const double> w);

}  // namespace lremap
