#include "lremap/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lremap/binary_io.hpp"

namespace lremap {

void CouplingLayer::index_mask() {
    pass_idx.clear();
    free_idx.clear();
    for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] ? pass_idx : free_idx).push_back(i);
}

std::size_t FlowModel::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.scale_net.param_count() + l.translate_net.param_count();
    return n;
}

void validate(const FlowModel& flow) {
    if (flow.dim < 2) throw std::invalid_argument("flow: dimension " + std::to_string(flow.dim) + " < 2");
    for (std::size_t k = 0; k < flow.layers.size(); ++k) {
        const auto& l = flow.layers[k];
        const std::string where = "flow layer " + std::to_string(k) + ": ";
        if (l.mask.size() != flow.dim)
            throw std::invalid_argument(where + "mask length " + std::to_string(l.mask.size()) +
                                        " for d=" + std::to_string(flow.dim));
        std::size_t ones = 0;
        for (auto m : l.mask) {
            if (m > 1) throw std::invalid_argument(where + "mask entry " + std::to_string(m));
            ones += m;
        }
        if (ones == 0 || ones == flow.dim)
            throw std::invalid_argument(where + "mask needs both pass-through and free coordinates");
        if (l.pass_idx.size() != ones || l.free_idx.size() != flow.dim - ones)
            throw std::invalid_argument(where + "mask index not built");
        const std::size_t n_free = flow.dim - ones;
        for (const Mlp* net : {&l.scale_net, &l.translate_net}) {
            validate(*net);
            if (net->in_dim() != ones || net->out_dim() != n_free)
                throw std::invalid_argument(where + "net maps " + std::to_string(net->in_dim()) +
                                            " -> " + std::to_string(net->out_dim()) +
                                            ", mask needs " + std::to_string(ones) + " -> " +
                                            std::to_string(n_free));
        }
        if (l.scale_net.output != Activation::tanh)
            throw std::invalid_argument(where + "scale net must end in tanh");
    }
}

std::vector<std::uint8_t> half_mask(std::size_t dim, std::size_t layer_index) {
    if (dim < 2) throw std::invalid_argument("half_mask: d=" + std::to_string(dim) + " < 2");
    const std::size_t pass = (dim + 1) / 2;
    std::vector<std::uint8_t> m(dim, 0);
    if (layer_index % 2 == 0)
        for (std::size_t i = 0; i < pass; ++i) m[i] = 1;
    else
        for (std::size_t i = dim - pass; i < dim; ++i) m[i] = 1;
    return m;
}

FlowModel flow_init(std::size_t dim, std::size_t n_layers, std::uint64_t seed, InitMode mode,
                    const FlowOptions& o) {
    if (dim < 2) throw std::invalid_argument("flow_init: d=" + std::to_string(dim) + " < 2");
    if (n_layers < 1) throw std::invalid_argument("flow_init: n_layers must be >= 1");
    if (o.hidden_width < 1) throw std::invalid_argument("flow_init: hidden width must be >= 1");
    const Rng root(seed);
    FlowModel flow;
    flow.dim = dim;
    for (std::size_t k = 0; k < n_layers; ++k) {
        CouplingLayer l;
        l.mask = half_mask(dim, k);
        l.index_mask();
        std::vector<std::size_t> widths{l.pass_idx.size()};
        for (std::size_t h = 0; h < o.hidden_layers; ++h) widths.push_back(o.hidden_width);
        widths.push_back(l.free_idx.size());
        Rng rs = root.fork(2 * k);
        Rng rt = root.fork(2 * k + 1);
        l.scale_net = make_mlp(widths, Activation::tanh, o.leaky_slope, rs, o.init_gain);
        l.translate_net = make_mlp(widths, o.translate_tanh ? Activation::tanh : Activation::identity,
                                   o.leaky_slope, rt, o.init_gain);
        if (mode == InitMode::identity) {
            zero_output_layer(l.scale_net);
            zero_output_layer(l.translate_net);
        }
        flow.layers.push_back(std::move(l));
    }
    return flow;
}

namespace {

void check_dim(const FlowModel& flow, std::size_t n, const char* what) {
    if (n != flow.dim)
        throw std::invalid_argument(std::string(what) + ": code of length " + std::to_string(n) +
                                    " for flow with d=" + std::to_string(flow.dim));
}

Vector gather(std::span<const double> x, const std::vector<std::size_t>& idx) {
    Vector out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
    return out;
}

// Shared body of one layer in either direction, optionally recording the tape.
Vector coupling_step(const CouplingLayer& l, std::span<const double> in, bool inverse,
                     CouplingTape* tape) {
    const Vector a = gather(in, l.pass_idx);
    MlpTape local_s, local_t;
    MlpTape& ts = tape ? tape->scale : local_s;
    MlpTape& tt = tape ? tape->translate : local_t;
    mlp_forward(l.scale_net, a, ts);
    mlp_forward(l.translate_net, a, tt);
    const Vector& s = ts.output();
    const Vector& t = tt.output();
    Vector out(in.begin(), in.end());
    for (std::size_t i = 0; i < l.free_idx.size(); ++i) {
        const std::size_t j = l.free_idx[i];
        out[j] = inverse ? (in[j] - t[i]) * std::exp(-s[i]) : in[j] * std::exp(s[i]) + t[i];
    }
    if (tape) {
        tape->input.assign(in.begin(), in.end());
        tape->output = out;
    }
    return out;
}

}  // namespace

Vector coupling_forward(const CouplingLayer& layer, std::span<const double> x) {
    return coupling_step(layer, x, false, nullptr);
}

Vector coupling_inverse(const CouplingLayer& layer, std::span<const double> y) {
    return coupling_step(layer, y, true, nullptr);
}

Vector flow_forward(const FlowModel& flow, std::span<const double> w) {
    check_dim(flow, w.size(), "flow_forward");
    Vector x(w.begin(), w.end());
    for (const auto& l : flow.layers) x = coupling_step(l, x, false, nullptr);
    return x;
}

Vector flow_inverse(const FlowModel& flow, std::span<const double> w_star) {
    check_dim(flow, w_star.size(), "flow_inverse");
    Vector y(w_star.begin(), w_star.end());
    for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it)
        y = coupling_step(*it, y, true, nullptr);
    return y;
}

Vector flow_forward_taped(const FlowModel& flow, std::span<const double> w, FlowTape& tape) {
    check_dim(flow, w.size(), "flow_forward");
    tape.inverse = false;
    tape.layers.resize(flow.layers.size());
    Vector x(w.begin(), w.end());
    for (std::size_t k = 0; k < flow.layers.size(); ++k)
        x = coupling_step(flow.layers[k], x, false, &tape.layers[k]);
    return x;
}

Vector flow_inverse_taped(const FlowModel& flow, std::span<const double> w_star, FlowTape& tape) {
    check_dim(flow, w_star.size(), "flow_inverse");
    tape.inverse = true;
    const std::size_t n = flow.layers.size();
    tape.layers.resize(n);
    Vector y(w_star.begin(), w_star.end());
    for (std::size_t e = 0; e < n; ++e) y = coupling_step(flow.layers[n - 1 - e], y, true, &tape.layers[e]);
    return y;
}

FlowGrads FlowGrads::zeros_like(const FlowModel& flow) {
    FlowGrads g;
    for (const auto& l : flow.layers) {
        g.scale.push_back(MlpGrads::zeros_like(l.scale_net));
        g.translate.push_back(MlpGrads::zeros_like(l.translate_net));
    }
    return g;
}

void FlowGrads::set_zero() {
    for (auto& g : scale) g.set_zero();
    for (auto& g : translate) g.set_zero();
}

void FlowGrads::add(const FlowGrads& other) {
    for (std::size_t k = 0; k < scale.size(); ++k) {
        scale[k].add(other.scale[k]);
        translate[k].add(other.translate[k]);
    }
}

void FlowGrads::scale_by(double s) {
    for (auto& g : scale) g.scale(s);
    for (auto& g : translate) g.scale(s);
}

double FlowGrads::squared_norm() const {
    double acc = 0.0;
    auto add_net = [&](const MlpGrads& g) {
        for (const auto& w : g.weight)
            for (double x : w.values()) acc += x * x;
        for (const auto& b : g.bias)
            for (double x : b) acc += x * x;
    };
    for (const auto& g : scale) add_net(g);
    for (const auto& g : translate) add_net(g);
    return acc;
}

void flow_backward(const FlowModel& flow, const FlowTape& tape, std::span<const double> upstream,
                   FlowGrads* grads, std::span<double> dx) {
    check_dim(flow, upstream.size(), "flow_backward");
    check_dim(flow, dx.size(), "flow_backward");
    const std::size_t n = flow.layers.size();
    if (tape.layers.size() != n) throw std::invalid_argument("flow_backward: tape does not match flow");

    Vector g(upstream.begin(), upstream.end());
    // Walk the tape backwards; e indexes evaluation order.
    for (std::size_t e = n; e-- > 0;) {
        const std::size_t k = tape.inverse ? n - 1 - e : e;
        const CouplingLayer& l = flow.layers[k];
        const CouplingTape& ct = tape.layers[e];
        const Vector& s = ct.scale.output();
        const std::size_t nf = l.free_idx.size();
        Vector ds(nf), dt(nf);
        for (std::size_t i = 0; i < nf; ++i) {
            const std::size_t j = l.free_idx[i];
            const double gj = g[j];
            if (!tape.inverse) {
                const double es = std::exp(s[i]);
                dt[i] = gj;
                ds[i] = gj * ct.input[j] * es;
                g[j] = gj * es;
            } else {
                const double ens = std::exp(-s[i]);
                dt[i] = -gj * ens;
                ds[i] = -gj * ct.output[j];
                g[j] = gj * ens;
            }
        }
        Vector da_s(l.pass_idx.size()), da_t(l.pass_idx.size());
        mlp_backward(l.scale_net, ct.scale, ds, grads ? &grads->scale[k] : nullptr, da_s);
        mlp_backward(l.translate_net, ct.translate, dt, grads ? &grads->translate[k] : nullptr, da_t);
        for (std::size_t i = 0; i < l.pass_idx.size(); ++i) g[l.pass_idx[i]] += da_s[i] + da_t[i];
    }
    std::copy(g.begin(), g.end(), dx.begin());
}

FlowGradient flow_grad(const FlowModel& flow, std::span<const double> w,
                       std::span<const double> upstream) {
    FlowTape tape;
    flow_forward_taped(flow, w, tape);
    FlowGradient out{FlowGrads::zeros_like(flow), Vector(flow.dim)};
    flow_backward(flow, tape, upstream, &out.params, out.input);
    return out;
}

void collect_params(FlowModel& flow, std::vector<std::span<double>>& out) {
    for (auto& l : flow.layers) {
        collect_params(l.scale_net, out);
        collect_params(l.translate_net, out);
    }
}

void collect_grads(FlowGrads& grads, std::vector<std::span<double>>& out) {
    for (std::size_t k = 0; k < grads.scale.size(); ++k) {
        collect_grads(grads.scale[k], out);
        collect_grads(grads.translate[k], out);
    }
}

Vector apply_map(const LatentMap* map, std::span<const double> w) {
    if (!map) return Vector(w.begin(), w.end());
    return map->forward(w);
}

// ---------------------------------------------------------------------------
// LRFM

namespace {

constexpr std::uint32_t kFlowVersionPlain = 1;
constexpr std::uint32_t kFlowVersionTagged = 2;

bool default_activations(const FlowModel& flow, Activation& translate_out, double& slope) {
    translate_out = Activation::identity;
    slope = 0.01;
    if (flow.layers.empty()) return true;
    translate_out = flow.layers[0].translate_net.output;
    slope = flow.layers[0].translate_net.leaky_slope;
    for (const auto& l : flow.layers) {
        if (l.translate_net.output != translate_out || l.translate_net.leaky_slope != slope ||
            l.scale_net.leaky_slope != slope)
            throw std::invalid_argument("flow: mixed activation settings cannot be serialized");
    }
    return translate_out == Activation::identity && slope == 0.01;
}

}  // namespace

void write_flow_blob(ByteWriter& w, const FlowModel& flow) {
    Activation translate_out;
    double slope;
    const bool plain = default_activations(flow, translate_out, slope);
    w.u32(plain ? kFlowVersionPlain : kFlowVersionTagged);
    w.u32(static_cast<std::uint32_t>(flow.dim));
    w.u32(static_cast<std::uint32_t>(flow.layers.size()));
    if (!plain) {
        w.u8(static_cast<std::uint8_t>(translate_out));
        w.f64(slope);
    }
    for (const auto& l : flow.layers) {
        for (auto m : l.mask) w.u8(m);
        write_mlp(w, l.scale_net);
        write_mlp(w, l.translate_net);
    }
}

FlowModel read_flow_blob(ByteReader& r) {
    const std::uint32_t version = r.u32();
    if (version != kFlowVersionPlain && version != kFlowVersionTagged)
        r.fail(FormatErrorKind::version_mismatch, "unsupported flow version " + std::to_string(version));
    FlowModel flow;
    flow.dim = r.u32();
    const std::uint32_t n = r.u32();
    Activation translate_out = Activation::identity;
    double slope = 0.01;
    if (version == kFlowVersionTagged) {
        const std::uint8_t act = r.u8();
        if (act > 1) r.fail(FormatErrorKind::invalid, "unknown activation tag " + std::to_string(act));
        translate_out = static_cast<Activation>(act);
        slope = r.f64();
    }
    if (flow.dim < 2) r.fail(FormatErrorKind::invalid, "flow dimension " + std::to_string(flow.dim));
    if (static_cast<std::size_t>(n) > r.remaining() / (flow.dim + 8))
        r.fail(FormatErrorKind::truncated, std::to_string(n) + " layers exceed remaining bytes");
    for (std::uint32_t k = 0; k < n; ++k) {
        CouplingLayer l;
        l.mask.resize(flow.dim);
        for (auto& m : l.mask) m = r.u8();
        l.index_mask();
        l.scale_net = read_mlp(r, Activation::tanh, slope);
        l.translate_net = read_mlp(r, translate_out, slope);
        flow.layers.push_back(std::move(l));
    }
    try {
        validate(flow);
    } catch (const std::invalid_argument& e) {
        r.fail(FormatErrorKind::invalid, e.what());
    }
    return flow;
}

std::vector<std::uint8_t> encode_flow(const FlowModel& flow) {
    ByteWriter w;
    w.magic("LRFM");
    write_flow_blob(w, flow);
    return w.bytes();
}

FlowModel decode_flow(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "LRFM");
    r.expect_magic("LRFM");
    FlowModel flow = read_flow_blob(r);
    r.expect_end();
    return flow;
}

void save_flow(const std::filesystem::path& path, const FlowModel& flow) {
    write_file_bytes(path, encode_flow(flow));
}

FlowModel load_flow(const std::filesystem::path& path) {
    return decode_flow(read_file_bytes(path));
}

}  // namespace lremap
