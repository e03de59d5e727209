#include "lremap/oracle.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lremap/binary_io.hpp"

namespace lremap {

namespace {

// Streams forked from the world seed.
enum : std::uint64_t { kWarpStream = 1, kRotationStream = 2, kFeatureStream = 3, kIdStream = 4 };

// Three-layer net computing, for output i < n_fold,
//     amp * sign_i * (leaky(x_p) + leaky(-x_p)) - amp * sign_i * sqrt(2/pi)
// with p = perm[i]: a centred fold |x_p| of one pass-through input. Remaining
// outputs are zero. amp = 0 gives the zero net.
Mlp fold_net(std::size_t n_in, std::size_t n_out, std::size_t n_fold, double amp, Activation out,
             Rng& rng) {
    Mlp net;
    net.output = out;
    net.leaky_slope = 0.01;
    Matrix w1(2 * n_in, n_in);
    for (std::size_t j = 0; j < n_in; ++j) {
        w1(2 * j, j) = 1.0;
        w1(2 * j + 1, j) = -1.0;
    }
    net.layers.push_back({std::move(w1), Vector(2 * n_in, 0.0)});
    net.layers.push_back({Matrix::identity(2 * n_in), Vector(2 * n_in, 0.0)});
    std::vector<std::size_t> perm(n_in);
    for (std::size_t j = 0; j < n_in; ++j) perm[j] = j;
    rng.shuffle(perm);
    Matrix w3(n_out, 2 * n_in);
    Vector b3(n_out, 0.0);
    const double centre = std::sqrt(2.0 / std::numbers::pi);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double sign = (rng.next_u64() >> 63) ? 1.0 : -1.0;
        if (i >= n_fold) continue;
        const std::size_t p = perm[i];
        w3(i, 2 * p) = amp * sign;
        w3(i, 2 * p + 1) = amp * sign;
        b3[i] = -amp * sign * centre;
    }
    net.layers.push_back({std::move(w3), std::move(b3)});
    return net;
}

Matrix random_rotation(std::size_t m, Rng& rng) {
    // Gram-Schmidt on a Gaussian matrix, rows orthonormalised twice for stability.
    Matrix q(m, m);
    for (double& x : q.values()) x = rng.normal();
    for (std::size_t r = 0; r < m; ++r) {
        auto row = q.row(r);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < r; ++k) {
                const auto prev = q.row(k);
                const double proj = dot(row, prev);
                for (std::size_t c = 0; c < m; ++c) row[c] -= proj * prev[c];
            }
        }
        const double n = norm2(row);
        for (double& x : row) x /= n;
    }
    return q;
}

void check_len(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw std::invalid_argument(std::string(what) + ": vector of length " + std::to_string(got) +
                                    ", world dimension is " + std::to_string(want));
}

}  // namespace

std::size_t ToyWorld::id_begin() const {
    // With no spare factors the identity map falls back to all of them.
    return config.n_attributes < dim() ? config.n_attributes : 0;
}

ToyWorld make_world(const WorldConfig& config) {
    const std::size_t m = config.dim;
    const std::size_t K = config.n_attributes;
    if (m < 2) throw std::invalid_argument("world: dimension " + std::to_string(m) + " < 2");
    if (K < 1 || K > m)
        throw std::invalid_argument("world: K=" + std::to_string(K) + " must be in [1, d=" +
                                    std::to_string(m) + "]");
    if (config.warp_amplitudes.empty()) throw std::invalid_argument("world: warp needs at least one layer");
    if (!(config.alpha > 0.0) || !(config.rescale > 0.0))
        throw std::invalid_argument("world: alpha and rescale must be positive");
    if (config.id_width < 1) throw std::invalid_argument("world: identity width must be >= 1");

    ToyWorld world;
    world.config = config;
    const Rng root(config.seed);

    Rng rw = root.fork(kWarpStream);
    world.warp.dim = m;
    for (std::size_t k = 0; k < config.warp_amplitudes.size(); ++k) {
        CouplingLayer l;
        l.mask = half_mask(m, k);
        l.index_mask();
        const std::size_t p = l.pass_idx.size(), f = l.free_idx.size();
        std::size_t n_fold = config.fold_count ? config.fold_count : K;
        n_fold = std::min({n_fold, p, f});
        l.translate_net = fold_net(p, f, n_fold, config.warp_amplitudes[k], Activation::identity, rw);
        l.scale_net = fold_net(p, f, n_fold, config.warp_scale_amplitude, Activation::tanh, rw);
        world.warp.layers.push_back(std::move(l));
    }
    validate(world.warp);

    Rng rr = root.fork(kRotationStream);
    world.rotation = random_rotation(m, rr);
    if (config.feature_mode == FeatureMode::stress) {
        Rng rf = root.fork(kFeatureStream);
        const std::size_t widths[] = {m, 2 * m, 2 * m, m};
        world.feature_net = make_mlp(widths, Activation::identity, 0.01, rf, 1.5);
    }
    Rng ri = root.fork(kIdStream);
    const std::size_t id_in = m - world.id_begin();
    const std::size_t widths[] = {id_in, config.id_width, config.id_width};
    world.id_net = make_mlp(widths, Activation::tanh, 0.01, ri);
    return world;
}

std::vector<Vector> sample_factors(const ToyWorld& world, std::size_t n, Rng& rng) {
    std::vector<Vector> out(n, Vector(world.dim()));
    for (auto& z : out)
        for (double& x : z) x = rng.normal();
    return out;
}

std::vector<std::uint8_t> attributes(const ToyWorld& world, std::span<const double> z) {
    check_len(z.size(), world.dim(), "attributes");
    std::vector<std::uint8_t> y(world.n_attributes());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = z[k] > 0.0 ? 1 : 0;
    return y;
}

Vector embed(const ToyWorld& world, std::span<const double> z) { return flow_forward(world.warp, z); }
Vector decode(const ToyWorld& world, std::span<const double> w) { return flow_inverse(world.warp, w); }

Vector features(const ToyWorld& world, std::span<const double> z) {
    check_len(z.size(), world.dim(), "features");
    if (world.config.feature_mode == FeatureMode::stress) return mlp_apply(world.feature_net, z);
    Vector f = matvec(world.rotation, z);
    for (double& x : f) x *= world.config.alpha;
    return f;
}

double factor_distance(const ToyWorld& world, std::span<const double> z_i, std::span<const double> z_j) {
    if (world.config.feature_mode == FeatureMode::linear) {
        // Rotations preserve norms.
        check_len(z_i.size(), world.dim(), "factor_distance");
        const double a = world.config.alpha;
        return world.config.rescale * a * a * squared_distance(z_i, z_j);
    }
    return world.config.rescale * squared_distance(features(world, z_i), features(world, z_j));
}

double perceptual_distance(const ToyWorld& world, std::span<const double> w_i, std::span<const double> w_j) {
    return factor_distance(world, decode(world, w_i), decode(world, w_j));
}

Vector identity_features(const ToyWorld& world, std::span<const double> w) {
    const Vector z = decode(world, w);
    return mlp_apply(world.id_net, std::span<const double>(z).subspan(world.id_begin()));
}

Vector identity_features_vjp(const ToyWorld& world, std::span<const double> w,
                             std::span<const double> upstream) {
    FlowTape tape;
    const Vector z = flow_inverse_taped(world.warp, w, tape);
    const std::size_t b = world.id_begin();
    MlpTape mt;
    mlp_forward(world.id_net, std::span<const double>(z).subspan(b), mt);
    Vector dz(world.dim(), 0.0);
    mlp_backward(world.id_net, mt, upstream, nullptr, std::span<double>(dz).subspan(b));
    Vector dw(world.dim());
    flow_backward(world.warp, tape, dz, nullptr, dw);
    return dw;
}

ExactSolutionMap::ExactSolutionMap(const ToyWorld& world)
    : world_(world), c_(world.config.alpha * std::sqrt(world.config.rescale)) {}

Vector ExactSolutionMap::forward(std::span<const double> w) const {
    Vector z = decode(world_, w);
    for (double& x : z) x *= c_;
    return z;
}

Vector ExactSolutionMap::inverse(std::span<const double> w_star) const {
    Vector z(w_star.begin(), w_star.end());
    for (double& x : z) x /= c_;
    return embed(world_, z);
}

// ---------------------------------------------------------------------------
// LRTW: magic, version u32, seed u64, m u32, K u32, feature mode u8,
// alpha f64, rescale f64, warp scale amplitude f64, fold count u32, id width u32,
// n_warp u32 + amplitudes f64[n_warp], then the warp flow blob, the rotation
// matrix blob, the feature net (stress mode only) and the identity net.

namespace {
constexpr std::uint32_t kWorldVersion = 1;
}

std::vector<std::uint8_t> encode_world(const ToyWorld& world) {
    const auto& c = world.config;
    ByteWriter w;
    w.magic("LRTW");
    w.u32(kWorldVersion);
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(c.dim));
    w.u32(static_cast<std::uint32_t>(c.n_attributes));
    w.u8(static_cast<std::uint8_t>(c.feature_mode));
    w.f64(c.alpha);
    w.f64(c.rescale);
    w.f64(c.warp_scale_amplitude);
    w.u32(static_cast<std::uint32_t>(c.fold_count));
    w.u32(static_cast<std::uint32_t>(c.id_width));
    w.u32(static_cast<std::uint32_t>(c.warp_amplitudes.size()));
    for (double a : c.warp_amplitudes) w.f64(a);
    write_flow_blob(w, world.warp);
    write_matrix(w, world.rotation);
    if (c.feature_mode == FeatureMode::stress) write_mlp(w, world.feature_net);
    write_mlp(w, world.id_net);
    return w.bytes();
}

ToyWorld decode_world(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "LRTW");
    r.expect_magic("LRTW");
    const std::uint32_t version = r.u32();
    if (version != kWorldVersion)
        r.fail(FormatErrorKind::version_mismatch, "unsupported world version " + std::to_string(version));
    ToyWorld world;
    auto& c = world.config;
    c.seed = r.u64();
    c.dim = r.u32();
    c.n_attributes = r.u32();
    const std::uint8_t mode = r.u8();
    if (mode > 1) r.fail(FormatErrorKind::invalid, "unknown feature mode " + std::to_string(mode));
    c.feature_mode = static_cast<FeatureMode>(mode);
    c.alpha = r.f64();
    c.rescale = r.f64();
    c.warp_scale_amplitude = r.f64();
    c.fold_count = r.u32();
    c.id_width = r.u32();
    const std::uint32_t n_warp = r.u32();
    if (n_warp > r.remaining() / 8) r.fail(FormatErrorKind::truncated, "warp amplitude list exceeds file");
    c.warp_amplitudes.resize(n_warp);
    for (double& a : c.warp_amplitudes) a = r.f64();
    world.warp = read_flow_blob(r);
    world.rotation = read_matrix(r);
    if (c.feature_mode == FeatureMode::stress) world.feature_net = read_mlp(r, Activation::identity, 0.01);
    world.id_net = read_mlp(r, Activation::tanh, 0.01);
    r.expect_end();

    const std::size_t m = c.dim;
    if (world.warp.dim != m || world.rotation.rows() != m || world.rotation.cols() != m ||
        c.n_attributes < 1 || c.n_attributes > m || world.warp.layers.size() != n_warp ||
        world.id_net.in_dim() != m - world.id_begin() ||
        (c.feature_mode == FeatureMode::stress &&
         (world.feature_net.in_dim() != m || world.feature_net.out_dim() != m)))
        r.fail(FormatErrorKind::invalid, "inconsistent world dimensions");
    return world;
}

void save_world(const std::filesystem::path& path, const ToyWorld& world) {
    write_file_bytes(path, encode_world(world));
}

ToyWorld load_world(const std::filesystem::path& path) { return decode_world(read_file_bytes(path)); }

}  // namespace lremap
