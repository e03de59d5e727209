#include "lremap/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace lremap {

std::string_view format_error_kind_name(FormatErrorKind kind) {
    switch (kind) {
        case FormatErrorKind::io: return "io";
        case FormatErrorKind::bad_magic: return "bad_magic";
        case FormatErrorKind::truncated: return "truncated";
        case FormatErrorKind::version_mismatch: return "version_mismatch";
        case FormatErrorKind::invalid: return "invalid";
    }
    return "unknown";
}

void ByteReader::need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
        fail(FormatErrorKind::truncated, "need " + std::to_string(n) + " bytes at offset " +
                                             std::to_string(pos_) + ", file has " +
                                             std::to_string(bytes_.size()));
}

void ByteReader::fail(FormatErrorKind kind, const std::string& msg) const {
    throw FormatError(kind, context_ + ": " + msg);
}

void ByteReader::expect_magic(std::string_view m) {
    need(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (bytes_[pos_ + i] != static_cast<std::uint8_t>(m[i]))
            fail(FormatErrorKind::bad_magic, "expected magic \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
}

void ByteReader::expect_end() const {
    if (pos_ != bytes_.size())
        fail(FormatErrorKind::invalid,
             std::to_string(bytes_.size() - pos_) + " trailing bytes after payload");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorKind::io, "short write to " + path.string());
}

void write_mlp(ByteWriter& w, const Mlp& net) {
    w.u32(static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& l : net.layers) {
        w.u32(static_cast<std::uint32_t>(l.weight.rows()));
        w.u32(static_cast<std::uint32_t>(l.weight.cols()));
        for (double x : l.weight.values()) w.f64(x);
        for (double x : l.bias) w.f64(x);
    }
}

Mlp read_mlp(ByteReader& r, Activation output, double leaky_slope) {
    Mlp net;
    net.output = output;
    net.leaky_slope = leaky_slope;
    const std::uint32_t n = r.u32();
    if (n == 0) r.fail(FormatErrorKind::invalid, "mlp with zero layers");
    for (std::uint32_t k = 0; k < n; ++k) {
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        const std::size_t count = static_cast<std::size_t>(rows) * cols;
        if (count + rows > r.remaining() / 8)
            r.fail(FormatErrorKind::truncated, "mlp layer " + shape_string(rows, cols) +
                                                   " exceeds remaining bytes");
        DenseLayer layer{Matrix(rows, cols), Vector(rows)};
        for (double& x : layer.weight.values()) x = r.f64();
        for (double& x : layer.bias) x = r.f64();
        net.layers.push_back(std::move(layer));
    }
    try {
        validate(net);
    } catch (const std::invalid_argument& e) {
        r.fail(FormatErrorKind::invalid, e.what());
    }
    return net;
}

void write_matrix(ByteWriter& w, const Matrix& m) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double x : m.values()) w.f64(x);
}

Matrix read_matrix(ByteReader& r) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (count > r.remaining() / 8)
        r.fail(FormatErrorKind::truncated, "matrix " + shape_string(rows, cols) +
                                               " exceeds remaining bytes");
    Matrix m(rows, cols);
    for (double& x : m.values()) x = r.f64();
    return m;
}

}  // namespace lremap
