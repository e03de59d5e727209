#pragma once

// Little-endian byte streams shared by every on-disk format, and the error type
// readers throw.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lremap/ndcore.hpp"

namespace lremap {

enum class FormatErrorKind { io, bad_magic, truncated, version_mismatch, invalid };

std::string_view format_error_kind_name(FormatErrorKind kind);

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    FormatErrorKind kind() const { return kind_; }

private:
    FormatErrorKind kind_;
};

class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void raw(const std::vector<std::uint8_t>& b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i)
            bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& bytes, std::string context)
        : bytes_(bytes), context_(std::move(context)) {}

    void expect_magic(std::string_view m);
    std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t position() const { return pos_; }
    void expect_end() const;
    [[noreturn]] void fail(FormatErrorKind kind, const std::string& msg) const;

private:
    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    void need(std::size_t n) const;

    const std::vector<std::uint8_t>& bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Mlp blob: n_layers u32, then per layer rows u32, cols u32, weights f64[rows*cols]
// row-major, bias f64[rows]. Activations are not part of the blob.
void write_mlp(ByteWriter& w, const Mlp& net);
Mlp read_mlp(ByteReader& r, Activation output, double leaky_slope);

// Matrix blob: rows u32, cols u32, f64 data row-major.
void write_matrix(ByteWriter& w, const Matrix& m);
Matrix read_matrix(ByteReader& r);

}  // namespace lremap
