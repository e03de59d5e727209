#pragma once

// On-disk formats: LATB latent datasets, labels CSV, key=value configs, and
// hashing for run manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lremap/classify.hpp"
#include "lremap/ndcore.hpp"

namespace lremap {

// Codes are f64 in memory and f32 on disk. Ids are row positions in the file.
struct LatentDataset {
    Matrix codes;
    std::vector<std::uint64_t> ids;

    std::size_t size() const { return codes.rows(); }
    std::size_t dim() const { return codes.cols(); }
};

LatentDataset make_dataset(Matrix codes);
// Rows `idx` of `ds`, ids carried over.
LatentDataset subset(const LatentDataset& ds, const std::vector<std::size_t>& idx);
// Rounds every code through f32, as a LATB round trip would.
void quantize_f32(Matrix& codes);

// LATB: magic, version u32 = 1, n u32, d u32, n*d f32. Written and read row by row.
void write_latents(const std::filesystem::path& path, const LatentDataset& ds);
LatentDataset read_latents(const std::filesystem::path& path);

// Header `id,attr_0,...,attr_{K-1}`, values 0/1.
void write_labels(const std::filesystem::path& path, const LabelMatrix& labels, const std::vector<std::uint64_t>& ids);
struct LabelFile {
    LabelMatrix labels;
    std::vector<std::uint64_t> ids;
};
LabelFile read_labels(const std::filesystem::path& path);
// Reorders label rows to match the dataset ids; throws if any id is missing.
LabelMatrix align_labels(const LabelFile& file, const std::vector<std::uint64_t>& ids);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Seeded shuffle; round(fraction * n) rows go to train.
Split split_indices(std::size_t n, double fraction, std::uint64_t seed);
std::pair<LatentDataset, LatentDataset> split_dataset(const LatentDataset& ds, double fraction, std::uint64_t seed);

// Thrown for malformed configs and bad values; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat key=value text, one key per line, '#' starts a comment.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "config");
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

    // Keys present in the file but never read.
    std::vector<std::string> unused_keys() const;
    const std::map<std::string, std::string>& values() const { return values_; }
    const std::string& origin() const { return origin_; }

private:
    const std::string* find(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::string origin_;
    mutable std::set<std::string> used_;
};

std::string serialize_config(const std::map<std::string, std::string>& values);

// FNV-1a 64 over the file bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);
std::string bytes_digest(const std::vector<std::uint8_t>& bytes);

}  // namespace lremap
