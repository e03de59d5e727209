#include "lremap/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "lremap/binary_io.hpp"

namespace lremap {

LatentDataset make_dataset(Matrix codes) {
    LatentDataset ds;
    ds.ids.resize(codes.rows());
    for (std::size_t i = 0; i < ds.ids.size(); ++i) ds.ids[i] = i;
    ds.codes = std::move(codes);
    return ds;
}

LatentDataset subset(const LatentDataset& ds, const std::vector<std::size_t>& idx) {
    LatentDataset out;
    out.codes = Matrix(idx.size(), ds.dim());
    out.ids.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= ds.size()) throw std::out_of_range("subset: row " + std::to_string(idx[r]) + " of " + std::to_string(ds.size()));
        const auto src = ds.codes.row(idx[r]);
        std::copy(src.begin(), src.end(), out.codes.row(r).begin());
        out.ids[r] = ds.ids[idx[r]];
    }
    return out;
}

void quantize_f32(Matrix& codes) {
    for (double& x : codes.values()) x = static_cast<double>(static_cast<float>(x));
}

// ---------------------------------------------------------------------------
// LATB

namespace {

constexpr std::uint32_t kLatbVersion = 1;
constexpr std::size_t kLatbHeader = 16;

std::uint32_t load_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32(unsigned char* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
}

}  // namespace

void write_latents(const std::filesystem::path& path, const LatentDataset& ds) {
    if (ds.size() > 0xFFFFFFFFu || ds.dim() > 0xFFFFFFFFu) throw std::invalid_argument("LATB: dataset too large");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
    unsigned char head[kLatbHeader] = {'L', 'A', 'T', 'B'};
    store_u32(head + 4, kLatbVersion);
    store_u32(head + 8, static_cast<std::uint32_t>(ds.size()));
    store_u32(head + 12, static_cast<std::uint32_t>(ds.dim()));
    out.write(reinterpret_cast<const char*>(head), kLatbHeader);
    std::vector<unsigned char> row(ds.dim() * 4);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto src = ds.codes.row(i);
        for (std::size_t j = 0; j < src.size(); ++j)
            store_u32(row.data() + 4 * j, std::bit_cast<std::uint32_t>(static_cast<float>(src[j])));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw FormatError(FormatErrorKind::io, "short write to " + path.string());
}

LatentDataset read_latents(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
    const std::string ctx = "LATB " + path.string();
    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);
    if (ec) throw FormatError(FormatErrorKind::io, ctx + ": " + ec.message());
    if (file_size < 4) throw FormatError(FormatErrorKind::truncated, ctx + ": file shorter than magic");
    unsigned char head[kLatbHeader];
    in.read(reinterpret_cast<char*>(head), 4);
    if (std::string_view(reinterpret_cast<const char*>(head), 4) != "LATB")
        throw FormatError(FormatErrorKind::bad_magic, ctx + ": expected magic \"LATB\"");
    if (file_size < kLatbHeader) throw FormatError(FormatErrorKind::truncated, ctx + ": header truncated");
    in.read(reinterpret_cast<char*>(head + 4), kLatbHeader - 4);
    const std::uint32_t version = load_u32(head + 4);
    if (version != kLatbVersion)
        throw FormatError(FormatErrorKind::version_mismatch, ctx + ": version " + std::to_string(version) + ", expected 1");
    const std::uint64_t n = load_u32(head + 8), d = load_u32(head + 12);
    const std::uint64_t want = kLatbHeader + n * d * 4;
    if (file_size < want)
        throw FormatError(FormatErrorKind::truncated, ctx + ": " + std::to_string(n) + "x" + std::to_string(d) +
                                                          " needs " + std::to_string(want) + " bytes, file has " +
                                                          std::to_string(file_size));
    if (file_size > want)
        throw FormatError(FormatErrorKind::invalid, ctx + ": " + std::to_string(file_size - want) + " trailing bytes");
    Matrix codes(n, d);
    std::vector<unsigned char> row(d * 4);
    for (std::uint64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw FormatError(FormatErrorKind::truncated, ctx + ": short read at row " + std::to_string(i));
        auto dst = codes.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<double>(std::bit_cast<float>(load_u32(row.data() + 4 * j)));
    }
    return make_dataset(std::move(codes));
}

// ---------------------------------------------------------------------------
// Labels CSV

void write_labels(const std::filesystem::path& path, const LabelMatrix& labels, const std::vector<std::uint64_t>& ids) {
    if (ids.size() != labels.rows())
        throw std::invalid_argument("write_labels: " + std::to_string(ids.size()) + " ids for " +
                                    std::to_string(labels.rows()) + " rows");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
    out << "id";
    for (std::size_t k = 0; k < labels.cols(); ++k) out << ",attr_" << k;
    out << '\n';
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        out << ids[i];
        for (std::size_t k = 0; k < labels.cols(); ++k) out << ',' << static_cast<int>(labels(i, k));
        out << '\n';
    }
    if (!out) throw FormatError(FormatErrorKind::io, "short write to " + path.string());
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

LabelFile read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
    const std::string ctx = "labels " + path.string();
    std::string line;
    if (!std::getline(in, line)) throw FormatError(FormatErrorKind::truncated, ctx + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto head = split_commas(line);
    if (head.empty() || head[0] != "id") throw FormatError(FormatErrorKind::invalid, ctx + ": header must start with 'id'");
    const std::size_t K = head.size() - 1;
    for (std::size_t k = 0; k < K; ++k)
        if (head[k + 1] != "attr_" + std::to_string(k))
            throw FormatError(FormatErrorKind::invalid, ctx + ": column " + std::to_string(k + 1) + " should be attr_" + std::to_string(k));
    LabelFile f;
    f.labels = LabelMatrix(0, K);
    std::vector<std::uint8_t> row(K);
    std::size_t lineno = 1;
    std::set<std::uint64_t> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != K + 1)
            throw FormatError(FormatErrorKind::invalid, ctx + ":" + std::to_string(lineno) + ": expected " +
                                                            std::to_string(K + 1) + " fields");
        std::uint64_t id = 0;
        auto [p, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), id);
        if (ec != std::errc() || p != cells[0].data() + cells[0].size())
            throw FormatError(FormatErrorKind::invalid, ctx + ":" + std::to_string(lineno) + ": bad id");
        if (!seen.insert(id).second)
            throw FormatError(FormatErrorKind::invalid, ctx + ":" + std::to_string(lineno) + ": duplicate id " + std::to_string(id));
        for (std::size_t k = 0; k < K; ++k) {
            if (cells[k + 1] == "0") row[k] = 0;
            else if (cells[k + 1] == "1") row[k] = 1;
            else throw FormatError(FormatErrorKind::invalid, ctx + ":" + std::to_string(lineno) + ": label values must be 0 or 1");
        }
        f.labels.append(row);
        f.ids.push_back(id);
    }
    return f;
}

LabelMatrix align_labels(const LabelFile& file, const std::vector<std::uint64_t>& ids) {
    std::unordered_map<std::uint64_t, std::size_t> where;
    for (std::size_t i = 0; i < file.ids.size(); ++i) where[file.ids[i]] = i;
    LabelMatrix out(0, file.labels.cols());
    for (auto id : ids) {
        auto it = where.find(id);
        if (it == where.end()) throw std::invalid_argument("labels: no row for id " + std::to_string(id));
        out.append(file.labels.row(it->second));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

Split split_indices(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split: fraction must be in (0, 1)");
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n)
        throw std::invalid_argument("split: fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                                    " samples leaves an empty side");
    Rng rng(seed);
    const auto perm = permutation(n, rng);
    Split s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    return s;
}

std::pair<LatentDataset, LatentDataset> split_dataset(const LatentDataset& ds, double fraction, std::uint64_t seed) {
    const Split s = split_indices(ds.size(), fraction, seed);
    return {subset(ds, s.train), subset(ds, s.val)};
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (c.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        c.values_[key] = value;
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

const std::string* Config::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size())
        throw ConfigError(origin_ + ": key '" + key + "' expects an integer, got '" + *v + "'");
    return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size())
        throw ConfigError(origin_ + ": key '" + key + "' expects a non-negative integer, got '" + *v + "'");
    return out;
}

double Config::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    double out = 0.0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size() || !std::isfinite(out))
        throw ConfigError(origin_ + ": key '" + key + "' expects a finite number, got '" + *v + "'");
    return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "1" || *v == "true") return true;
    if (*v == "0" || *v == "false") return false;
    throw ConfigError(origin_ + ": key '" + key + "' expects true/false, got '" + *v + "'");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (auto cell : split_commas(*v)) {
        const std::string t = trim(cell);
        double x = 0.0;
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
        if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !std::isfinite(x))
            throw ConfigError(origin_ + ": key '" + key + "' expects comma-separated numbers, got '" + *v + "'");
        out.push_back(x);
    }
    return out;
}

std::vector<std::string> Config::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
        if (!used_.count(k)) out.push_back(k);
    return out;
}

std::string serialize_config(const std::map<std::string, std::string>& values) {
    std::string out;
    for (const auto& [k, v] : values) out += k + "=" + v + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Digests

std::string bytes_digest(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_digest(const std::filesystem::path& path) { return bytes_digest(read_file_bytes(path)); }

}  // namespace lremap
