#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "lremap/binary_io.hpp"
#include "lremap/dataio.hpp"
#include "test_support.hpp"

using namespace lremap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("lremap_dataio_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& name) const { return path / name; }
};

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

Matrix sample_codes(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(n, d);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

FormatErrorKind latb_error(const fs::path& p) {
    try {
        read_latents(p);
    } catch (const FormatError& e) {
        return e.kind();
    }
    FAIL("read accepted a bad file");
    return FormatErrorKind::io;
}

}  // namespace

TEST_CASE("LATB has the documented byte layout") {
    TempDir dir;
    Matrix m(2, 3);
    const float vals[6] = {1.0f, -2.5f, 0.125f, 3.0f, 1e-3f, -7.0f};
    for (int i = 0; i < 6; ++i) m.values()[i] = vals[i];
    write_latents(dir / "a.latb", make_dataset(m));
    const auto bytes = read_file_bytes(dir / "a.latb");
    REQUIRE(bytes.size() == 16 + 6 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "LATB");
    auto u32 = [&](std::size_t at) {
        return std::uint32_t(bytes[at]) | std::uint32_t(bytes[at + 1]) << 8 | std::uint32_t(bytes[at + 2]) << 16 |
               std::uint32_t(bytes[at + 3]) << 24;
    };
    CHECK(u32(4) == 1);
    CHECK(u32(8) == 2);
    CHECK(u32(12) == 3);
    for (int i = 0; i < 6; ++i) {
        float f;
        const std::uint32_t bits = u32(16 + 4 * i);
        std::memcpy(&f, &bits, 4);
        CHECK(f == vals[i]);
    }
}

TEST_CASE("LATB write-read-write is byte identical") {
    TempDir dir;
    Matrix m = sample_codes(50, 7, 1);
    const LatentDataset ds = make_dataset(m);
    write_latents(dir / "a.latb", ds);
    const LatentDataset back = read_latents(dir / "a.latb");
    CHECK(back.size() == 50);
    CHECK(back.dim() == 7);
    for (std::size_t i = 0; i < 50; ++i) CHECK(back.ids[i] == i);
    quantize_f32(m);
    CHECK(back.codes.values() == m.values());
    write_latents(dir / "b.latb", back);
    CHECK(read_file_bytes(dir / "a.latb") == read_file_bytes(dir / "b.latb"));
}

TEST_CASE("LATB errors are distinguished") {
    TempDir dir;
    write_latents(dir / "a.latb", make_dataset(sample_codes(4, 3, 2)));
    const auto good = read_file_bytes(dir / "a.latb");

    auto bad = good;
    bad[0] = 'X';
    write_file_bytes(dir / "m.latb", bad);
    CHECK(latb_error(dir / "m.latb") == FormatErrorKind::bad_magic);

    bad = good;
    bad[4] = 2;
    write_file_bytes(dir / "v.latb", bad);
    CHECK(latb_error(dir / "v.latb") == FormatErrorKind::version_mismatch);

    write_file_bytes(dir / "t.latb", {good.begin(), good.end() - 3});
    CHECK(latb_error(dir / "t.latb") == FormatErrorKind::truncated);
    write_file_bytes(dir / "h.latb", {good.begin(), good.begin() + 10});
    CHECK(latb_error(dir / "h.latb") == FormatErrorKind::truncated);

    bad = good;
    bad.push_back(0);
    write_file_bytes(dir / "x.latb", bad);
    CHECK(latb_error(dir / "x.latb") == FormatErrorKind::invalid);

    CHECK_THROWS_AS(read_latents(dir / "missing.latb"), FormatError);
}

TEST_CASE("quantize_f32 rounds exactly like a float cast") {
    Matrix m(1, 3);
    m(0, 0) = 0.1;
    m(0, 1) = 1.0 / 3.0;
    m(0, 2) = -1e10;
    quantize_f32(m);
    CHECK(m(0, 0) == static_cast<double>(0.1f));
    CHECK(m(0, 1) == static_cast<double>(1.0f / 3.0f));
    CHECK(m(0, 2) == static_cast<double>(-1e10f));
}

TEST_CASE("labels csv round trip and alignment") {
    TempDir dir;
    LabelMatrix y(0, 3);
    y.append(std::vector<std::uint8_t>{1, 0, 1});
    y.append(std::vector<std::uint8_t>{0, 0, 0});
    y.append(std::vector<std::uint8_t>{1, 1, 0});
    write_labels(dir / "l.csv", y, {0, 1, 2});
    {
        std::ifstream in(dir / "l.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "id,attr_0,attr_1,attr_2");
    }
    const LabelFile f = read_labels(dir / "l.csv");
    CHECK(f.ids == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(f.labels.column(1) == y.column(1));

    write_text(dir / "s.csv", "id,attr_0,attr_1\n2,1,1\n0,0,1\n1,1,0\n");
    const LabelMatrix aligned = align_labels(read_labels(dir / "s.csv"), {0, 1, 2});
    CHECK(aligned.column(0) == std::vector<std::uint8_t>{0, 1, 1});
    CHECK(aligned.column(1) == std::vector<std::uint8_t>{1, 0, 1});
    CHECK_THROWS(align_labels(read_labels(dir / "s.csv"), {0, 5}));
}

TEST_CASE("labels csv rejects malformed input") {
    TempDir dir;
    for (const std::string& text : {std::string("id,a\n0,1\n"), std::string("id,attr_0\n0,2\n"),
                                    std::string("id,attr_0\n0,1\n0,0\n"), std::string("id,attr_0,attr_1\n0,1\n"),
                                    std::string("id,attr_0\nx,1\n")}) {
        write_text(dir / "b.csv", text);
        CHECK_THROWS(read_labels(dir / "b.csv"));
    }
}

TEST_CASE("splits") {
    const Split s = split_indices(10, 0.8, 3);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 2);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    CHECK(all.size() == 10);
    const Split again = split_indices(10, 0.8, 3);
    CHECK(again.train == s.train);
    CHECK(split_indices(10, 0.8, 4).train != s.train);
    CHECK(split_indices(7, 0.5, 1).train.size() == 4);
    CHECK_THROWS_AS(split_indices(10, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_indices(10, 0.01, 1), std::invalid_argument);

    const LatentDataset ds = make_dataset(sample_codes(10, 2, 5));
    const auto [tr, va] = split_dataset(ds, 0.8, 3);
    CHECK(tr.size() == 8);
    for (std::size_t i = 0; i < tr.size(); ++i) {
        CHECK(tr.ids[i] == s.train[i]);
        CHECK(tr.codes(i, 1) == ds.codes(s.train[i], 1));
    }
    CHECK(va.ids[0] == s.val[0]);
}

TEST_CASE("config parsing and typed access") {
    const Config c = Config::parse(
        "# comment\n"
        "steps = 3000\n"
        "lr=1e-4   # trailing\n"
        "\n"
        "name = run one\n"
        "flag = true\n"
        "amps = 0.3, 0.9,0.1\n"
        "big = 18446744073709551615\n");
    CHECK(c.get_int("steps", 0) == 3000);
    CHECK(c.get_double("lr", 0.0) == 1e-4);
    CHECK(c.get_string("name", "") == "run one");
    CHECK(c.get_bool("flag", false));
    CHECK(c.get_doubles("amps", {}) == std::vector<double>{0.3, 0.9, 0.1});
    CHECK(c.get_u64("big", 0) == 18446744073709551615ull);
    CHECK(c.get_int("absent", 7) == 7);
    CHECK(c.unused_keys().empty());

    const Config d = Config::parse("a=1\nb=2\n");
    d.get_int("a", 0);
    CHECK(d.unused_keys() == std::vector<std::string>{"b"});

    CHECK_THROWS_AS(Config::parse("a=1\na=2\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse("just words\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse("steps=abc\n").get_int("steps", 0), ConfigError);
    CHECK_THROWS_AS(Config::parse("x=1.5\n").get_int("x", 0), ConfigError);
    CHECK_THROWS_AS(Config::parse("x=-1\n").get_u64("x", 0), ConfigError);
    CHECK_THROWS_AS(Config::parse("x=maybe\n").get_bool("x", false), ConfigError);
    CHECK_THROWS_AS(Config::parse("x=nan\n").get_double("x", 0.0), ConfigError);
}

TEST_CASE("serialized configs parse back to the same values") {
    const std::map<std::string, std::string> v{{"b", "2"}, {"a", "x y"}, {"c", "0.1"}};
    const std::string text = serialize_config(v);
    CHECK(Config::parse(text).values() == v);
    CHECK(serialize_config(Config::parse(text).values()) == text);
}

TEST_CASE("digests") {
    // FNV-1a 64 reference values.
    CHECK(bytes_digest({}) == "cbf29ce484222325");
    CHECK(bytes_digest({'a'}) == "af63dc4c8601ec8c");
    TempDir dir;
    write_text(dir / "f", "a");
    CHECK(file_digest(dir / "f") == "af63dc4c8601ec8c");
}
