#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ksim/io.hpp"
#include "support.hpp"

using namespace ksim;
using namespace ksim::testing;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("ksim_io_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::filesystem::path operator/(const char* name) const { return path / name; }
};

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("FSKE layout is little-endian with a 24-byte header") {
    TempDir dir;
    write_matrix_file(dir / "m.fske", Matrix{{1.0, -2.0}, {0.5, 3.0}, {0.0, 1e-3}});
    const auto b = slurp(dir / "m.fske");
    REQUIRE(b.size() == 24 + 6 * 4);
    CHECK(std::memcmp(b.data(), "FSKE", 4) == 0);
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    CHECK(b[8] == 3);
    CHECK(b[16] == 2);
    float first;
    std::memcpy(&first, b.data() + 24, 4);
    CHECK(first == 1.0f);
    // -2.0f = 0xC0000000
    CHECK(b[28] == 0x00);
    CHECK(b[31] == 0xC0);
}

TEST_CASE("round trips are exact at float32 precision") {
    TempDir dir;
    std::mt19937_64 rng(1);
    Matrix m = random_matrix(rng, 17, 5);
    for (double& v : m.values()) v = static_cast<float>(v);
    write_matrix_file(dir / "m.fske", m);
    CHECK(read_matrix_file(dir / "m.fske") == m);
    const auto first = slurp(dir / "m.fske");
    write_matrix_file(dir / "again.fske", read_matrix_file(dir / "m.fske"));
    CHECK(slurp(dir / "again.fske") == first);

    const LabelFile labels{{0, 3, 2, 9, 9}, 10};
    write_label_file(dir / "l.fskl", labels);
    const auto lb = slurp(dir / "l.fskl");
    CHECK(lb.size() == 20 + 10);
    const LabelFile back = read_label_file(dir / "l.fskl");
    CHECK(back.labels == labels.labels);
    CHECK(back.num_classes == 10);

    write_matrix_file(dir / "empty.fske", Matrix(0, 4));
    CHECK(read_matrix_file(dir / "empty.fske").rows() == 0);
}

TEST_CASE("embeddings are normalized on load and checked for alignment") {
    TempDir dir;
    write_matrix_file(dir / "e.fske", Matrix{{3, 4}, {0, 1}, {5, 0}});
    const EmbeddingStore s = load_embeddings(dir / "e.fske");
    CHECK(s.embeddings(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(s.embeddings(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(s.embeddings(1, 1) == 1.0);
    CHECK(s.embeddings(2, 0) == 1.0);
    CHECK(s.source == EmbeddingSource::file);
    CHECK_THROWS_AS(load_embeddings(dir / "e.fske", 4), AlignmentError);
    write_matrix_file(dir / "z.fske", Matrix{{0, 0}, {1, 0}});
    const EmbeddingStore z = load_embeddings(dir / "z.fske");
    CHECK(z.zero_rows == std::vector<std::uint8_t>{1, 0});
    CHECK(z.embeddings(0, 0) == 0.0);
}

TEST_CASE("malformed files are rejected") {
    TempDir dir;
    write_matrix_file(dir / "m.fske", Matrix{{1, 2}, {3, 4}});
    write_label_file(dir / "l.fskl", {{0, 1}, 2});
    const auto m = slurp(dir / "m.fske");
    const auto l = slurp(dir / "l.fskl");

    auto variant = [&](const char* name, std::vector<unsigned char> bytes) {
        spit(dir / name, bytes);
        return dir / name;
    };
    auto bad_magic = m;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(read_matrix_file(variant("magic.fske", bad_magic)), FormatError);
    CHECK_THROWS_AS(read_label_file(variant("swapped.fskl", m)), FormatError);
    auto version = m;
    version[4] = 2;
    CHECK_THROWS_AS(read_matrix_file(variant("version.fske", version)), FormatError);
    CHECK_THROWS_AS(read_matrix_file(variant("trunc.fske", {m.begin(), m.end() - 1})), FormatError);
    CHECK_THROWS_AS(read_matrix_file(variant("header.fske", {m.begin(), m.begin() + 10})), FormatError);
    auto trailing = m;
    trailing.push_back(0);
    CHECK_THROWS_AS(read_matrix_file(variant("trail.fske", trailing)), FormatError);
    auto huge = m;
    for (int i = 8; i < 24; ++i) huge[i] = 0xff;
    CHECK_THROWS_AS(read_matrix_file(variant("huge.fske", huge)), FormatError);
    auto nan = m;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + 28, &q, 4);
    CHECK_THROWS_AS(read_matrix_file(variant("nan.fske", nan)), FormatError);
    auto inf = m;
    const float i = std::numeric_limits<float>::infinity();
    std::memcpy(inf.data() + 24, &i, 4);
    CHECK_THROWS_AS(read_matrix_file(variant("inf.fske", inf)), FormatError);

    auto out_of_range = l;
    out_of_range[20] = 2;
    CHECK_THROWS_AS(read_label_file(variant("range.fskl", out_of_range)), FormatError);
    CHECK_THROWS_AS(read_label_file(variant("ltrunc.fskl", {l.begin(), l.end() - 1})), FormatError);
    CHECK_THROWS_AS(read_matrix_file(dir / "missing.fske"), IoError);
}

TEST_CASE("datasets load with optional observed labels") {
    TempDir dir;
    write_matrix_file(dir / "x.fske", Matrix{{1}, {2}, {3}});
    write_label_file(dir / "y.fskl", {{0, 1, 2}, 3});
    write_label_file(dir / "noisy.fskl", {{0, 2, 2}, 3});
    write_label_file(dir / "short.fskl", {{0, 1}, 3});
    write_label_file(dir / "wide.fskl", {{0, 1, 2}, 4});

    const Dataset clean = load_dataset(dir / "x.fske", dir / "y.fskl", std::nullopt, Split::train);
    CHECK(clean.noisy_labels == clean.clean_labels);
    const Dataset noisy = load_dataset(dir / "x.fske", dir / "y.fskl", dir / "noisy.fskl", Split::train);
    CHECK(noisy.noise_mask == std::vector<std::uint8_t>{0, 1, 0});
    CHECK_THROWS_AS(load_dataset(dir / "x.fske", dir / "short.fskl", std::nullopt, Split::train), AlignmentError);
    CHECK_THROWS_AS(load_dataset(dir / "x.fske", dir / "y.fskl", dir / "short.fskl", Split::train), AlignmentError);
    CHECK_THROWS_AS(load_dataset(dir / "x.fske", dir / "y.fskl", dir / "wide.fskl", Split::train), FormatError);
    CHECK_THROWS(load_dataset(dir / "x.fske", dir / "y.fskl", dir / "noisy.fskl", Split::test));
}
